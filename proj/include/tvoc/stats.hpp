#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvoc/table.hpp"

namespace tvoc {

struct TestResult {
    double statistic = 0.0;
    double p = 1.0;
    std::optional<double> p_corrected;
    std::size_t n_a = 0;
    std::size_t n_b = 0;
    std::string method;
};

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);
/// Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees of freedom.
double student_t_two_sided(double t, double df);

/// Welch two-sample t-test, two-sided.
TestResult t_test(std::span<const double> a, std::span<const double> b);

/// min(1, p * m) elementwise.
std::vector<double> bonferroni(std::span<const double> ps, std::size_t m);

/// Two-sided permutation test on the difference of means.
/// Random relabelings come from per-replicate seeded streams. When the number of
/// distinct splits does not exceed n_perm, all of them are enumerated and
/// p = #{|stat| >= |obs|} / #splits instead.
TestResult permutation_test(std::span<const double> a, std::span<const double> b, std::size_t n_perm,
                            std::uint64_t seed);

struct Correlation {
    double r = 0.0;
    double p = 1.0;
};
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// 2x2 table [[a, b], [c, d]].
using Table2x2 = std::array<std::array<std::int64_t, 2>, 2>;

struct OddsRatio {
    double odds_ratio = 1.0;
    double p = 1.0;
    bool corrected = false;  // +0.5 added to every cell because one was zero
};

/// OR = ad / bc (Haldane-Anscombe correction on zeros); p from Fisher's exact test.
OddsRatio odds_ratio(const Table2x2& t);
double fisher_exact(const Table2x2& t);

/// Gaussian kernel density with Silverman's rule-of-thumb bandwidth.
double silverman_bandwidth(std::span<const double> values);
std::vector<double> kernel_density(std::span<const double> values, std::span<const double> grid);

Table test_results_table(const std::vector<std::string>& names, const std::vector<TestResult>& results);

}  // namespace tvoc
