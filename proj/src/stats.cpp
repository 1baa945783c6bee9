#include "tvoc/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "tvoc/error.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/rng.hpp"

namespace tvoc {

namespace {

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_cf(double a, double b, double x) {
    constexpr double tiny = 1e-300;
    constexpr double eps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) return h;
    }
    fail(Errc::DidNotConverge, "incomplete beta continued fraction did not converge");
}

double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

double sample_variance(std::span<const double> v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / double(v.size() - 1);
}

double log_choose(std::int64_t n, std::int64_t k) {
    return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) - std::lgamma(double(n - k) + 1.0);
}

// Number of k-subsets of n, saturating at `cap`.
std::uint64_t choose_capped(std::size_t n, std::size_t k, std::uint64_t cap) {
    k = std::min(k, n - k);
    unsigned __int128 c = 1;
    for (std::size_t i = 1; i <= k; ++i) {
        c = c * (n - k + i) / i;
        if (c > cap) return cap + 1;
    }
    return std::uint64_t(c);
}

bool at_least_as_extreme(double stat, double obs) {
    const double tol = 1e-12 * std::max(1.0, std::abs(obs));
    return std::abs(stat) >= std::abs(obs) - tol;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0 && b > 0.0)) fail(Errc::InvalidArgument, "incomplete beta needs a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
    if (std::isnan(t)) return std::nan("");
    if (std::isinf(t)) return 0.0;
    return std::clamp(incomplete_beta(0.5 * df, 0.5, df / (df + t * t)), 0.0, 1.0);
}

TestResult t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) fail(Errc::TooFewSamples, "t-test needs at least two samples per group");
    const double ma = mean(a), mb = mean(b);
    const double va = sample_variance(a, ma) / double(a.size());
    const double vb = sample_variance(b, mb) / double(b.size());
    const double se2 = va + vb;
    if (!(se2 > 0.0)) fail(Errc::DegenerateVariance, "both groups have zero variance");
    TestResult r;
    r.n_a = a.size();
    r.n_b = b.size();
    r.method = "welch-t";
    r.statistic = (ma - mb) / std::sqrt(se2);
    const double df = se2 * se2 / (va * va / double(a.size() - 1) + vb * vb / double(b.size() - 1));
    r.p = student_t_two_sided(r.statistic, df);
    return r;
}

std::vector<double> bonferroni(std::span<const double> ps, std::size_t m) {
    if (m == 0) fail(Errc::InvalidArgument, "Bonferroni needs m >= 1");
    std::vector<double> out(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) out[i] = std::min(1.0, ps[i] * double(m));
    return out;
}

TestResult permutation_test(std::span<const double> a, std::span<const double> b, std::size_t n_perm,
                            std::uint64_t seed) {
    if (a.empty() || b.empty()) fail(Errc::EmptyGroup, "permutation test needs two nonempty groups");
    if (n_perm == 0) fail(Errc::InvalidArgument, "n_perm must be positive");
    TestResult r;
    r.n_a = a.size();
    r.n_b = b.size();
    r.statistic = mean(a) - mean(b);

    // Canonical form: the pooled values sorted, and the statistic measured as
    // mean(subset) - mean(rest) for subsets the size of the smaller group. Swapping
    // the groups leaves every number below unchanged.
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::sort(pooled.begin(), pooled.end());
    const std::size_t n = pooled.size();
    const bool a_small = a.size() <= b.size();
    std::vector<double> small(a_small ? a.begin() : b.begin(), a_small ? a.end() : b.end());
    std::sort(small.begin(), small.end());
    const std::size_t k = small.size();
    double total = 0.0;
    for (double v : pooled) total += v;
    auto stat_of = [&](double subset_sum) {
        return subset_sum / double(k) - (total - subset_sum) / double(n - k);
    };
    double obs_sum = 0.0;
    for (double v : small) obs_sum += v;
    const double obs = stat_of(obs_sum);

    const std::uint64_t splits = choose_capped(n, k, n_perm);
    if (splits <= n_perm) {
        r.method = "permutation-exact";
        std::vector<std::size_t> idx(k);
        std::iota(idx.begin(), idx.end(), 0);
        std::uint64_t hits = 0, count = 0;
        while (true) {
            double s = 0.0;
            for (std::size_t i : idx) s += pooled[i];
            if (at_least_as_extreme(stat_of(s), obs)) ++hits;
            ++count;
            std::size_t i = k;
            while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
        }
        r.p = double(hits) / double(count);
        return r;
    }
    if (n_perm < 100) fail(Errc::InvalidArgument, "n_perm must be at least 100 for a sampled permutation test");

    r.method = "permutation";
    const std::size_t block = 256;
    const std::size_t n_blocks = (n_perm + block - 1) / block;
    std::vector<std::uint64_t> hits(n_blocks, 0);
    parallel_for(n_blocks, [&](std::size_t bi) {
        std::vector<std::size_t> order(n);
        const std::size_t end = std::min(n_perm, (bi + 1) * block);
        for (std::size_t rep = bi * block; rep < end; ++rep) {
            Rng rng(seed, "permutation", rep);
            std::iota(order.begin(), order.end(), 0);
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t j = i + std::size_t(rng.below(n - i));
                std::swap(order[i], order[j]);
                s += pooled[order[i]];
            }
            if (at_least_as_extreme(stat_of(s), obs)) ++hits[bi];
        }
    });
    const std::uint64_t total_hits = std::accumulate(hits.begin(), hits.end(), std::uint64_t{0});
    r.p = double(1 + total_hits) / double(1 + n_perm);
    return r;
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) fail(Errc::ShapeMismatch, "pearson needs equal-length inputs");
    if (x.size() < 3) fail(Errc::TooFewSamples, "pearson needs at least three pairs");
    const double mx = mean(x), my = mean(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (!(sxx > 0.0 && syy > 0.0)) fail(Errc::DegenerateVariance, "pearson input has zero variance");
    Correlation c;
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = double(x.size() - 2);
    if (std::abs(c.r) >= 1.0) {
        c.p = 0.0;
    } else {
        const double t = c.r * std::sqrt(df / (1.0 - c.r * c.r));
        c.p = student_t_two_sided(t, df);
    }
    return c;
}

double fisher_exact(const Table2x2& t) {
    for (const auto& row : t)
        for (auto v : row)
            if (v < 0) fail(Errc::InvalidArgument, "negative count in 2x2 table");
    const std::int64_t r1 = t[0][0] + t[0][1], r2 = t[1][0] + t[1][1];
    const std::int64_t c1 = t[0][0] + t[1][0];
    const std::int64_t n = r1 + r2;
    if (n == 0) return 1.0;
    const double log_denom = log_choose(n, c1);
    auto prob = [&](std::int64_t x) { return std::exp(log_choose(r1, x) + log_choose(r2, c1 - x) - log_denom); };
    const double p_obs = prob(t[0][0]);
    double p = 0.0;
    for (std::int64_t x = std::max<std::int64_t>(0, c1 - r2); x <= std::min(r1, c1); ++x) {
        const double px = prob(x);
        if (px <= p_obs * (1.0 + 1e-7)) p += px;
    }
    return std::min(1.0, p);
}

OddsRatio odds_ratio(const Table2x2& t) {
    OddsRatio out;
    double a = double(t[0][0]), b = double(t[0][1]), c = double(t[1][0]), d = double(t[1][1]);
    if (t[0][0] == 0 || t[0][1] == 0 || t[1][0] == 0 || t[1][1] == 0) {
        a += 0.5;
        b += 0.5;
        c += 0.5;
        d += 0.5;
        out.corrected = true;
    }
    out.odds_ratio = (a * d) / (b * c);
    out.p = fisher_exact(t);
    return out;
}

double silverman_bandwidth(std::span<const double> values) {
    if (values.size() < 2) fail(Errc::TooFewSamples, "bandwidth needs at least two values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const double m = mean(v);
    const double sd = std::sqrt(sample_variance(v, m));
    auto quantile = [&](double q) {
        const double pos = q * double(v.size() - 1);
        const auto lo = std::size_t(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
    };
    const double iqr = quantile(0.75) - quantile(0.25);
    double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) spread = sd;
    if (!(spread > 0.0)) spread = 1.0;
    return 0.9 * spread * std::pow(double(v.size()), -0.2);
}

std::vector<double> kernel_density(std::span<const double> values, std::span<const double> grid) {
    const double h = silverman_bandwidth(values);
    const double norm = 1.0 / (double(values.size()) * h * std::sqrt(2.0 * std::numbers::pi));
    std::vector<double> out(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double s = 0.0;
        for (double v : values) {
            const double u = (grid[g] - v) / h;
            s += std::exp(-0.5 * u * u);
        }
        out[g] = s * norm;
    }
    return out;
}

Table test_results_table(const std::vector<std::string>& names, const std::vector<TestResult>& results) {
    Table t;
    t.header = {"comparison", "statistic", "p", "p_corr", "n_a", "n_b", "method"};
    for (std::size_t i = 0; i < results.size(); ++i) {
        const TestResult& r = results[i];
        t.add_row({names.at(i), format_number(r.statistic), format_number(r.p),
                   r.p_corrected ? format_number(*r.p_corrected) : "", std::to_string(r.n_a), std::to_string(r.n_b),
                   r.method});
    }
    return t;
}

}  // namespace tvoc
