#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tvoc/learners.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/signature.hpp"
#include "tvoc/stats.hpp"
#include "tvoc/table.hpp"

namespace tvoc {

struct DifferenceSignature {
    std::vector<double> values;
    std::vector<SignatureSpan> layout;
    std::string subject_id;
    double arm = 0.0;
};

/// followup - baseline, elementwise.
DifferenceSignature difference_signature(const Signature& baseline, const Signature& followup);

struct TransitionMatrix {
    int k = 0;
    std::vector<double> counts;  // k x k, row = baseline label
    std::vector<double> probs;   // row-normalized counts; all-zero rows stay zero
    std::string sequence_id;
    std::string group;
    std::size_t matched = 0;
    std::size_t dropped = 0;

    double count(int i, int j) const { return counts[std::size_t(i) * k + j]; }
    double prob(int i, int j) const { return probs[std::size_t(i) * k + j]; }
    double row_total(int i) const;
};

/// For each baseline position, the follow-up label at the nearest follow-up position
/// within one stride (voxel units) of t0_to_t1 applied to it; positions without such a
/// neighbor are dropped. Ties go to the earliest follow-up position.
TransitionMatrix transition_matrix(const ClusterMap& t0, const ClusterMap& t1, const RigidTransform& t0_to_t1);

struct CellComparison {
    int i = 0;
    int j = 0;
    double mean_a = 0.0;       // mean per-subject transition frequency
    double mean_b = 0.0;
    double pooled_a = 0.0;     // pooled position-level frequency
    double pooled_b = 0.0;
    double incidence_a = 0.0;  // fraction of subjects with at least one i -> j transition
    double incidence_b = 0.0;
    TestResult test;
};

struct TransitionComparison {
    int k = 0;
    std::vector<CellComparison> cells;  // row-major over (i, j)
};

/// Per-cell permutation tests on per-subject frequencies M_ij. Subjects with no
/// baseline positions of class i do not enter row i. Bonferroni over K^2 cells on request.
TransitionComparison compare_transitions(std::span<const TransitionMatrix> group_a,
                                         std::span<const TransitionMatrix> group_b, std::size_t n_perm,
                                         std::uint64_t seed, bool bonferroni_cells = true);

Table transition_table(const std::string& sequence_id, const TransitionComparison& c);

struct ResponseConfig {
    int folds = 5;
    ForestConfig forest;
    std::uint64_t seed = 1;
};

struct ResponseResult {
    std::vector<std::string> subjects;  // sorted by subject id
    std::vector<double> arms;
    std::vector<double> predicted;      // out-of-fold predictions
    std::vector<int> fold;
    std::vector<std::string> pair_names;
    std::vector<TestResult> pairs;      // with p_corrected, m = number of pairs
    bool audit_passed = false;          // no prediction came from a model that saw its subject
};

/// Out-of-fold random-forest regression of arm dose on difference signatures, then
/// Welch t-tests between the predictions of every pair of arms.
ResponseResult response_analysis(std::span<const DifferenceSignature> diffs, const ResponseConfig& cfg);
Table response_table(const ResponseResult& r);

struct GradeConfig {
    int folds = 5;
    std::int64_t low_grade_max = 1;
    ForestConfig forest;
    std::uint64_t seed = 1;
};

struct GradeResult {
    std::vector<int> truth;      // 1 = high grade
    std::vector<int> predicted;
    std::vector<double> p_high;  // out-of-fold probability of high grade
    ClassificationMetrics metrics;
};

/// Binary low (<= low_grade_max) vs high prediction from signatures under stratified k-fold CV.
GradeResult grade_prediction(const Matrix& signatures, std::span<const std::int64_t> grades, const GradeConfig& cfg);

struct PhenotypeAssignment {
    std::vector<int> labels;  // 1..P, 1 = largest group
    int p = 0;
    Dendrogram dendrogram;
};

/// Average-linkage clustering cut at P; labels ordered by group size (ties: smallest member first).
PhenotypeAssignment discover_phenotypes(const Matrix& signatures, int p);

struct Association {
    int phenotype = 0;
    std::int64_t grade = 0;
    Table2x2 table{};  // [[in & at grade, in & other], [out & at grade, out & other]]
    OddsRatio result;
    int flag = 0;      // +1 over-, -1 under-represented at p < alpha, else 0
};

/// One-vs-rest 2x2 tables for every (phenotype, grade level) pair. Subjects without a grade are skipped.
std::vector<Association> phenotype_associations(const PhenotypeAssignment& a,
                                                std::span<const std::optional<std::int64_t>> grades,
                                                double alpha = 0.05);
Table association_table(const std::string& grade_name, const std::vector<Association>& rows);

}  // namespace tvoc
