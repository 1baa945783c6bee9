#include <doctest.h>

#include <cmath>

#include "tvoc/error.hpp"
#include "tvoc/longitudinal.hpp"
#include "tvoc/rng.hpp"

using namespace tvoc;

namespace {

ClusterMap line_map(const std::vector<int>& labels, int k, int stride = 1) {
    ClusterMap m;
    m.k = k;
    m.sequence_id = "t1w";
    m.stride = stride;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        m.positions.push_back({int(i) * stride, 0, 0});
        m.labels.push_back(labels[i]);
    }
    return m;
}

TransitionMatrix from_counts(int k, const std::vector<double>& counts) {
    TransitionMatrix m;
    m.k = k;
    m.counts = counts;
    m.probs.assign(counts.size(), 0.0);
    for (int i = 0; i < k; ++i) {
        const double t = m.row_total(i);
        if (t > 0)
            for (int j = 0; j < k; ++j) m.probs[std::size_t(i * k + j)] = m.count(i, j) / t;
    }
    return m;
}

}  // namespace

TEST_CASE("hand-counted transitions for K = 2") {
    const ClusterMap t0 = line_map({0, 0, 1}, 2), t1 = line_map({1, 0, 1}, 2);
    const TransitionMatrix m = transition_matrix(t0, t1, RigidTransform::identity());
    CHECK(m.counts == std::vector<double>{1, 1, 0, 1});
    CHECK(m.probs == std::vector<double>{0.5, 0.5, 0.0, 1.0});
    CHECK(m.matched == 3);
    CHECK(m.dropped == 0);
}

TEST_CASE("identical maps under the identity transform give the identity matrix") {
    Rng rng(2);
    std::vector<int> labels(200);
    for (int& l : labels) l = int(rng.below(5));
    for (int c = 0; c < 5; ++c) labels[std::size_t(c)] = c;
    const ClusterMap m = line_map(labels, 5, 4);
    const TransitionMatrix t = transition_matrix(m, m, RigidTransform::identity());
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(t.prob(i, j) == (i == j ? 1.0 : 0.0));
}

TEST_CASE("positions are matched through the transform and dropped beyond one stride") {
    const ClusterMap t0 = line_map({0, 1, 1, 0}, 2, 2);
    const ClusterMap t1 = line_map({1, 0, 0, 1}, 2, 2);
    RigidTransform shift;
    shift.translation = {2.0, 0.0, 0.0};  // every baseline position lands on the next follow-up position
    const TransitionMatrix m = transition_matrix(t0, t1, shift);
    CHECK(m.matched == 4);  // the last one maps to x = 8, within one stride of x = 6
    CHECK(m.count(0, 0) == 1);
    CHECK(m.count(1, 0) == 1);
    CHECK(m.count(1, 1) == 1);
    CHECK(m.count(0, 1) == 1);
    shift.translation = {50.0, 0.0, 0.0};
    const TransitionMatrix far = transition_matrix(t0, t1, shift);
    CHECK(far.matched == 0);
    CHECK(far.dropped == 4);
}

TEST_CASE("maps from different codebooks are rejected") {
    ClusterMap a = line_map({0, 1}, 2), b = line_map({0, 1}, 3);
    try {
        transition_matrix(a, b, RigidTransform::identity());
        FAIL("expected CodebookMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::CodebookMismatch);
    }
    b = line_map({0, 1}, 2);
    b.sequence_id = "dixon";
    CHECK_THROWS_AS(transition_matrix(a, b, RigidTransform::identity()), Error);
}

TEST_CASE("transition comparison is symmetric and skips empty rows") {
    std::vector<TransitionMatrix> a, b;
    Rng rng(5);
    for (int s = 0; s < 6; ++s) {
        a.push_back(from_counts(2, {double(5 + rng.below(5)), double(rng.below(3)), 0, 0}));
        b.push_back(from_counts(2, {double(rng.below(3)), double(5 + rng.below(5)), 0, 0}));
    }
    const TransitionComparison ab = compare_transitions(a, b, 1000, 3);
    const TransitionComparison ba = compare_transitions(b, a, 1000, 3);
    REQUIRE(ab.cells.size() == 4);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(ab.cells[c].test.p == ba.cells[c].test.p);
        CHECK(ab.cells[c].test.p_corrected == ba.cells[c].test.p_corrected);
    }
    CHECK(ab.cells[0].test.p_corrected.value() == std::min(1.0, 4.0 * ab.cells[0].test.p));
    CHECK(ab.cells[0].mean_a > ab.cells[0].mean_b);
    CHECK(ab.cells[2].test.method == "skipped");
    CHECK(ab.cells[2].test.p == 1.0);
    CHECK(std::isnan(ab.cells[2].mean_a));
}

TEST_CASE("difference signatures subtract baseline from follow-up") {
    Signature b, f;
    b.values = {0.5, 0.5};
    f.values = {0.25, 0.75};
    b.layout = f.layout = {{"t1w", 2}};
    const DifferenceSignature d = difference_signature(b, f);
    CHECK(d.values == std::vector<double>{-0.25, 0.25});
    f.layout = {{"dixon", 2}};
    try {
        difference_signature(b, f);
        FAIL("expected LayoutMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::LayoutMismatch);
    }
}

TEST_CASE("response analysis predicts out of fold and separates a strong dose effect") {
    std::vector<DifferenceSignature> diffs;
    Rng rng(8);
    for (int arm = 0; arm < 3; ++arm)
        for (int s = 0; s < 12; ++s) {
            DifferenceSignature d;
            d.subject_id = "s" + std::to_string(arm) + "_" + std::to_string(s < 10 ? 0 : 1) + std::to_string(s % 10);
            d.arm = arm;
            d.values = {-0.1 * arm + 0.02 * rng.normal(), 0.1 * arm + 0.02 * rng.normal(), 0.02 * rng.normal()};
            diffs.push_back(d);
        }
    ResponseConfig cfg;
    cfg.forest.n_trees = 100;
    const ResponseResult r = response_analysis(diffs, cfg);
    CHECK(r.audit_passed);
    CHECK(std::is_sorted(r.subjects.begin(), r.subjects.end()));
    REQUIRE(r.pairs.size() == 3);
    CHECK(r.pair_names[1] == "0 vs 2");
    CHECK(r.pairs[1].p_corrected.value() < 0.01);
    CHECK(r.pairs[1].p_corrected.value() == std::min(1.0, 3.0 * r.pairs[1].p));
    const ResponseResult again = response_analysis(diffs, cfg);
    CHECK(again.predicted == r.predicted);
}

TEST_CASE("grade prediction on separable signatures is accurate") {
    Matrix x(60, 3);
    std::vector<std::int64_t> grades(60);
    Rng rng(9);
    for (std::size_t i = 0; i < 60; ++i) {
        grades[i] = std::int64_t(i % 4);
        x(i, 0) = 0.2 * double(grades[i]) + 0.02 * rng.normal();
        x(i, 1) = rng.uniform();
        x(i, 2) = 1.0 - x(i, 0);
    }
    GradeConfig cfg;
    cfg.forest.n_trees = 100;
    const GradeResult g = grade_prediction(x, grades, cfg);
    CHECK(g.truth[2] == 1);
    CHECK(g.truth[1] == 0);
    CHECK(g.metrics.accuracy >= 0.95);
}

TEST_CASE("phenotypes: blobs recovered, labels ordered by size, singletons allowed") {
    Matrix x(21, 2);
    Rng rng(10);
    const int sizes[3] = {4, 10, 7};
    std::vector<int> truth;
    std::size_t row = 0;
    for (int g = 0; g < 3; ++g)
        for (int s = 0; s < sizes[g]; ++s, ++row) {
            x(row, 0) = 10.0 * g + 0.1 * rng.normal();
            x(row, 1) = 0.1 * rng.normal();
            truth.push_back(g);
        }
    const PhenotypeAssignment a = discover_phenotypes(x, 3);
    CHECK(adjusted_rand_index(a.labels, truth) == 1.0);
    CHECK(a.labels[4] == 1);   // the 10-member group
    CHECK(a.labels[14] == 2);  // then the 7-member group
    CHECK(a.labels[0] == 3);

    Matrix y(5, 1);
    y.data = {0.0, 0.1, 0.2, 0.3, 100.0};
    const PhenotypeAssignment s = discover_phenotypes(y, 2);
    CHECK(s.labels == std::vector<int>{1, 1, 1, 1, 2});
}

TEST_CASE("a phenotype that is exactly one grade is flagged as over-represented") {
    PhenotypeAssignment a;
    a.p = 2;
    std::vector<std::optional<std::int64_t>> grades;
    for (int i = 0; i < 20; ++i) {
        a.labels.push_back(i < 10 ? 1 : 2);
        grades.push_back(i < 10 ? 3 : 0);
    }
    grades.push_back(std::nullopt);
    a.labels.push_back(1);
    const auto rows = phenotype_associations(a, grades);
    REQUIRE(rows.size() == 4);  // 2 phenotypes x grades {0, 3}
    const Association& hit = rows[1];
    CHECK(hit.phenotype == 1);
    CHECK(hit.grade == 3);
    CHECK(hit.table == Table2x2{{{10, 0}, {0, 10}}});
    CHECK(hit.result.corrected);
    CHECK(hit.flag == 1);
    CHECK(rows[0].flag == -1);
}
