#include "tvoc/longitudinal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "tvoc/error.hpp"
#include "tvoc/rng.hpp"

namespace tvoc {

DifferenceSignature difference_signature(const Signature& baseline, const Signature& followup) {
    bool same = baseline.layout.size() == followup.layout.size() && baseline.values.size() == followup.values.size();
    for (std::size_t i = 0; same && i < baseline.layout.size(); ++i)
        same = baseline.layout[i].sequence_id == followup.layout[i].sequence_id &&
               baseline.layout[i].k == followup.layout[i].k;
    if (!same) fail(Errc::LayoutMismatch, "baseline and follow-up signatures have different layouts");
    DifferenceSignature d;
    d.layout = baseline.layout;
    d.values.resize(baseline.values.size());
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = followup.values[i] - baseline.values[i];
    return d;
}

double TransitionMatrix::row_total(int i) const {
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += count(i, j);
    return s;
}

namespace {

std::uint64_t cell_key(std::int64_t x, std::int64_t y, std::int64_t z) {
    constexpr std::int64_t off = 1 << 20;
    return (std::uint64_t(x + off) << 42) | (std::uint64_t(y + off) << 21) | std::uint64_t(z + off);
}

}  // namespace

TransitionMatrix transition_matrix(const ClusterMap& t0, const ClusterMap& t1, const RigidTransform& t0_to_t1) {
    if (t0.k != t1.k || t0.sequence_id != t1.sequence_id)
        fail(Errc::CodebookMismatch, "cluster maps come from different codebooks");
    if (t0.positions.size() != t0.labels.size() || t1.positions.size() != t1.labels.size())
        fail(Errc::ShapeMismatch, "cluster map positions and labels differ in length");
    TransitionMatrix m;
    m.k = t0.k;
    m.sequence_id = t0.sequence_id;
    m.counts.assign(std::size_t(m.k) * m.k, 0.0);
    m.probs.assign(m.counts.size(), 0.0);

    const double radius = double(std::max(1, t1.stride));
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
    auto cell = [&](double v) { return std::int64_t(std::floor(v / radius)); };
    for (std::size_t i = 0; i < t1.positions.size(); ++i) {
        const Voxel& p = t1.positions[i];
        grid[cell_key(cell(p.x), cell(p.y), cell(p.z))].push_back(std::uint32_t(i));
    }

    for (std::size_t i = 0; i < t0.positions.size(); ++i) {
        const Voxel& p = t0.positions[i];
        const Vec3 q = t0_to_t1.apply({p.x * double(t0.spacing.sx), p.y * double(t0.spacing.sy), p.z * double(t0.spacing.sz)});
        const double v[3] = {q[0] / t1.spacing.sx, q[1] / t1.spacing.sy, q[2] / t1.spacing.sz};
        const std::int64_t c[3] = {cell(v[0]), cell(v[1]), cell(v[2])};
        double best = radius * radius * (1.0 + 1e-12);
        std::int64_t match = -1;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const auto it = grid.find(cell_key(c[0] + dx, c[1] + dy, c[2] + dz));
                    if (it == grid.end()) continue;
                    for (std::uint32_t j : it->second) {
                        const Voxel& r = t1.positions[j];
                        const double ex = r.x - v[0], ey = r.y - v[1], ez = r.z - v[2];
                        const double d2 = ex * ex + ey * ey + ez * ez;
                        if (d2 < best || (d2 == best && match >= 0 && std::int64_t(j) < match)) {
                            best = d2;
                            match = j;
                        }
                    }
                }
        if (match < 0) {
            ++m.dropped;
            continue;
        }
        m.counts[std::size_t(t0.labels[i]) * m.k + std::size_t(t1.labels[std::size_t(match)])] += 1.0;
        ++m.matched;
    }
    for (int r = 0; r < m.k; ++r) {
        const double total = m.row_total(r);
        if (total > 0.0)
            for (int c = 0; c < m.k; ++c) m.probs[std::size_t(r) * m.k + c] = m.count(r, c) / total;
    }
    return m;
}

TransitionComparison compare_transitions(std::span<const TransitionMatrix> group_a,
                                         std::span<const TransitionMatrix> group_b, std::size_t n_perm,
                                         std::uint64_t seed, bool bonferroni_cells) {
    if (group_a.empty() || group_b.empty()) fail(Errc::EmptyGroup, "both groups need at least one subject");
    const int k = group_a.front().k;
    for (auto g : {group_a, group_b})
        for (const TransitionMatrix& m : g)
            if (m.k != k) fail(Errc::CodebookMismatch, "transition matrices differ in K");

    TransitionComparison out;
    out.k = k;
    out.cells.resize(std::size_t(k) * k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            CellComparison& c = out.cells[std::size_t(i) * k + j];
            c.i = i;
            c.j = j;
            auto collect = [&](std::span<const TransitionMatrix> g, double& mean, double& pooled, double& incidence) {
                std::vector<double> v;
                double num = 0.0, den = 0.0, hit = 0.0;
                for (const TransitionMatrix& m : g) {
                    if (m.count(i, j) > 0.0) hit += 1.0;
                    const double rt = m.row_total(i);
                    num += m.count(i, j);
                    den += rt;
                    if (rt > 0.0) v.push_back(m.prob(i, j));
                }
                mean = v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
                pooled = den > 0.0 ? num / den : std::nan("");
                incidence = hit / double(g.size());
                return v;
            };
            const std::vector<double> a = collect(group_a, c.mean_a, c.pooled_a, c.incidence_a);
            const std::vector<double> b = collect(group_b, c.mean_b, c.pooled_b, c.incidence_b);
            if (a.empty() || b.empty()) {
                c.test.p = 1.0;
                c.test.statistic = std::nan("");
                c.test.n_a = a.size();
                c.test.n_b = b.size();
                c.test.method = "skipped";
            } else {
                c.test = permutation_test(a, b, n_perm, substream(seed, "transition-cell", std::uint64_t(i * k + j)));
            }
            if (bonferroni_cells) c.test.p_corrected = std::min(1.0, c.test.p * double(k) * double(k));
        }
    return out;
}

Table transition_table(const std::string& sequence_id, const TransitionComparison& c) {
    Table t;
    t.header = {"seq",         "i",           "j", "prob_a", "prob_b", "pooled_a", "pooled_b",
                "incidence_a", "incidence_b", "p", "p_corr", "n_a",    "n_b"};
    for (const CellComparison& cell : c.cells)
        t.add_row({sequence_id, std::to_string(cell.i), std::to_string(cell.j), format_number(cell.mean_a),
                   format_number(cell.mean_b), format_number(cell.pooled_a), format_number(cell.pooled_b),
                   format_number(cell.incidence_a), format_number(cell.incidence_b), format_number(cell.test.p),
                   cell.test.p_corrected ? format_number(*cell.test.p_corrected) : "", std::to_string(cell.test.n_a),
                   std::to_string(cell.test.n_b)});
    return t;
}

ResponseResult response_analysis(std::span<const DifferenceSignature> diffs, const ResponseConfig& cfg) {
    if (diffs.size() < 2) fail(Errc::TooFewSamples, "response analysis needs at least two subjects");
    std::vector<std::size_t> order(diffs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return diffs[a].subject_id < diffs[b].subject_id; });
    const std::size_t n = diffs.size(), d = diffs.front().values.size();

    ResponseResult r;
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const DifferenceSignature& s = diffs[order[i]];
        if (s.values.size() != d) fail(Errc::LayoutMismatch, "difference signatures differ in length");
        std::copy(s.values.begin(), s.values.end(), x.row(i));
        r.subjects.push_back(s.subject_id);
        r.arms.push_back(s.arm);
    }
    r.fold = stratified_kfold(r.arms, cfg.folds, cfg.seed);
    r.predicted.assign(n, std::nan(""));
    r.audit_passed = true;
    for (int f = 0; f < cfg.folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < n; ++i) (r.fold[i] == f ? test : train).push_back(i);
        if (test.empty()) continue;
        if (train.size() < 2) fail(Errc::TooFewSamples, "a training fold has fewer than two subjects");
        std::vector<double> y;
        for (std::size_t i : train) y.push_back(r.arms[i]);
        const Forest forest = rf_fit(select_rows(x, train), y, Task::Regression, cfg.forest,
                                     substream(cfg.seed, "response-fold", std::uint64_t(f)));
        const std::vector<double> pred = rf_predict(forest, select_rows(x, test));
        for (std::size_t t = 0; t < test.size(); ++t) {
            if (std::find(train.begin(), train.end(), test[t]) != train.end()) r.audit_passed = false;
            r.predicted[test[t]] = pred[t];
        }
    }
    for (double p : r.predicted)
        if (std::isnan(p)) r.audit_passed = false;

    std::map<double, std::vector<double>> by_arm;
    for (std::size_t i = 0; i < n; ++i) by_arm[r.arms[i]].push_back(r.predicted[i]);
    std::vector<double> ps;
    for (auto a = by_arm.begin(); a != by_arm.end(); ++a)
        for (auto b = std::next(a); b != by_arm.end(); ++b) {
            r.pair_names.push_back(format_number(a->first) + " vs " + format_number(b->first));
            r.pairs.push_back(t_test(a->second, b->second));
            ps.push_back(r.pairs.back().p);
        }
    const std::vector<double> corrected = bonferroni(ps, std::max<std::size_t>(1, ps.size()));
    for (std::size_t i = 0; i < r.pairs.size(); ++i) r.pairs[i].p_corrected = corrected[i];
    return r;
}

Table response_table(const ResponseResult& r) {
    Table t;
    t.header = {"subject", "arm", "fold", "predicted"};
    for (std::size_t i = 0; i < r.subjects.size(); ++i)
        t.add_row({r.subjects[i], format_number(r.arms[i]), std::to_string(r.fold[i]), format_number(r.predicted[i])});
    return t;
}

GradeResult grade_prediction(const Matrix& signatures, std::span<const std::int64_t> grades, const GradeConfig& cfg) {
    if (signatures.rows != grades.size()) fail(Errc::ShapeMismatch, "one grade per signature required");
    GradeResult g;
    std::vector<double> y(grades.size());
    for (std::size_t i = 0; i < grades.size(); ++i) {
        g.truth.push_back(grades[i] > cfg.low_grade_max ? 1 : 0);
        y[i] = g.truth.back();
    }
    const std::vector<int> fold = stratified_kfold(y, cfg.folds, cfg.seed);
    g.predicted.assign(y.size(), 0);
    g.p_high.assign(y.size(), 0.0);
    for (int f = 0; f < cfg.folds; ++f) {
        std::vector<std::size_t> train, test;
        for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? test : train).push_back(i);
        if (test.empty()) continue;
        std::vector<double> yt;
        for (std::size_t i : train) yt.push_back(y[i]);
        const bool single = std::all_of(yt.begin(), yt.end(), [&](double v) { return v == yt.front(); });
        if (train.empty() || single) {
            const double v = train.empty() ? 0.0 : yt.front();
            for (std::size_t i : test) {
                g.p_high[i] = v;
                g.predicted[i] = int(v);
            }
            continue;
        }
        const Forest forest = rf_fit(select_rows(signatures, train), yt, Task::Classification, cfg.forest,
                                     substream(cfg.seed, "grade-fold", std::uint64_t(f)));
        const Matrix proba = rf_predict_proba(forest, select_rows(signatures, test));
        for (std::size_t t = 0; t < test.size(); ++t) {
            g.p_high[test[t]] = proba(t, 1);
            g.predicted[test[t]] = proba(t, 1) > proba(t, 0) ? 1 : 0;
        }
    }
    g.metrics = classification_metrics(g.truth, g.predicted);
    return g;
}

PhenotypeAssignment discover_phenotypes(const Matrix& signatures, int p) {
    PhenotypeAssignment a;
    a.p = p;
    a.dendrogram = agglomerate(signatures);
    const std::vector<int> raw = cut_dendrogram(a.dendrogram, p);
    std::vector<std::size_t> size(std::size_t(p), 0);
    for (int l : raw) ++size[std::size_t(l)];
    // cut_dendrogram numbers groups by first member, so a stable sort keeps that as the tie-break.
    std::vector<int> rank(static_cast<std::size_t>(p));
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](int x, int y) { return size[std::size_t(x)] > size[std::size_t(y)]; });
    std::vector<int> relabel(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) relabel[std::size_t(rank[std::size_t(i)])] = i + 1;
    for (int l : raw) a.labels.push_back(relabel[std::size_t(l)]);
    return a;
}

std::vector<Association> phenotype_associations(const PhenotypeAssignment& a,
                                                std::span<const std::optional<std::int64_t>> grades, double alpha) {
    if (grades.size() != a.labels.size()) fail(Errc::ShapeMismatch, "one grade entry per subject required");
    std::vector<std::int64_t> levels;
    for (const auto& g : grades)
        if (g) levels.push_back(*g);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::vector<Association> out;
    for (int ph = 1; ph <= a.p; ++ph)
        for (std::int64_t lv : levels) {
            Association row;
            row.phenotype = ph;
            row.grade = lv;
            for (std::size_t i = 0; i < grades.size(); ++i) {
                if (!grades[i]) continue;
                const int r = a.labels[i] == ph ? 0 : 1;
                const int c = *grades[i] == lv ? 0 : 1;
                ++row.table[r][c];
            }
            row.result = odds_ratio(row.table);
            if (row.result.p < alpha) row.flag = row.result.odds_ratio > 1.0 ? 1 : (row.result.odds_ratio < 1.0 ? -1 : 0);
            out.push_back(row);
        }
    return out;
}

Table association_table(const std::string& grade_name, const std::vector<Association>& rows) {
    Table t;
    t.header = {"label", "phenotype", "grade", "a", "b", "c", "d", "odds_ratio", "p", "corrected", "flag"};
    for (const Association& r : rows)
        t.add_row({grade_name, std::to_string(r.phenotype), std::to_string(r.grade), std::to_string(r.table[0][0]),
                   std::to_string(r.table[0][1]), std::to_string(r.table[1][0]), std::to_string(r.table[1][1]),
                   format_number(r.result.odds_ratio), format_number(r.result.p), r.result.corrected ? "1" : "0",
                   r.flag > 0 ? "over" : (r.flag < 0 ? "under" : "")});
    return t;
}

}  // namespace tvoc
