#include <algorithm>
#include <cmath>
#include <map>

#include "tvoc/error.hpp"
#include "tvoc/learners.hpp"
#include "tvoc/rng.hpp"

namespace tvoc {

std::vector<int> stratified_kfold(std::span<const double> y, int k, std::uint64_t seed, int exclude_at_most) {
    if (k < 2) fail(Errc::InvalidArgument, "k-fold needs k >= 2");
    std::map<double, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < y.size(); ++i) members[y[i]].push_back(i);
    std::vector<int> fold(y.size(), -1);
    Rng rng(seed, "kfold");
    std::size_t counter = 0;
    for (auto& [label, idx] : members) {
        if (int(idx.size()) <= exclude_at_most) continue;
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t i : idx) fold[i] = int(counter++ % std::size_t(k));
    }
    return fold;
}

ClassificationMetrics classification_metrics(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size()) fail(Errc::ShapeMismatch, "label vectors differ in length");
    ClassificationMetrics m;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const bool t = y_true[i] == 1, p = y_pred[i] == 1;
        if (t && p) ++m.tp;
        else if (!t && p) ++m.fp;
        else if (!t && !p) ++m.tn;
        else ++m.fn;
    }
    auto ratio = [](std::size_t a, std::size_t b) { return b ? double(a) / double(b) : std::nan(""); };
    m.accuracy = ratio(m.tp + m.tn, y_true.size());
    m.ppv = ratio(m.tp, m.tp + m.fp);
    m.npv = ratio(m.tn, m.tn + m.fn);
    m.sensitivity = ratio(m.tp, m.tp + m.fn);
    m.specificity = ratio(m.tn, m.tn + m.fp);
    return m;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
    if (a.size() != b.size()) fail(Errc::ShapeMismatch, "label vectors differ in length");
    const std::size_t n = a.size();
    std::map<std::pair<int, int>, double> cells;
    std::map<int, double> ra, cb;
    for (std::size_t i = 0; i < n; ++i) {
        cells[{a[i], b[i]}] += 1.0;
        ra[a[i]] += 1.0;
        cb[b[i]] += 1.0;
    }
    auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
    double sum_cells = 0.0, sum_a = 0.0, sum_b = 0.0;
    for (const auto& [key, v] : cells) sum_cells += c2(v);
    for (const auto& [key, v] : ra) sum_a += c2(v);
    for (const auto& [key, v] : cb) sum_b += c2(v);
    const double total = c2(double(n));
    const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    // Both partitions trivial (all singletons or a single cluster): identical partitions score 1.
    if (max_index == expected) return 1.0;
    return (sum_cells - expected) / (max_index - expected);
}

}  // namespace tvoc
