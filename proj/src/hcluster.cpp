#include <cmath>
#include <limits>
#include <numeric>

#include "tvoc/error.hpp"
#include "tvoc/learners.hpp"

namespace tvoc {

Dendrogram agglomerate(const Matrix& x) {
    const std::size_t n = x.rows;
    if (n < 2) fail(Errc::FewerThanTwoPoints, "agglomerative clustering needs at least two points");
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols; ++c) {
                const double t = x(i, c) - x(j, c);
                s += t * t;
            }
            d[i * n + j] = d[j * n + i] = std::sqrt(s);
        }

    // Slot i holds the cluster whose smallest leaf is i.
    std::vector<char> active(n, 1);
    std::vector<int> node(n), size(n, 1);
    std::iota(node.begin(), node.end(), 0);
    Dendrogram out;
    out.n = int(n);
    for (std::size_t step = 0; step + 1 < n; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!active[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j)
                if (active[j] && d[i * n + j] < best) {
                    best = d[i * n + j];
                    bi = i;
                    bj = j;
                }
        }
        const double ni = size[bi], nj = size[bj];
        for (std::size_t k = 0; k < n; ++k) {
            if (!active[k] || k == bi || k == bj) continue;
            const double v = (ni * d[bi * n + k] + nj * d[bj * n + k]) / (ni + nj);
            d[bi * n + k] = d[k * n + bi] = v;
        }
        out.merges.push_back({node[bi], node[bj], best, size[bi] + size[bj]});
        active[bj] = 0;
        size[bi] += size[bj];
        node[bi] = int(n + step);
    }
    return out;
}

std::vector<int> cut_dendrogram(const Dendrogram& d, int p) {
    if (p < 1 || p > d.n) fail(Errc::InvalidArgument, "cluster count must be in [1, n]");
    const int n = d.n;
    std::vector<int> parent(std::size_t(2 * n - 1));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int v) {
        while (parent[v] != v) v = parent[v] = parent[parent[v]];
        return v;
    };
    for (int m = 0; m < n - p; ++m) {
        const Merge& mg = d.merges[std::size_t(m)];
        parent[find(mg.a)] = n + m;
        parent[find(mg.b)] = n + m;
    }
    std::vector<int> labels(std::size_t(n), -1);
    std::vector<int> root_label(parent.size(), -1);
    int next = 0;
    for (int i = 0; i < n; ++i) {
        const int r = find(i);
        if (root_label[r] < 0) root_label[r] = next++;
        labels[i] = root_label[r];
    }
    return labels;
}

}  // namespace tvoc
