#include <algorithm>
#include <cmath>
#include <numeric>

#include "tvoc/bytes.hpp"
#include "tvoc/error.hpp"
#include "tvoc/learners.hpp"
#include "tvoc/parallel.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), m.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]), m.cols, out.row(i));
    return out;
}

namespace {

constexpr std::uint32_t kForestFormatVersion = 1;

// Split threshold strictly below b, so both sides stay nonempty.
double midpoint(double a, double b) {
    const double m = 0.5 * (a + b);
    return m < b ? m : a;
}

struct Builder {
    const Matrix& x;
    const std::vector<int>& cls;    // class index per sample (classification)
    std::span<const double> y;      // targets (regression)
    Task task;
    int n_classes;
    int min_leaf;
    int mtry;
    Rng& rng;
    Tree& tree;
    std::vector<double>& importance;

    double impurity(const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) const {
        const double n = double(hi - lo);
        if (task == Task::Classification) {
            std::vector<double> counts(n_classes, 0.0);
            for (std::size_t i = lo; i < hi; ++i) counts[cls[idx[i]]] += 1.0;
            double g = 1.0;
            for (double c : counts) g -= (c / n) * (c / n);
            return g;
        }
        double m = 0.0;
        for (std::size_t i = lo; i < hi; ++i) m += y[idx[i]];
        m /= n;
        double v = 0.0;
        for (std::size_t i = lo; i < hi; ++i) v += (y[idx[i]] - m) * (y[idx[i]] - m);
        return v / n;
    }

    int make_leaf(const std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
        TreeNode leaf;
        leaf.value = std::uint32_t(tree.values.size());
        const double n = double(hi - lo);
        if (task == Task::Classification) {
            std::vector<double> p(n_classes, 0.0);
            for (std::size_t i = lo; i < hi; ++i) p[cls[idx[i]]] += 1.0;
            for (double& v : p) v /= n;
            tree.values.insert(tree.values.end(), p.begin(), p.end());
        } else {
            double m = 0.0;
            for (std::size_t i = lo; i < hi; ++i) m += y[idx[i]];
            tree.values.push_back(m / n);
        }
        tree.nodes.push_back(leaf);
        return int(tree.nodes.size() - 1);
    }

    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double score = -1.0;  // weighted child impurity reduction (sum form)
    };

    // Best split of idx[lo, hi) on one feature: scan all boundaries between distinct values.
    void scan(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi, int f, double parent_sum, Split& best,
              bool& constant) const {
        std::sort(idx.begin() + std::ptrdiff_t(lo), idx.begin() + std::ptrdiff_t(hi), [&](std::size_t a, std::size_t b) {
            const double xa = x(a, f), xb = x(b, f);
            return xa < xb || (xa == xb && a < b);
        });
        constant = x(idx[lo], f) == x(idx[hi - 1], f);
        if (constant) return;
        const std::size_t n = hi - lo;
        if (task == Task::Classification) {
            std::vector<double> left(n_classes, 0.0), right(n_classes, 0.0);
            for (std::size_t i = lo; i < hi; ++i) right[cls[idx[i]]] += 1.0;
            double left_sq = 0.0, right_sq = 0.0;
            for (double c : right) right_sq += c * c;
            for (std::size_t i = lo; i + 1 < hi; ++i) {
                const int c = cls[idx[i]];
                left_sq += 2.0 * left[c] + 1.0;
                left[c] += 1.0;
                right_sq -= 2.0 * right[c] - 1.0;
                right[c] -= 1.0;
                const std::size_t nl = i - lo + 1, nr = n - nl;
                const double xv = x(idx[i], f), xn = x(idx[i + 1], f);
                if (xv == xn || nl < std::size_t(min_leaf) || nr < std::size_t(min_leaf)) continue;
                // n * gini = n - sum(c^2)/n for each side.
                const double child = (double(nl) - left_sq / double(nl)) + (double(nr) - right_sq / double(nr));
                const double score = parent_sum - child;
                if (score > best.score) best = {f, midpoint(xv, xn), score};
            }
        } else {
            double total = 0.0, total_sq = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                total += y[idx[i]];
                total_sq += y[idx[i]] * y[idx[i]];
            }
            double ls = 0.0, lsq = 0.0;
            for (std::size_t i = lo; i + 1 < hi; ++i) {
                const double v = y[idx[i]];
                ls += v;
                lsq += v * v;
                const std::size_t nl = i - lo + 1, nr = n - nl;
                const double xv = x(idx[i], f), xn = x(idx[i + 1], f);
                if (xv == xn || nl < std::size_t(min_leaf) || nr < std::size_t(min_leaf)) continue;
                const double rs = total - ls, rsq = total_sq - lsq;
                const double child = (lsq - ls * ls / double(nl)) + (rsq - rs * rs / double(nr));
                const double score = parent_sum - child;
                if (score > best.score) best = {f, midpoint(xv, xn), score};
            }
        }
    }

    int grow(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
        const std::size_t n = hi - lo;
        const double imp = impurity(idx, lo, hi);
        if (imp <= 1e-15 || n < 2 * std::size_t(min_leaf)) return make_leaf(idx, lo, hi);

        const int d = int(x.cols);
        std::vector<int> features(d);
        std::iota(features.begin(), features.end(), 0);
        Split best;
        const double parent_sum = imp * double(n);
        int visited = 0;
        // Features are drawn without replacement; constant ones do not count toward mtry.
        for (int i = 0; i < d && visited < mtry; ++i) {
            const int j = i + int(rng.below(std::uint64_t(d - i)));
            std::swap(features[i], features[j]);
            bool constant = false;
            scan(idx, lo, hi, features[i], parent_sum, best, constant);
            if (!constant) ++visited;
        }
        if (best.feature < 0) return make_leaf(idx, lo, hi);

        const auto mid_it = std::partition(idx.begin() + std::ptrdiff_t(lo), idx.begin() + std::ptrdiff_t(hi),
                                           [&](std::size_t s) { return x(s, best.feature) <= best.threshold; });
        const std::size_t mid = std::size_t(mid_it - idx.begin());
        importance[best.feature] += std::max(0.0, best.score);

        const int self = int(tree.nodes.size());
        tree.nodes.push_back(TreeNode{best.feature, best.threshold, -1, -1, 0});
        const int left = grow(idx, lo, mid);
        const int right = grow(idx, mid, hi);
        tree.nodes[self].left = left;
        tree.nodes[self].right = right;
        return self;
    }
};

const double* leaf_for(const Tree& t, const double* row) {
    int node = 0;
    while (t.nodes[node].feature >= 0) {
        const TreeNode& nd = t.nodes[node];
        node = row[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return t.values.data() + t.nodes[node].value;
}

}  // namespace

Forest rf_fit(const Matrix& x, std::span<const double> y, Task task, const ForestConfig& cfg, std::uint64_t seed) {
    if (x.cols == 0) fail(Errc::EmptyFeatures, "feature matrix has no columns");
    if (x.rows != y.size()) fail(Errc::ShapeMismatch, "one target per sample required");
    if (x.rows < 2) fail(Errc::TooFewSamples, "random forest needs at least two samples");
    if (cfg.n_trees < 1 || cfg.min_leaf < 1) fail(Errc::InvalidArgument, "n_trees and min_leaf must be positive");
    for (double v : x.data)
        if (!std::isfinite(v)) fail(Errc::NonFiniteData, "non-finite feature value");

    Forest f;
    f.task = task;
    f.n_features = x.cols;
    f.seed = seed;
    std::vector<int> cls(x.rows, 0);
    if (task == Task::Classification) {
        f.classes.assign(y.begin(), y.end());
        std::sort(f.classes.begin(), f.classes.end());
        f.classes.erase(std::unique(f.classes.begin(), f.classes.end()), f.classes.end());
        if (f.classes.size() < 2) fail(Errc::DegenerateLabels, "classification needs at least two classes");
        for (std::size_t i = 0; i < x.rows; ++i)
            cls[i] = int(std::lower_bound(f.classes.begin(), f.classes.end(), y[i]) - f.classes.begin());
    }
    const int d = int(x.cols);
    int mtry = cfg.max_features;
    if (mtry <= 0)
        mtry = task == Task::Classification ? int(std::floor(std::sqrt(double(d)))) : d / 3;
    mtry = std::clamp(mtry, 1, d);

    f.trees.resize(std::size_t(cfg.n_trees));
    std::vector<std::vector<double>> tree_importance(std::size_t(cfg.n_trees), std::vector<double>(std::size_t(d), 0.0));
    parallel_for(std::size_t(cfg.n_trees), [&](std::size_t t) {
        Rng rng(seed, "tree", t);
        std::vector<std::size_t> idx(x.rows);
        if (cfg.bootstrap)
            for (auto& i : idx) i = std::size_t(rng.below(x.rows));
        else
            std::iota(idx.begin(), idx.end(), 0);
        Builder b{x, cls, y, task, int(f.classes.size()), cfg.min_leaf, mtry, rng, f.trees[t], tree_importance[t]};
        b.grow(idx, 0, idx.size());
    });

    f.importance.assign(std::size_t(d), 0.0);
    for (const auto& ti : tree_importance) {
        const double s = std::accumulate(ti.begin(), ti.end(), 0.0);
        if (s > 0.0)
            for (int j = 0; j < d; ++j) f.importance[j] += ti[j] / s;
    }
    const double s = std::accumulate(f.importance.begin(), f.importance.end(), 0.0);
    if (s > 0.0)
        for (double& v : f.importance) v /= s;
    return f;
}

Matrix rf_predict_proba(const Forest& f, const Matrix& x) {
    if (f.task != Task::Classification) fail(Errc::InvalidArgument, "probabilities need a classification forest");
    if (x.cols != f.n_features) fail(Errc::ShapeMismatch, "feature count differs from the trained forest");
    const std::size_t c = f.classes.size();
    Matrix out(x.rows, c);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double* o = out.row(i);
        for (const Tree& t : f.trees) {
            const double* leaf = leaf_for(t, x.row(i));
            for (std::size_t k = 0; k < c; ++k) o[k] += leaf[k];
        }
        for (std::size_t k = 0; k < c; ++k) o[k] /= double(f.trees.size());
    }
    return out;
}

std::vector<double> rf_predict(const Forest& f, const Matrix& x) {
    if (x.cols != f.n_features) fail(Errc::ShapeMismatch, "feature count differs from the trained forest");
    std::vector<double> out(x.rows, 0.0);
    if (f.task == Task::Classification) {
        const Matrix p = rf_predict_proba(f, x);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* r = p.row(i);
            out[i] = f.classes[std::size_t(std::max_element(r, r + p.cols) - r)];
        }
        return out;
    }
    for (std::size_t i = 0; i < x.rows; ++i) {
        double s = 0.0;
        for (const Tree& t : f.trees) s += *leaf_for(t, x.row(i));
        out[i] = s / double(f.trees.size());
    }
    return out;
}

std::vector<double> rf_feature_importance(const Forest& f) { return f.importance; }

std::vector<std::uint8_t> encode_forest(const Forest& f) {
    ByteWriter w;
    w.magic("RFST1");
    w.u32(kForestFormatVersion);
    w.u32(f.task == Task::Classification ? 0 : 1);
    w.u64(f.n_features);
    w.u64(f.seed);
    w.u32(std::uint32_t(f.classes.size()));
    for (double c : f.classes) w.f64(c);
    for (double v : f.importance) w.f64(v);
    w.u32(std::uint32_t(f.trees.size()));
    for (const Tree& t : f.trees) {
        w.u32(std::uint32_t(t.nodes.size()));
        for (const TreeNode& n : t.nodes) {
            w.u32(std::uint32_t(n.feature));
            w.f64(n.threshold);
            w.u32(std::uint32_t(n.left));
            w.u32(std::uint32_t(n.right));
            w.u32(n.value);
        }
        w.u32(std::uint32_t(t.values.size()));
        for (double v : t.values) w.f64(v);
    }
    w.u64(checksum(w.bytes().data(), w.bytes().size()));
    return std::move(w.bytes());
}

Forest decode_forest(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (!r.expect_magic("RFST1")) fail(Errc::BadMagic, "not a forest file");
    const std::uint32_t version = r.u32();
    if (version != kForestFormatVersion) fail(Errc::VersionMismatch, "forest format version " + std::to_string(version));
    if (bytes.size() < 8) fail(Errc::TruncatedFile, "forest file too short");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= std::uint64_t{bytes[bytes.size() - 8 + i]} << (8 * i);
    if (stored != checksum(bytes.data(), bytes.size() - 8)) fail(Errc::CorruptFile, "forest checksum mismatch");

    Forest f;
    f.task = r.u32() == 0 ? Task::Classification : Task::Regression;
    f.n_features = r.u64();
    f.seed = r.u64();
    if (f.n_features == 0 || f.n_features > (1u << 20)) fail(Errc::CorruptFile, "bad feature count");
    const std::uint32_t nc = r.u32();
    r.need(std::uint64_t(nc) * 8);
    f.classes.resize(nc);
    for (double& c : f.classes) c = r.f64();
    r.need(f.n_features * 8);
    f.importance.resize(f.n_features);
    for (double& v : f.importance) v = r.f64();
    const std::uint32_t nt = r.u32();
    const std::size_t leaf_width = f.task == Task::Classification ? nc : 1;
    for (std::uint32_t t = 0; t < nt; ++t) {
        Tree tree;
        const std::uint32_t nn = r.u32();
        r.need(std::uint64_t(nn) * 24);
        tree.nodes.resize(nn);
        for (TreeNode& n : tree.nodes) {
            n.feature = int(r.u32());
            n.threshold = r.f64();
            n.left = int(r.u32());
            n.right = int(r.u32());
            n.value = r.u32();
        }
        const std::uint32_t nv = r.u32();
        r.need(std::uint64_t(nv) * 8);
        tree.values.resize(nv);
        for (double& v : tree.values) v = r.f64();
        for (std::uint32_t i = 0; i < nn; ++i) {
            const TreeNode& n = tree.nodes[i];
            // Children always follow their parent, which also rules out cycles.
            if (n.feature >= 0) {
                if (std::size_t(n.feature) >= f.n_features || n.left <= int(i) || n.right <= int(i) ||
                    n.left >= int(nn) || n.right >= int(nn))
                    fail(Errc::CorruptFile, "malformed tree node");
            } else if (std::size_t(n.value) + leaf_width > nv) {
                fail(Errc::CorruptFile, "leaf payload out of range");
            }
        }
        if (nn == 0) fail(Errc::CorruptFile, "empty tree");
        f.trees.push_back(std::move(tree));
    }
    if (r.remaining() != 8) fail(Errc::CorruptFile, "trailing bytes in forest file");
    return f;
}

void save_forest(const Forest& f, const std::filesystem::path& path) { write_file(path, encode_forest(f)); }

Forest load_forest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(Errc::MissingArtifact, "forest " + path.string() + " not found");
    return decode_forest(read_file(path));
}

}  // namespace tvoc
