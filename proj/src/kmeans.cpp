#include "tvoc/kmeans.hpp"

#include <cmath>
#include <limits>

#include "tvoc/error.hpp"

namespace tvoc {

double squared_distance(const double* a, const double* b, int dim) {
    double s = 0.0;
    for (int d = 0; d < dim; ++d) {
        const double t = a[d] - b[d];
        s += t * t;
    }
    return s;
}

int nearest_centroid(std::span<const double> centroids, int dim, const double* x) {
    const int k = int(centroids.size() / std::size_t(dim));
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
        const double d = squared_distance(x, centroids.data() + std::size_t(c) * dim, dim);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

std::vector<double> kmeans_pp_seed(PointSet points, int k, Rng& rng) {
    const std::size_t n = points.size();
    if (k < 1 || n < std::size_t(k)) fail(Errc::TooFewSamples, "k-means needs at least k points");
    const int dim = points.dim;
    std::vector<double> centers;
    centers.reserve(std::size_t(k) * dim);
    const std::size_t first = rng.below(n);
    centers.insert(centers.end(), points.row(first), points.row(first) + dim);

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points.row(i), points.row(first), dim);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (double v : d2) total += v;
        std::size_t pick = 0;
        if (total > 0.0) {
            const double u = rng.uniform() * total;
            double acc = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc > u) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = rng.below(n);
        }
        centers.insert(centers.end(), points.row(pick), points.row(pick) + dim);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_distance(points.row(i), points.row(pick), dim));
    }
    return centers;
}

KMeansResult lloyd(PointSet points, std::vector<double> centroids, double tol, int max_iter) {
    const std::size_t n = points.size();
    const int dim = points.dim;
    const int k = int(centroids.size() / std::size_t(dim));
    if (k < 1 || n < std::size_t(k)) fail(Errc::TooFewSamples, "k-means needs at least k points");

    KMeansResult r;
    r.labels.assign(n, 0);
    std::vector<double> sums(centroids.size());
    std::vector<std::size_t> counts(k);
    for (r.iterations = 0; r.iterations < max_iter;) {
        for (std::size_t i = 0; i < n; ++i) r.labels[i] = nearest_centroid(centroids, dim, points.row(i));
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = r.labels[i];
            ++counts[c];
            for (int d = 0; d < dim; ++d) sums[std::size_t(c) * dim + d] += points.row(i)[d];
        }
        double max_shift = 0.0;
        for (int c = 0; c < k; ++c) {
            double* cc = centroids.data() + std::size_t(c) * dim;
            std::vector<double> next(dim);
            if (counts[c] == 0) {
                std::size_t far = 0;
                double far_d = -1.0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = squared_distance(points.row(i), centroids.data() + std::size_t(r.labels[i]) * dim, dim);
                    if (d > far_d) {
                        far_d = d;
                        far = i;
                    }
                }
                next.assign(points.row(far), points.row(far) + dim);
            } else {
                for (int d = 0; d < dim; ++d) next[d] = sums[std::size_t(c) * dim + d] / double(counts[c]);
            }
            max_shift = std::max(max_shift, std::sqrt(squared_distance(cc, next.data(), dim)));
            std::copy(next.begin(), next.end(), cc);
        }
        ++r.iterations;
        if (max_shift <= tol) {
            r.converged = true;
            break;
        }
    }
    r.sizes.assign(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        r.labels[i] = nearest_centroid(centroids, dim, points.row(i));
        ++r.sizes[r.labels[i]];
    }
    r.centroids = std::move(centroids);
    return r;
}

double inertia(PointSet points, const KMeansResult& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        s += squared_distance(points.row(i), r.centroids.data() + std::size_t(r.labels[i]) * points.dim, points.dim);
    return s;
}

KMeansResult kmeans(PointSet points, int k, std::uint64_t seed, double tol, int max_iter, int restarts) {
    KMeansResult best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, restarts); ++r) {
        Rng rng(seed, "kmeans++", std::uint64_t(r));
        KMeansResult cur = lloyd(points, kmeans_pp_seed(points, k, rng), tol, max_iter);
        const double e = inertia(points, cur);
        if (e < best_inertia) {
            best_inertia = e;
            best = std::move(cur);
        }
    }
    return best;
}

}  // namespace tvoc
