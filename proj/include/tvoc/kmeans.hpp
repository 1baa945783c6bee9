#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tvoc/rng.hpp"

namespace tvoc {

/// Row-major point set: n rows of `dim` doubles.
struct PointSet {
    std::span<const double> values;
    int dim = 0;

    std::size_t size() const { return dim ? values.size() / std::size_t(dim) : 0; }
    const double* row(std::size_t i) const { return values.data() + i * std::size_t(dim); }
};

double squared_distance(const double* a, const double* b, int dim);

/// Index of the nearest centroid (squared Euclidean); ties go to the lowest index.
int nearest_centroid(std::span<const double> centroids, int dim, const double* x);

/// k-means++ seeding: first center uniform, the rest drawn proportional to D^2.
std::vector<double> kmeans_pp_seed(PointSet points, int k, Rng& rng);

struct KMeansResult {
    std::vector<double> centroids;  // k x dim
    std::vector<int> labels;        // against the final centroids
    std::vector<std::size_t> sizes;
    int iterations = 0;
    bool converged = false;
};

/// Lloyd iterations until the largest centroid shift is <= tol or max_iter is reached.
/// An empty cluster is moved to the point farthest from its current centroid.
KMeansResult lloyd(PointSet points, std::vector<double> centroids, double tol = 1e-6, int max_iter = 300);

/// Sum of squared distances to the assigned centroids.
double inertia(PointSet points, const KMeansResult& r);

/// k-means++ seeding followed by Lloyd, repeated `restarts` times (restart r seeds from
/// Rng(seed, "kmeans++", r)); the lowest-inertia run wins, ties to the earliest.
KMeansResult kmeans(PointSet points, int k, std::uint64_t seed, double tol = 1e-6, int max_iter = 300,
                    int restarts = 1);

}  // namespace tvoc
