#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace tvoc {

/// Row-major feature matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double* row(std::size_t i) { return data.data() + i * cols; }
    const double* row(std::size_t i) const { return data.data() + i * cols; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

Matrix select_rows(const Matrix& m, std::span<const std::size_t> rows);

// --- random forest --------------------------------------------------------

enum class Task { Classification, Regression };

struct TreeNode {
    int feature = -1;        // -1 marks a leaf
    double threshold = 0.0;  // left: x[feature] <= threshold
    int left = -1;
    int right = -1;
    std::uint32_t value = 0; // offset into Tree::values (leaves only)
};

struct Tree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root
    std::vector<double> values;   // leaf payloads: class probabilities or one mean
};

struct ForestConfig {
    int n_trees = 500;
    int min_leaf = 1;
    int max_features = 0;  // 0: sqrt(D) for classification, D/3 for regression
    bool bootstrap = true;
};

struct Forest {
    Task task = Task::Classification;
    std::size_t n_features = 0;
    std::vector<double> classes;  // sorted distinct labels (classification)
    std::vector<Tree> trees;
    std::vector<double> importance;  // normalized mean impurity decrease
    std::uint64_t seed = 0;
};

/// Bootstrap resamples and per-tree feature draws come from Rng(seed, "tree", t).
/// Trees grow until nodes are pure or cannot be split without leaving fewer than
/// min_leaf samples on a side; splits use Gini impurity or variance reduction.
Forest rf_fit(const Matrix& x, std::span<const double> y, Task task, const ForestConfig& cfg, std::uint64_t seed);

/// Class probabilities, one row per sample, columns in Forest::classes order.
Matrix rf_predict_proba(const Forest& f, const Matrix& x);
/// Regression: mean leaf value. Classification: label with the highest mean probability.
std::vector<double> rf_predict(const Forest& f, const Matrix& x);
std::vector<double> rf_feature_importance(const Forest& f);

/// Forest file: magic "RFST1", u32 version, body, u64 FNV-1a checksum of the preceding bytes.
std::vector<std::uint8_t> encode_forest(const Forest& f);
Forest decode_forest(const std::vector<std::uint8_t>& bytes);
void save_forest(const Forest& f, const std::filesystem::path& path);
Forest load_forest(const std::filesystem::path& path);

// --- agglomerative clustering ---------------------------------------------

/// Node ids below n are leaves; merge i creates node n + i.
struct Merge {
    int a = 0;
    int b = 0;
    double height = 0.0;
    int size = 0;
};

struct Dendrogram {
    int n = 0;
    std::vector<Merge> merges;
};

/// Average linkage on Euclidean distances via Lance-Williams updates. Each cluster is
/// identified by its smallest leaf index; among equal distances the pair with the
/// lexicographically smallest identifiers merges first.
Dendrogram agglomerate(const Matrix& x);

/// Applies the first n - P merges. Labels are 0..P-1 in order of each cluster's smallest leaf.
std::vector<int> cut_dendrogram(const Dendrogram& d, int p);

// --- validation -----------------------------------------------------------

/// Fold index per sample; -1 for samples whose class has <= exclude_at_most members.
/// Members of each class (ascending label order) are shuffled and dealt round-robin
/// with one running counter, so fold sizes and per-class fold counts differ by <= 1.
std::vector<int> stratified_kfold(std::span<const double> y, int k, std::uint64_t seed, int exclude_at_most = 0);

struct ClassificationMetrics {
    double accuracy = 0.0;
    double ppv = 0.0;
    double npv = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Binary metrics with label 1 as positive; a ratio with a zero denominator is NaN.
ClassificationMetrics classification_metrics(std::span<const int> y_true, std::span<const int> y_pred);

double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace tvoc
