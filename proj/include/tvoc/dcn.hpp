#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tvoc/nn.hpp"
#include "tvoc/patch.hpp"

namespace tvoc {

/// K latent centroids (the tissue vocabulary) with running per-cluster counts.
struct Codebook {
    int k = 0;
    int dim = 0;
    std::vector<double> centroids;  // k x dim
    std::vector<double> counts;
    double lambda = 0.5;
    std::string sequence_id;

    const double* centroid(int c) const { return centroids.data() + std::size_t(c) * dim; }
    double* centroid(int c) { return centroids.data() + std::size_t(c) * dim; }
};

/// argmin_k ||z - c_k||; ties go to the lowest index.
int assign(std::span<const double> latent, const Codebook& cb);
int assign(std::span<const float> latent, const Codebook& cb);

/// Online centroid update: n_k += 1, then c_k -= (c_k - z) / n_k. Other centroids are untouched.
void update_centroid(Codebook& cb, int k, std::span<const double> latent);

/// Mean over the batch of ||z_i - c_{m_i}||^2.
double cluster_loss(const Tensor<float>& latents, const Codebook& cb, std::span<const int> assignments);

struct TrainConfig {
    int epochs = 50;
    int batch_size = 32;
    double lr = 1e-3;
    double momentum = 0.9;
    double lambda = 0.5;
    int k = 5;
    int kmeans_restarts = 10;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 1;
    std::function<void(const struct EpochStats&)> on_epoch;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;        // mean over batches of recon + lambda * cluster
    double heldout_recon = 0.0;
    double heldout_cluster = 0.0;
    double heldout_loss = 0.0;
    int reinitialized = 0;          // clusters reseeded after receiving no samples
};

struct TrainReport {
    double initial_heldout_recon = 0.0;
    double initial_heldout_loss = 0.0;
    std::vector<EpochStats> epochs;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> heldout_indices;
    std::vector<int> assignments;   // final cluster per training patch (train_dcn only)
};

/// Deterministic split: a seeded permutation; the last floor(n * fraction) go to held-out.
void split_holdout(std::size_t n, double fraction, std::uint64_t seed, std::vector<std::size_t>& train,
                   std::vector<std::size_t>& heldout);

Tensor<float> make_batch(std::span<const Patch> patches, std::span<const std::size_t> indices);
Tensor<float> encode_patches(const Model& model, std::span<const Patch> patches, std::size_t chunk = 512);

/// Autoencoder training on the reconstruction loss only.
TrainReport pretrain(Model& model, std::span<const Patch> patches, const TrainConfig& cfg);

/// k-means++ / Lloyd (tol 1e-6, 300 iterations) on the encoded latents; best of `restarts` runs.
Codebook init_clusters(const Model& model, std::span<const Patch> patches, int k, std::uint64_t seed,
                       int restarts = 1);

struct DcnResult {
    Codebook codebook;
    TrainReport report;
};

/// Joint training: per mini-batch a gradient step on recon + lambda * cluster with fixed
/// centroids, reassignment of the batch under the updated encoder, then online centroid
/// updates. Counts n_k restart at zero every epoch.
DcnResult train_dcn(Model& model, std::span<const Patch> patches, const TrainConfig& cfg);

/// Codebook file: magic "DCNC1", u32 K, u32 dim, f32 centroids, f32 lambda, u32 length + sequence id.
void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_codebook(const Codebook& cb);
Codebook decode_codebook(const std::vector<std::uint8_t>& bytes);

}  // namespace tvoc
