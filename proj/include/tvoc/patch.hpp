#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tvoc/volume.hpp"

namespace tvoc {

inline constexpr int kDefaultPatchSize = 32;
inline constexpr int kDefaultStride = 16;

/// s x s x C axial tile; data layout [channel][y][x].
struct Patch {
    int size = 0;
    int channels = 0;
    std::vector<float> data;
    Voxel origin;  // patch center
    std::string subject_id;
    std::string visit_id;
    std::string sequence_id;
};

struct VolumeCount {
    std::string subject_id;
    std::string visit_id;
    std::string sequence_id;
    std::size_t count = 0;
};

struct PatchSet {
    std::vector<Patch> patches;
    std::uint64_t seed = 0;
    int size = 0;
    int channels = 0;
    std::vector<VolumeCount> per_volume;
};

/// One (volume, mask) pair offered to the sampler.
struct SamplerInput {
    const Volume* volume = nullptr;
    const Mask* mask = nullptr;
    std::string subject_id;
    std::string visit_id;
};

/// A window of side s centered at c covers [c - s/2, c - s/2 + s) in x and y.
bool window_fits(Dims dims, int s, int cx, int cy);

/// Per-echo z-score over in-mask voxels; a constant echo maps to zeros everywhere.
Volume normalize(const Volume& v, const Mask& mask);

/// Copies the s x s axial window centered at origin (all echoes) from v.
Patch extract_patch(const Volume& v, Voxel origin, int s);

/// floor(M/N) patches per volume at uniformly drawn in-mask centers whose window fits.
/// Each volume is normalized first and sampled from its own seeded stream.
PatchSet sample_training_patches(std::span<const SamplerInput> inputs, std::size_t total, int s, std::uint64_t seed);

/// In-mask centers on the in-plane stride grid (anchored at s/2) whose window fits,
/// over every axial slice, ordered z, then y, then x.
std::vector<Voxel> dense_positions(const Mask& mask, int s, int stride);

/// Patch blobs: magic "VPAT1", u32 size, channels, count, then f32 payload (LE),
/// with a JSON sidecar carrying origins and provenance.
void save_patch_set(const PatchSet& set, const std::filesystem::path& blob_path);
PatchSet load_patch_set(const std::filesystem::path& blob_path);

}  // namespace tvoc
