#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tvoc/dcn.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/table.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {

/// Per-position cluster labels over a masked volume.
struct ClusterMap {
    std::vector<Voxel> positions;
    std::vector<int> labels;
    int k = 0;
    std::string sequence_id;
    int stride = 0;
    Spacing spacing;

    std::size_t size() const { return labels.size(); }
};

struct SignatureSpan {
    std::string sequence_id;
    int k = 0;
};

/// Relative cluster frequencies; a fused signature concatenates one span per sequence.
struct Signature {
    std::vector<double> values;
    std::vector<SignatureSpan> layout;

    std::size_t dim() const { return values.size(); }
};

/// Sliding-window encoding: every dense position (see dense_positions) is encoded and
/// assigned to its nearest centroid. The volume is z-scored inside the mask first.
ClusterMap cluster_map(const Volume& volume, const Mask& mask, const Model& model, const Codebook& cb, int stride);

/// s_i = count_i / total.
Signature signature(const ClusterMap& map);

/// Concatenates per-sequence signatures in the given order.
Signature fuse_signatures(std::span<const Signature> parts, std::span<const std::string> order);

/// The span of a fused signature belonging to one sequence.
Signature extract_span(const Signature& fused, const std::string& sequence_id);

/// Column names "seq:k" for a layout.
std::vector<std::string> signature_columns(const std::vector<SignatureSpan>& layout);

/// Resamples every sequence onto the reference grid and stacks the echoes as channels,
/// in `order`. transforms[seq] maps reference-frame points into that sequence's frame;
/// the reference itself needs no entry.
Volume image_fuse(const std::map<std::string, Volume>& volumes, std::span<const std::string> order,
                  const std::string& reference, const std::map<std::string, RigidTransform>& transforms);

Table cluster_map_table(const ClusterMap& map);
ClusterMap cluster_map_from_table(const Table& t, int k, const std::string& sequence_id, int stride, Spacing spacing);

}  // namespace tvoc
