#include "tvoc/signature.hpp"

#include <algorithm>
#include <set>

#include "tvoc/error.hpp"
#include "tvoc/patch.hpp"

namespace tvoc {

ClusterMap cluster_map(const Volume& volume, const Mask& mask, const Model& model, const Codebook& cb, int stride) {
    if (!cb.sequence_id.empty() && !volume.sequence_id.empty() && cb.sequence_id != volume.sequence_id)
        fail(Errc::SequenceMismatch,
             "codebook trained on '" + cb.sequence_id + "' applied to '" + volume.sequence_id + "'");
    if (cb.dim != model.arch().latent) fail(Errc::ShapeMismatch, "codebook dim differs from model latent size");
    if (int(volume.echoes) != model.arch().channels)
        fail(Errc::ShapeMismatch, "volume echo count differs from model input channels");
    if (volume.dims != mask.dims) fail(Errc::ShapeMismatch, "mask does not match volume");
    if (stride < 1) fail(Errc::InvalidArgument, "stride must be positive");

    ClusterMap map;
    map.k = cb.k;
    map.sequence_id = volume.sequence_id.empty() ? cb.sequence_id : volume.sequence_id;
    map.stride = stride;
    map.spacing = volume.spacing;
    const int s = model.arch().input_size;
    map.positions = dense_positions(mask, s, stride);
    if (map.positions.empty()) return map;

    const Volume norm = normalize(volume, mask);
    map.labels.resize(map.positions.size());
    const std::size_t chunk = 512;
    for (std::size_t start = 0; start < map.positions.size(); start += chunk) {
        const std::size_t end = std::min(map.positions.size(), start + chunk);
        Tensor<float> batch(int(end - start), int(volume.echoes), s, s);
        for (std::size_t i = start; i < end; ++i) {
            const Patch p = extract_patch(norm, map.positions[i], s);
            std::copy(p.data.begin(), p.data.end(), batch.sample(int(i - start)));
        }
        const Tensor<float> z = model.encode(batch);
        for (int i = 0; i < z.n; ++i)
            map.labels[start + i] = assign(std::span<const float>(z.sample(i), std::size_t(z.c)), cb);
    }
    return map;
}

Signature signature(const ClusterMap& map) {
    if (map.labels.empty()) fail(Errc::EmptyMap, "cluster map has no positions");
    if (map.k < 1) fail(Errc::InvalidArgument, "cluster map has no clusters");
    std::vector<std::size_t> counts(map.k, 0);
    for (int l : map.labels) {
        if (l < 0 || l >= map.k) fail(Errc::InvalidArgument, "cluster label out of range");
        ++counts[l];
    }
    Signature sig;
    sig.layout.push_back({map.sequence_id, map.k});
    sig.values.resize(map.k);
    const double total = double(map.labels.size());
    for (int i = 0; i < map.k; ++i) sig.values[i] = double(counts[i]) / total;
    return sig;
}

Signature fuse_signatures(std::span<const Signature> parts, std::span<const std::string> order) {
    std::set<std::string> seen;
    for (const Signature& p : parts) {
        if (p.layout.size() != 1 || p.layout[0].k != int(p.values.size()))
            fail(Errc::InvalidArgument, "fusion inputs must be single-sequence signatures");
        if (!seen.insert(p.layout[0].sequence_id).second)
            fail(Errc::DuplicateSequence, "sequence '" + p.layout[0].sequence_id + "' given twice");
    }
    std::set<std::string> ordered;
    Signature out;
    for (const std::string& seq : order) {
        if (!ordered.insert(seq).second) fail(Errc::DuplicateSequence, "sequence '" + seq + "' listed twice");
        const auto it = std::find_if(parts.begin(), parts.end(),
                                     [&](const Signature& p) { return p.layout[0].sequence_id == seq; });
        if (it == parts.end()) fail(Errc::MissingSequence, "no signature for sequence '" + seq + "'");
        out.layout.push_back(it->layout[0]);
        out.values.insert(out.values.end(), it->values.begin(), it->values.end());
    }
    return out;
}

Signature extract_span(const Signature& fused, const std::string& sequence_id) {
    std::size_t offset = 0;
    for (const SignatureSpan& span : fused.layout) {
        if (span.sequence_id == sequence_id) {
            Signature out;
            out.layout.push_back(span);
            out.values.assign(fused.values.begin() + std::ptrdiff_t(offset),
                              fused.values.begin() + std::ptrdiff_t(offset + span.k));
            return out;
        }
        offset += std::size_t(span.k);
    }
    fail(Errc::MissingSequence, "signature has no span for '" + sequence_id + "'");
}

std::vector<std::string> signature_columns(const std::vector<SignatureSpan>& layout) {
    std::vector<std::string> cols;
    for (const SignatureSpan& span : layout)
        for (int k = 0; k < span.k; ++k) cols.push_back(span.sequence_id + ":" + std::to_string(k));
    return cols;
}

Volume image_fuse(const std::map<std::string, Volume>& volumes, std::span<const std::string> order,
                  const std::string& reference, const std::map<std::string, RigidTransform>& transforms) {
    const auto ref = volumes.find(reference);
    if (ref == volumes.end()) fail(Errc::MissingSequence, "reference sequence '" + reference + "' not provided");
    std::set<std::string> seen;
    std::uint32_t channels = 0;
    for (const std::string& seq : order) {
        if (!seen.insert(seq).second) fail(Errc::DuplicateSequence, "sequence '" + seq + "' listed twice");
        const auto it = volumes.find(seq);
        if (it == volumes.end()) fail(Errc::MissingSequence, "no volume for sequence '" + seq + "'");
        if (seq != reference && !transforms.contains(seq))
            fail(Errc::MissingTransform, "no transform registering '" + seq + "' to '" + reference + "'");
        channels += it->second.echoes;
    }
    const Volume& rv = ref->second;
    Volume out(rv.dims, channels, rv.spacing, "if");
    std::size_t offset = 0;
    for (const std::string& seq : order) {
        const Volume& v = volumes.at(seq);
        if (seq == reference) {
            std::copy(v.data.begin(), v.data.end(), out.data.begin() + std::ptrdiff_t(offset));
            offset += v.data.size();
            continue;
        }
        const Volume r = resample(v, rv.dims, rv.spacing, transforms.at(seq));
        std::copy(r.data.begin(), r.data.end(), out.data.begin() + std::ptrdiff_t(offset));
        offset += r.data.size();
    }
    return out;
}

Table cluster_map_table(const ClusterMap& map) {
    Table t;
    t.header = {"x", "y", "z", "label"};
    for (std::size_t i = 0; i < map.size(); ++i) {
        const Voxel& p = map.positions[i];
        t.add_row({std::to_string(p.x), std::to_string(p.y), std::to_string(p.z), std::to_string(map.labels[i])});
    }
    return t;
}

ClusterMap cluster_map_from_table(const Table& t, int k, const std::string& sequence_id, int stride, Spacing spacing) {
    ClusterMap map;
    map.k = k;
    map.sequence_id = sequence_id;
    map.stride = stride;
    map.spacing = spacing;
    const std::size_t cx = t.column("x"), cy = t.column("y"), cz = t.column("z"), cl = t.column("label");
    for (const auto& row : t.rows) {
        map.positions.push_back({int(parse_number(row[cx])), int(parse_number(row[cy])), int(parse_number(row[cz]))});
        const int label = int(parse_number(row[cl]));
        if (label < 0 || label >= k) fail(Errc::ParseError, "cluster label out of range in map table");
        map.labels.push_back(label);
    }
    return map;
}

}  // namespace tvoc
