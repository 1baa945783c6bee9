#include "tvoc/patch.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tvoc/bytes.hpp"
#include "tvoc/error.hpp"
#include "tvoc/rng.hpp"

namespace tvoc {

bool window_fits(Dims dims, int s, int cx, int cy) {
    const int x0 = cx - s / 2;
    const int y0 = cy - s / 2;
    return x0 >= 0 && y0 >= 0 && x0 + s <= int(dims.nx) && y0 + s <= int(dims.ny);
}

Volume normalize(const Volume& v, const Mask& mask) {
    if (mask.dims != v.dims) fail(Errc::ShapeMismatch, "mask dims differ from volume");
    Volume out = v;
    const std::size_t n = v.dims.voxels();
    for (std::uint32_t e = 0; e < v.echoes; ++e) {
        const float* src = v.data.data() + e * n;
        float* dst = out.data.data() + e * n;
        double sum = 0.0, count = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask.data[i]) {
                sum += src[i];
                count += 1.0;
            }
        if (count == 0.0) fail(Errc::MaskTooSmall, "normalization needs a nonempty mask");
        const double mean = sum / count;
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask.data[i]) ss += (src[i] - mean) * (src[i] - mean);
        const double sd = std::sqrt(ss / count);
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
            std::fill(dst, dst + n, 0.0f);
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<float>((src[i] - mean) / sd);
    }
    return out;
}

Patch extract_patch(const Volume& v, Voxel origin, int s) {
    if (!v.contains(origin.x, origin.y, origin.z) || !window_fits(v.dims, s, origin.x, origin.y))
        fail(Errc::InvalidArgument, "patch window leaves the volume");
    Patch p;
    p.size = s;
    p.channels = int(v.echoes);
    p.origin = origin;
    p.sequence_id = v.sequence_id;
    p.data.resize(std::size_t(s) * s * v.echoes);
    const int x0 = origin.x - s / 2;
    const int y0 = origin.y - s / 2;
    float* dst = p.data.data();
    for (std::uint32_t e = 0; e < v.echoes; ++e)
        for (int y = 0; y < s; ++y) {
            const float* row = &v.data[v.index(x0, y0 + y, origin.z, int(e))];
            std::copy(row, row + s, dst);
            dst += s;
        }
    return p;
}

PatchSet sample_training_patches(std::span<const SamplerInput> inputs, std::size_t total, int s, std::uint64_t seed) {
    if (inputs.empty()) fail(Errc::InvalidArgument, "no volumes to sample from");
    if (total < inputs.size()) fail(Errc::InvalidArgument, "patch count M must be at least the volume count N");
    const std::size_t per_volume = total / inputs.size();

    PatchSet set;
    set.seed = seed;
    set.size = s;
    set.channels = int(inputs.front().volume->echoes);
    for (const auto& in : inputs) {
        const Volume& vol = *in.volume;
        if (s < 4 || s > int(std::min(vol.dims.nx, vol.dims.ny)))
            fail(Errc::BadPatchSize, "patch size " + std::to_string(s) + " invalid for volume");
        if (int(vol.echoes) != set.channels) fail(Errc::ShapeMismatch, "volumes disagree on channel count");

        std::vector<Voxel> centers;
        const Mask& mask = *in.mask;
        if (mask.dims != vol.dims) fail(Errc::ShapeMismatch, "mask dims differ from volume");
        for (int z = 0; z < int(vol.dims.nz); ++z)
            for (int y = 0; y < int(vol.dims.ny); ++y)
                for (int x = 0; x < int(vol.dims.nx); ++x)
                    if (mask.at(x, y, z) && window_fits(vol.dims, s, x, y)) centers.push_back({x, y, z});
        if (centers.empty())
            fail(Errc::MaskTooSmall, "no valid patch center in " + in.subject_id + "/" + in.visit_id);

        const Volume norm = normalize(vol, mask);
        Rng rng(seed, "patches:" + in.subject_id + "/" + in.visit_id + "/" + vol.sequence_id);
        for (std::size_t k = 0; k < per_volume; ++k) {
            Patch p = extract_patch(norm, centers[rng.below(centers.size())], s);
            p.subject_id = in.subject_id;
            p.visit_id = in.visit_id;
            p.sequence_id = vol.sequence_id;
            set.patches.push_back(std::move(p));
        }
        set.per_volume.push_back({in.subject_id, in.visit_id, vol.sequence_id, per_volume});
    }
    return set;
}

std::vector<Voxel> dense_positions(const Mask& mask, int s, int stride) {
    if (stride < 1) fail(Errc::InvalidArgument, "stride must be >= 1");
    std::vector<Voxel> out;
    for (int z = 0; z < int(mask.dims.nz); ++z)
        for (int y = s / 2; y < int(mask.dims.ny); y += stride)
            for (int x = s / 2; x < int(mask.dims.nx); x += stride)
                if (window_fits(mask.dims, s, x, y) && mask.at(x, y, z)) out.push_back({x, y, z});
    return out;
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& blob) {
    auto p = blob;
    p += ".json";
    return p;
}

}  // namespace

void save_patch_set(const PatchSet& set, const std::filesystem::path& blob_path) {
    ByteWriter w;
    w.magic("VPAT1");
    w.u32(std::uint32_t(set.size));
    w.u32(std::uint32_t(set.channels));
    w.u32(std::uint32_t(set.patches.size()));
    nlohmann::json origins = nlohmann::json::array();
    for (const auto& p : set.patches) {
        if (p.size != set.size || p.channels != set.channels) fail(Errc::ShapeMismatch, "inconsistent patch shape");
        for (float x : p.data) w.f32(x);
        origins.push_back({{"subject", p.subject_id}, {"visit", p.visit_id}, {"sequence", p.sequence_id},
                           {"origin", {p.origin.x, p.origin.y, p.origin.z}}});
    }
    write_file(blob_path, w.bytes());

    nlohmann::json counts = nlohmann::json::array();
    for (const auto& c : set.per_volume)
        counts.push_back({{"subject", c.subject_id}, {"visit", c.visit_id}, {"sequence", c.sequence_id}, {"count", c.count}});
    const nlohmann::json side{{"seed", set.seed}, {"size", set.size}, {"channels", set.channels},
                              {"per_volume", counts}, {"patches", origins}};
    const std::string text = side.dump(1) + "\n";
    write_file(sidecar_path(blob_path), std::vector<std::uint8_t>(text.begin(), text.end()));
}

PatchSet load_patch_set(const std::filesystem::path& blob_path) {
    const auto bytes = read_file(blob_path);
    ByteReader r(bytes);
    if (!r.expect_magic("VPAT1")) fail(Errc::BadMagic, "not a VPAT1 file");
    PatchSet set;
    set.size = int(r.u32());
    set.channels = int(r.u32());
    const std::uint32_t count = r.u32();
    if (set.size < 1 || set.size > int(kMaxDim) || set.channels < 1 || set.channels > int(kMaxEchoes))
        fail(Errc::BadHeader, "patch blob header out of range");
    const std::size_t per = std::size_t(set.size) * set.size * set.channels;
    r.need(std::uint64_t{count} * per * 4);

    nlohmann::json side;
    try {
        std::ifstream in(sidecar_path(blob_path));
        if (!in) fail(Errc::IoFailure, "missing patch sidecar");
        side = nlohmann::json::parse(in);
        set.seed = side.at("seed").get<std::uint64_t>();
        if (side.at("patches").size() != count) fail(Errc::CorruptFile, "sidecar patch count mismatch");
        for (const auto& c : side.at("per_volume"))
            set.per_volume.push_back({c.at("subject"), c.at("visit"), c.at("sequence"), c.at("count")});
    } catch (const nlohmann::json::exception& e) {
        fail(Errc::ParseError, std::string("patch sidecar: ") + e.what());
    }
    set.patches.resize(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Patch& p = set.patches[i];
        p.size = set.size;
        p.channels = set.channels;
        p.data.resize(per);
        for (auto& x : p.data) x = r.f32();
        const auto& meta = side["patches"][i];
        p.subject_id = meta.at("subject");
        p.visit_id = meta.at("visit");
        p.sequence_id = meta.at("sequence");
        p.origin = {meta["origin"][0], meta["origin"][1], meta["origin"][2]};
    }
    return set;
}

}  // namespace tvoc
