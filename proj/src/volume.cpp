#include "tvoc/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "tvoc/bytes.hpp"
#include "tvoc/error.hpp"

namespace tvoc {
namespace {

constexpr std::string_view kVolumeMagic = "VVOL1";

void check_dim(std::uint32_t d, const char* name) {
    if (d == 0 || d > kMaxDim) fail(Errc::DimOverflow, std::string(name) + " out of range [1, 4096]");
}

}  // namespace

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoFailure, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(Errc::IoFailure, "write failed for " + path.string());
}

void validate(const Volume& v) {
    check_dim(v.dims.nx, "nx");
    check_dim(v.dims.ny, "ny");
    check_dim(v.dims.nz, "nz");
    if (v.echoes == 0 || v.echoes > kMaxEchoes) fail(Errc::DimOverflow, "echo count out of range");
    if (v.data.size() != v.dims.voxels() * v.echoes)
        fail(Errc::InvalidArgument, "payload length does not match dims * echoes");
    for (float s : {v.spacing.sx, v.spacing.sy, v.spacing.sz})
        if (!std::isfinite(s) || s <= 0.0f) fail(Errc::BadHeader, "spacing must be finite and positive");
    if (!std::all_of(v.data.begin(), v.data.end(), [](float x) { return std::isfinite(x); }))
        fail(Errc::NonFiniteData, "volume contains NaN or Inf");
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
    validate(v);
    ByteWriter w;
    w.magic(kVolumeMagic);
    w.u32(v.dims.nx);
    w.u32(v.dims.ny);
    w.u32(v.dims.nz);
    w.u32(v.echoes);
    w.f32(v.spacing.sx);
    w.f32(v.spacing.sy);
    w.f32(v.spacing.sz);
    w.bytes().reserve(w.bytes().size() + 4 * v.data.size());
    for (float x : v.data) w.f32(x);
    return std::move(w.bytes());
}

Volume decode_volume(const std::vector<std::uint8_t>& bytes) {
    ByteReader r(bytes);
    if (!r.expect_magic(kVolumeMagic)) fail(Errc::BadMagic, "not a VVOL1 file");
    Volume v;
    v.dims.nx = r.u32();
    v.dims.ny = r.u32();
    v.dims.nz = r.u32();
    v.echoes = r.u32();
    check_dim(v.dims.nx, "nx");
    check_dim(v.dims.ny, "ny");
    check_dim(v.dims.nz, "nz");
    if (v.echoes == 0 || v.echoes > kMaxEchoes) fail(Errc::DimOverflow, "echo count out of range");
    v.spacing.sx = r.f32();
    v.spacing.sy = r.f32();
    v.spacing.sz = r.f32();
    for (float s : {v.spacing.sx, v.spacing.sy, v.spacing.sz})
        if (!std::isfinite(s) || s <= 0.0f) fail(Errc::BadHeader, "spacing must be finite and positive");

    const std::uint64_t n = std::uint64_t{v.dims.nx} * v.dims.ny * v.dims.nz * v.echoes;
    r.need(n * 4);
    if (r.remaining() != n * 4) fail(Errc::CorruptFile, "trailing bytes after payload");
    v.data.resize(n);
    for (auto& x : v.data) {
        x = r.f32();
        if (!std::isfinite(x)) fail(Errc::NonFiniteData, "payload contains NaN or Inf");
    }
    return v;
}

Volume read_volume(const std::filesystem::path& path) { return decode_volume(read_file(path)); }

void write_volume(const Volume& v, const std::filesystem::path& path) { write_file(path, encode_volume(v)); }

Mask mask_from_volume(const Volume& v) {
    if (v.echoes != 1) fail(Errc::BadHeader, "mask file must have a single echo");
    Mask m(v.dims, v.spacing);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (v.data[i] != 0.0f && v.data[i] != 1.0f) fail(Errc::CorruptFile, "mask values must be 0 or 1");
        m.data[i] = v.data[i] != 0.0f ? 1 : 0;
    }
    return m;
}

Volume volume_from_mask(const Mask& m) {
    Volume v(m.dims, 1, m.spacing, "mask");
    for (std::size_t i = 0; i < m.data.size(); ++i) v.data[i] = m.data[i] ? 1.0f : 0.0f;
    return v;
}

Mask read_mask(const std::filesystem::path& path) { return mask_from_volume(read_volume(path)); }

void write_mask(const Mask& m, const std::filesystem::path& path) { write_volume(volume_from_mask(m), path); }

}  // namespace tvoc
