#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tvoc {

struct Dims {
    std::uint32_t nx = 0, ny = 0, nz = 0;

    std::size_t voxels() const { return std::size_t{nx} * ny * nz; }
    bool operator==(const Dims&) const = default;
};

struct Spacing {
    float sx = 1.0f, sy = 1.0f, sz = 1.0f;

    bool operator==(const Spacing&) const = default;
};

struct Voxel {
    int x = 0, y = 0, z = 0;

    bool operator==(const Voxel&) const = default;
    auto operator<=>(const Voxel&) const = default;
};

/// Multi-echo 3D scalar volume. Layout: x fastest, then y, z, echo slowest.
struct Volume {
    Dims dims;
    Spacing spacing;
    std::uint32_t echoes = 1;
    std::vector<float> data;
    std::string sequence_id;

    Volume() = default;
    Volume(Dims d, std::uint32_t e, Spacing sp, std::string seq = {})
        : dims(d), spacing(sp), echoes(e), data(d.voxels() * e, 0.0f), sequence_id(std::move(seq)) {}

    std::size_t index(int x, int y, int z, int e = 0) const {
        return ((std::size_t(e) * dims.nz + z) * dims.ny + y) * dims.nx + x;
    }
    float& at(int x, int y, int z, int e = 0) { return data[index(x, y, z, e)]; }
    float at(int x, int y, int z, int e = 0) const { return data[index(x, y, z, e)]; }

    bool contains(int x, int y, int z) const {
        return x >= 0 && y >= 0 && z >= 0 && x < int(dims.nx) && y < int(dims.ny) && z < int(dims.nz);
    }
};

/// Binary mask paired with a volume.
struct Mask {
    Dims dims;
    Spacing spacing;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(Dims d, Spacing sp) : dims(d), spacing(sp), data(d.voxels(), 0) {}

    std::size_t index(int x, int y, int z) const { return (std::size_t(z) * dims.ny + y) * dims.nx + x; }
    bool at(int x, int y, int z) const { return data[index(x, y, z)] != 0; }
    void set(int x, int y, int z, bool v) { data[index(x, y, z)] = v ? 1 : 0; }
    std::size_t count() const;
};

/// Largest accepted extent along any axis.
inline constexpr std::uint32_t kMaxDim = 4096;
inline constexpr std::uint32_t kMaxEchoes = 256;

/// Reads a VVOL1 file: magic "VVOL1", u32 nx ny nz echoes, f32 sx sy sz, f32 payload (all LE).
Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& v, const std::filesystem::path& path);

/// In-memory variants used by the file functions; exposed for header fuzzing.
Volume decode_volume(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_volume(const Volume& v);

/// Masks are stored as single-echo VVOL1 files holding 0/1.
Mask read_mask(const std::filesystem::path& path);
void write_mask(const Mask& m, const std::filesystem::path& path);

Mask mask_from_volume(const Volume& v);
Volume volume_from_mask(const Mask& m);

/// Checks the Volume invariants (payload length, finiteness, spacing).
void validate(const Volume& v);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace tvoc
