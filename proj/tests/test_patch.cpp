#include <doctest.h>

#include <cmath>
#include <set>

#include "support.hpp"
#include "tvoc/error.hpp"
#include "tvoc/patch.hpp"

using namespace tvoc;

namespace {

Volume noise_volume(Dims d, std::uint32_t echoes, std::uint64_t seed, double mean = 3.0, double sd = 2.0) {
    Volume v(d, echoes, Spacing{}, "t1w");
    Rng rng(seed);
    for (float& x : v.data) x = static_cast<float>(mean + sd * rng.normal());
    return v;
}

Mask random_mask(Dims d, double p, std::uint64_t seed) {
    Mask m(d, Spacing{});
    Rng rng(seed);
    for (auto& b : m.data) b = rng.uniform() < p ? 1 : 0;
    return m;
}

Mask full_mask(Dims d) {
    Mask m(d, Spacing{});
    std::fill(m.data.begin(), m.data.end(), 1);
    return m;
}

}  // namespace

TEST_CASE("training patches: floor(M/N) per volume, in-mask centers, deterministic") {
    const Dims d{40, 40, 3};
    const Volume a = noise_volume(d, 2, 1), b = noise_volume(d, 2, 2);
    const Mask ma = random_mask(d, 0.3, 3), mb = random_mask(d, 0.3, 4);
    const SamplerInput in[2] = {{&a, &ma, "s1", "v0"}, {&b, &mb, "s2", "v0"}};
    const PatchSet set = sample_training_patches(in, 10, 16, 42);
    REQUIRE(set.patches.size() == 10);
    REQUIRE(set.per_volume.size() == 2);
    CHECK(set.per_volume[0].count == 5);
    CHECK(set.per_volume[1].count == 5);
    for (const Patch& p : set.patches) {
        const Mask& m = p.subject_id == "s1" ? ma : mb;
        CHECK(m.at(p.origin.x, p.origin.y, p.origin.z));
        CHECK(window_fits(d, 16, p.origin.x, p.origin.y));
        CHECK(p.data.size() == 2u * 16 * 16);
    }
    const PatchSet again = sample_training_patches(in, 11, 16, 42);
    CHECK(again.patches.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) CHECK(again.patches[i].data == set.patches[i].data);
}

TEST_CASE("sampled patches re-extract bit-identically from the normalized volume") {
    const Dims d{24, 24, 2};
    const Volume v = noise_volume(d, 3, 5);
    const Mask m = random_mask(d, 0.5, 6);
    const SamplerInput in{&v, &m, "s", "v"};
    const PatchSet set = sample_training_patches(std::span(&in, 1), 20, 8, 7);
    const Volume norm = normalize(v, m);
    for (const Patch& p : set.patches) CHECK(extract_patch(norm, p.origin, 8).data == p.data);
}

TEST_CASE("a single valid center forces every patch there") {
    const Dims d{20, 20, 1};
    const Volume v = noise_volume(d, 1, 8);
    Mask m(d, Spacing{});
    m.set(10, 10, 0, true);
    m.set(0, 0, 0, true);  // window would leave the volume
    const SamplerInput in{&v, &m, "s", "v"};
    const PatchSet set = sample_training_patches(std::span(&in, 1), 6, 8, 9);
    for (const Patch& p : set.patches) CHECK(p.origin == Voxel{10, 10, 0});
}

TEST_CASE("sampler errors") {
    const Dims d{20, 20, 1};
    const Volume v = noise_volume(d, 1, 8);
    const Mask empty(d, Spacing{});
    const SamplerInput in{&v, &empty, "s", "v"};
    try {
        sample_training_patches(std::span(&in, 1), 4, 8, 1);
        FAIL("expected MaskTooSmall");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MaskTooSmall);
    }
    const Mask full = full_mask(d);
    const SamplerInput ok{&v, &full, "s", "v"};
    for (int s : {3, 21}) {
        try {
            sample_training_patches(std::span(&ok, 1), 4, s, 1);
            FAIL("expected BadPatchSize");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::BadPatchSize);
        }
    }
}

TEST_CASE("dense positions match brute-force enumeration") {
    CHECK(dense_positions(full_mask({32, 32, 1}), 32, 1).size() == 1);
    CHECK(dense_positions(Mask({32, 32, 4}, Spacing{}), 8, 4).empty());

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Dims d{30, 27, 3};
        const Mask m = random_mask(d, 0.4, seed);
        const int s = 8, stride = int(seed % 4) + 1;
        std::set<Voxel> expected;
        for (int z = 0; z < 3; ++z)
            for (int y = 0; y < 27; ++y)
                for (int x = 0; x < 30; ++x) {
                    const bool on_grid = (x - s / 2) % stride == 0 && (y - s / 2) % stride == 0 && x >= s / 2 && y >= s / 2;
                    const bool fits = x - s / 2 >= 0 && y - s / 2 >= 0 && x - s / 2 + s <= 30 && y - s / 2 + s <= 27;
                    if (on_grid && fits && m.at(x, y, z)) expected.insert({x, y, z});
                }
        const auto got = dense_positions(m, s, stride);
        CHECK(std::set<Voxel>(got.begin(), got.end()) == expected);
        CHECK(std::is_sorted(got.begin(), got.end(), [](const Voxel& a, const Voxel& b) {
            return std::tie(a.z, a.y, a.x) < std::tie(b.z, b.y, b.x);
        }));
    }
}

TEST_CASE("dense grid covers the foreground for stride <= s/2") {
    const Dims d{64, 64, 2};
    Mask m(d, Spacing{});
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x)
                if ((x - 32) * (x - 32) + (y - 32) * (y - 32) < 20 * 20) m.set(x, y, z, true);
    const int s = 16, stride = 8;
    const auto pos = dense_positions(m, s, stride);
    std::size_t covered = 0, total = 0;
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                if (!m.at(x, y, z)) continue;
                ++total;
                for (const Voxel& p : pos)
                    if (p.z == z && std::abs(p.x - x) <= stride && std::abs(p.y - y) <= stride) {
                        ++covered;
                        break;
                    }
            }
    CHECK(double(covered) >= 0.99 * double(total));
}

TEST_CASE("normalization: in-mask z-score per echo, constants to zero, idempotent") {
    const Dims d{10, 10, 2};
    const Volume v = noise_volume(d, 2, 11, 5.0, 3.0);
    const Mask m = random_mask(d, 0.6, 12);
    const Volume n = normalize(v, m);
    for (int e = 0; e < 2; ++e) {
        double sum = 0.0, sq = 0.0, cnt = 0.0;
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 10; ++y)
                for (int x = 0; x < 10; ++x)
                    if (m.at(x, y, z)) {
                        const double val = n.at(x, y, z, e);
                        sum += val;
                        sq += val * val;
                        cnt += 1.0;
                    }
        CHECK(sum / cnt == doctest::Approx(0.0).epsilon(1e-5));
        CHECK(std::sqrt(sq / cnt) == doctest::Approx(1.0).epsilon(1e-5));
    }
    const Volume twice = normalize(n, m);
    for (std::size_t i = 0; i < n.data.size(); ++i) CHECK(std::abs(twice.data[i] - n.data[i]) <= 1e-5);

    Volume c(d, 1, Spacing{});
    std::fill(c.data.begin(), c.data.end(), 7.0f);
    const Volume cz = normalize(c, m);
    for (float x : cz.data) CHECK(x == 0.0f);
}

TEST_CASE("patch blobs round trip with provenance") {
    const auto dir = testing::scratch_dir("patchset");
    const Dims d{20, 20, 2};
    const Volume v = noise_volume(d, 2, 13);
    const Mask m = full_mask(d);
    const SamplerInput in{&v, &m, "s7", "v1"};
    const PatchSet set = sample_training_patches(std::span(&in, 1), 5, 8, 14);
    save_patch_set(set, dir / "p.vpat");
    const PatchSet r = load_patch_set(dir / "p.vpat");
    REQUIRE(r.patches.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(r.patches[i].data == set.patches[i].data);
        CHECK(r.patches[i].origin == set.patches[i].origin);
        CHECK(r.patches[i].subject_id == "s7");
        CHECK(r.patches[i].visit_id == "v1");
    }
    CHECK(r.seed == 14);
}
