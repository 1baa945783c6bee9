#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "support.hpp"
#include "tvoc/error.hpp"
#include "tvoc/patch.hpp"
#include "tvoc/signature.hpp"
#include "tvoc/synth.hpp"

using namespace tvoc;

namespace {

ClusterMap random_map(std::size_t n, int k, std::uint64_t seed, const std::string& seq = "t1w") {
    ClusterMap m;
    m.k = k;
    m.sequence_id = seq;
    m.stride = 4;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        m.positions.push_back({int(i % 7), int(i / 7), 0});
        m.labels.push_back(int(rng.below(std::uint64_t(k))));
    }
    return m;
}

Codebook codebook_for(int k, int dim, const std::string& seq) {
    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.centroids.assign(std::size_t(k) * dim, 0.0);
    cb.counts.assign(std::size_t(k), 0.0);
    cb.sequence_id = seq;
    return cb;
}

}  // namespace

TEST_CASE("signature is count / total") {
    ClusterMap m;
    m.k = 2;
    m.positions = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
    m.labels = {0, 0, 1, 1};
    const Signature s = signature(m);
    CHECK(s.values == std::vector<double>{0.5, 0.5});

    m.labels = {1, 1, 1, 1};
    CHECK(signature(m).values == std::vector<double>{0.0, 1.0});

    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ClusterMap r = random_map(1 + seed * 13, 5, seed);
        std::map<int, int> counts;
        for (int l : r.labels) ++counts[l];
        const Signature rs = signature(r);
        double total = 0.0;
        for (int k = 0; k < 5; ++k) {
            CHECK(rs.values[k] == double(counts[k]) / double(r.labels.size()));
            total += rs.values[k];
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("signature ignores position order and rejects empty maps") {
    ClusterMap m = random_map(40, 4, 3);
    const Signature a = signature(m);
    std::reverse(m.labels.begin(), m.labels.end());
    std::reverse(m.positions.begin(), m.positions.end());
    CHECK(signature(m).values == a.values);
    ClusterMap empty;
    empty.k = 3;
    try {
        signature(empty);
        FAIL("expected EmptyMap");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyMap);
    }
}

TEST_CASE("fusion concatenates in declared order and spans extract exactly") {
    const Signature a = signature(random_map(30, 5, 1, "a"));
    const Signature b = signature(random_map(30, 5, 2, "b"));
    Signature sa = a, sb = b;
    sa.layout = {{"a", 5}};
    sb.layout = {{"b", 5}};
    const std::vector<Signature> parts{sa, sb};
    const std::vector<std::string> ab{"a", "b"}, ba{"b", "a"};
    const Signature f = fuse_signatures(parts, ab);
    CHECK(f.dim() == 10);
    REQUIRE(f.layout.size() == 2);
    CHECK(f.layout[0].sequence_id == "a");
    CHECK(f.layout[1].k == 5);
    const Signature g = fuse_signatures(parts, ba);
    for (int i = 0; i < 5; ++i) {
        CHECK(g.values[i] == f.values[5 + i]);
        CHECK(g.values[5 + i] == f.values[i]);
    }
    const Signature ea = extract_span(f, "a");
    CHECK(std::memcmp(ea.values.data(), sa.values.data(), 5 * sizeof(double)) == 0);
    CHECK(signature_columns(f.layout)[6] == "b:1");

    const std::vector<std::string> missing{"a", "c"}, dup{"a", "a"};
    try {
        fuse_signatures(parts, missing);
        FAIL("expected MissingSequence");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingSequence);
    }
    try {
        fuse_signatures(parts, dup);
        FAIL("expected DuplicateSequence");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DuplicateSequence);
    }
}

TEST_CASE("SF-5-3 on a synthetic three-sequence subject has 15 columns") {
    std::vector<Signature> parts;
    std::vector<std::string> order;
    for (const char* seq : {"t1w", "dixon", "t2star"}) {
        Signature s = signature(random_map(50, 5, order.size(), seq));
        s.layout = {{seq, 5}};
        parts.push_back(s);
        order.push_back(seq);
    }
    CHECK(fuse_signatures(parts, order).dim() == 15);
}

TEST_CASE("cluster maps: plumbing, determinism, empty masks and mismatches") {
    // One texture fills the whole volume.
    const Dims d{64, 64, 2};
    Volume v(d, 1, Spacing{}, "t1w");
    Rng rng(3);
    const auto field = gaussian_field(d, 1.0, rng);
    for (std::size_t i = 0; i < field.size(); ++i) v.data[i] = static_cast<float>(8.0 + field[i]);
    Mask mask(d, Spacing{});
    std::fill(mask.data.begin(), mask.data.end(), 1);

    Arch a;
    a.input_size = 16;
    a.feature_maps = {4, 4};
    a.latent = 3;
    const Model model = Model::initialized(a, 2);

    // Centroid 0 sits at the mean latent of the volume's own patches; the others are far away.
    const auto pos = dense_positions(mask, 16, 8);
    const Volume norm = normalize(v, mask);
    std::vector<double> mean(3, 0.0);
    {
        std::vector<Patch> ps;
        for (const Voxel& p : pos) ps.push_back(extract_patch(norm, p, 16));
        const Tensor<float> z = encode_patches(model, ps);
        for (int i = 0; i < z.n; ++i)
            for (int k = 0; k < 3; ++k) mean[k] += z.sample(i)[k] / z.n;
    }
    Codebook cb = codebook_for(3, 3, "t1w");
    for (int k = 0; k < 3; ++k) {
        cb.centroids[k] = mean[k];
        cb.centroids[3 + k] = mean[k] + 50.0;
        cb.centroids[6 + k] = mean[k] - 50.0;
    }
    const ClusterMap m = cluster_map(v, mask, model, cb, 8);
    REQUIRE(m.size() == pos.size());
    CHECK(m.positions == pos);
    const auto zeros = std::count(m.labels.begin(), m.labels.end(), 0);
    CHECK(double(zeros) >= 0.95 * double(m.size()));
    CHECK(cluster_map(v, mask, model, cb, 8).labels == m.labels);

    const Mask empty(d, Spacing{});
    CHECK(cluster_map(v, empty, model, cb, 8).size() == 0);

    Codebook other = cb;
    other.sequence_id = "dixon";
    try {
        cluster_map(v, mask, model, other, 8);
        FAIL("expected SequenceMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SequenceMismatch);
    }
}

TEST_CASE("image fusion stacks channels in declared order") {
    const Dims d{6, 5, 2};
    std::map<std::string, Volume> vols;
    Rng rng(4);
    for (auto [seq, echoes] : {std::pair<const char*, int>{"t1w", 1}, {"dixon", 2}, {"t2star", 3}}) {
        Volume v(d, std::uint32_t(echoes), Spacing{}, seq);
        for (float& x : v.data) x = static_cast<float>(rng.normal());
        vols[seq] = v;
    }
    const std::vector<std::string> order{"t1w", "dixon", "t2star"};
    const std::map<std::string, RigidTransform> ident{{"dixon", RigidTransform::identity()},
                                                      {"t2star", RigidTransform::identity()}};
    const Volume f = image_fuse(vols, order, "t1w", ident);
    CHECK(f.echoes == 6);
    CHECK(std::equal(vols["t1w"].data.begin(), vols["t1w"].data.end(), f.data.begin()));
    CHECK(std::equal(vols["dixon"].data.begin(), vols["dixon"].data.end(), f.data.begin() + d.voxels()));
    CHECK(std::equal(vols["t2star"].data.begin(), vols["t2star"].data.end(), f.data.begin() + 3 * d.voxels()));

    const std::map<std::string, RigidTransform> partial{{"dixon", RigidTransform::identity()}};
    try {
        image_fuse(vols, order, "t1w", partial);
        FAIL("expected MissingTransform");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MissingTransform);
    }
}

TEST_CASE("cluster map CSV round trip") {
    const ClusterMap m = random_map(25, 4, 8);
    const ClusterMap r = cluster_map_from_table(cluster_map_table(m), 4, "t1w", 4, Spacing{});
    CHECK(r.positions == m.positions);
    CHECK(r.labels == m.labels);
    CHECK(r.k == 4);
}
