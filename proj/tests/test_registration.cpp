#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "support.hpp"
#include "tvoc/error.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/synth.hpp"

using namespace tvoc;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct Scene {
    Volume fixed;
    Mask mask;
};

Scene make_scene(Dims d, Spacing sp, std::uint64_t seed) {
    Scene s;
    s.fixed = Volume(d, 1, sp, "t1w");
    Rng rng(seed);
    const auto field = gaussian_field(d, 2.5, rng);
    s.mask = Mask(d, sp);
    const double cx = 0.5 * (d.nx - 1), cy = 0.5 * (d.ny - 1), cz = 0.5 * (d.nz - 1);
    for (int z = 0; z < int(d.nz); ++z)
        for (int y = 0; y < int(d.ny); ++y)
            for (int x = 0; x < int(d.nx); ++x) {
                const double e = std::pow((x - cx) / (0.36 * d.nx), 2) + std::pow((y - cy) / (0.3 * d.ny), 2) +
                                 std::pow((z - cz) / (0.4 * d.nz), 2);
                const bool in = e <= 1.0;
                s.mask.set(x, y, z, in);
                s.fixed.at(x, y, z) = static_cast<float>(in ? 10.0 + 3.0 * field[s.fixed.index(x, y, z)] : 0.0);
            }
    return s;
}

RigidTransform centered(const Volume& v) {
    RigidTransform t;
    t.center = {0.5 * (v.dims.nx - 1) * v.spacing.sx, 0.5 * (v.dims.ny - 1) * v.spacing.sy,
                0.5 * (v.dims.nz - 1) * v.spacing.sz};
    return t;
}

double max_point_error(const RigidTransform& a, const RigidTransform& b, const Volume& v) {
    double worst = 0.0;
    for (int x : {0, int(v.dims.nx) - 1})
        for (int y : {0, int(v.dims.ny) - 1})
            for (int z : {0, int(v.dims.nz) - 1}) {
                const Vec3 p{x * double(v.spacing.sx), y * double(v.spacing.sy), z * double(v.spacing.sz)};
                const Vec3 qa = a.apply(p), qb = b.apply(p);
                worst = std::max(worst, std::hypot(qa[0] - qb[0], qa[1] - qb[1], qa[2] - qb[2]));
            }
    return worst;
}

}  // namespace

TEST_CASE("transform algebra: inverse, composition, Euler round trip") {
    Rng rng(1);
    for (int i = 0; i < 50; ++i) {
        RigidTransform t;
        for (double& a : t.angles) a = rng.uniform(-3.0, 3.0);
        for (double& x : t.translation) x = rng.uniform(-20, 20);
        for (double& c : t.center) c = rng.uniform(0, 50);
        const Vec3 p{rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10)};
        const Vec3 q = t.inverse().apply(t.apply(p));
        for (int k = 0; k < 3; ++k) CHECK(std::abs(q[k] - p[k]) <= 1e-9);
        const Vec3 c = compose(t, t.inverse()).apply(p);
        for (int k = 0; k < 3; ++k) CHECK(std::abs(c[k] - p[k]) <= 1e-9);
        const Vec3 back = euler_from_matrix(euler_zyx(t.angles));
        const auto r1 = euler_zyx(back), r0 = euler_zyx(t.angles);
        for (int k = 0; k < 9; ++k) CHECK(std::abs(r1[k] - r0[k]) <= 1e-9);
        for (double a : t.inverse().angles) CHECK((a > -std::numbers::pi && a <= std::numbers::pi));
    }
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(3 * std::numbers::pi / 2) == doctest::Approx(-std::numbers::pi / 2));
}

TEST_CASE("rotation about z follows Rz * Ry * Rx with the right-hand rule") {
    RigidTransform t;
    t.angles = {0, 0, std::numbers::pi / 2};
    const Vec3 q = t.apply({1, 0, 0});
    CHECK(q[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(1.0));
}

TEST_CASE("trilinear sampling interpolates and is NaN outside") {
    Volume v({2, 2, 2}, 1, Spacing{}, "");
    for (int i = 0; i < 8; ++i) v.data[i] = float(i);
    CHECK(sample_trilinear(v, 0, 0.5, 0.5, 0.5) == doctest::Approx(3.5));
    CHECK(sample_trilinear(v, 0, 1.0, 0.0, 0.0) == doctest::Approx(1.0));
    CHECK(std::isnan(sample_trilinear(v, 0, -0.5, 0.0, 0.0)));
}

TEST_CASE("moving = fixed registers to the identity") {
    const Scene s = make_scene({40, 40, 16}, Spacing{1.5f, 1.5f, 3.0f}, 2);
    const RegistrationResult r = register_rigid(s.fixed, s.mask, s.fixed, s.mask);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::abs(r.transform.angles[k]) <= 1e-6);
        CHECK(std::abs(r.transform.translation[k]) <= 1e-6);
    }
    CHECK(r.residual <= 1e-9);
}

TEST_CASE("planted translation of (5, -3, 2) voxels is recovered within a voxel") {
    const Spacing sp{1.5f, 1.5f, 3.0f};
    const Scene s = make_scene({48, 48, 20}, sp, 3);
    RigidTransform planted = centered(s.fixed);
    planted.translation = {5 * 1.5, -3 * 1.5, 2 * 3.0};
    const Volume moving = resample(s.fixed, s.fixed.dims, sp, planted.inverse());
    const Mask mmask = resample_mask(s.mask, s.fixed.dims, sp, planted.inverse());
    const RegistrationResult r = register_rigid(s.fixed, s.mask, moving, mmask);
    CHECK(std::abs(r.transform.translation[0] / 1.5 - 5) <= 1.0);
    CHECK(std::abs(r.transform.translation[1] / 1.5 + 3) <= 1.0);
    CHECK(std::abs(r.transform.translation[2] / 3.0 - 2) <= 1.0);
    CHECK(max_point_error(r.transform, planted, s.fixed) <= 1.5 * std::sqrt(3.0) * 3.0);
}

TEST_CASE("planted 10 degree rotation about z is recovered within 2 degrees") {
    const Spacing sp{1.5f, 1.5f, 3.0f};
    const Scene s = make_scene({48, 48, 20}, sp, 4);
    RigidTransform planted = centered(s.fixed);
    planted.angles = {0, 0, 10 * kDeg};
    const Volume moving = resample(s.fixed, s.fixed.dims, sp, planted.inverse());
    const Mask mmask = resample_mask(s.mask, s.fixed.dims, sp, planted.inverse());
    const RegistrationResult r = register_rigid(s.fixed, s.mask, moving, mmask);
    // Compare rotations, not Euler triples: the recovered center may differ.
    const auto ra = euler_zyx(r.transform.angles), rb = euler_zyx(planted.angles);
    double trace = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) trace += ra[i * 3 + j] * rb[i * 3 + j];
    const double angle = std::acos(std::clamp((trace - 1.0) / 2.0, -1.0, 1.0));
    CHECK(angle <= 2.0 * kDeg);
}

TEST_CASE("disjoint fields of view raise NoOverlap") {
    const Spacing sp{1.0f, 1.0f, 1.0f};
    Scene s = make_scene({32, 32, 8}, sp, 5);
    // The moving scan only covers a 4 x 4 x 2 corner of the fixed field of view.
    Volume corner({4, 4, 2}, 1, sp, "t1w");
    Mask corner_mask(corner.dims, sp);
    std::fill(corner_mask.data.begin(), corner_mask.data.end(), 1);
    try {
        register_rigid(s.fixed, s.mask, corner, corner_mask);
        FAIL("expected NoOverlap");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NoOverlap);
    }
}

TEST_CASE("residual above the threshold raises DidNotConverge") {
    const Spacing sp{1.5f, 1.5f, 3.0f};
    const Scene a = make_scene({32, 32, 12}, sp, 6), b = make_scene({32, 32, 12}, sp, 7);
    RegistrationOptions o;
    o.max_residual = 1e-6;
    o.max_iterations = 5;
    try {
        register_rigid(a.fixed, a.mask, b.fixed, b.mask, o);
        FAIL("expected DidNotConverge");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DidNotConverge);
    }
}
