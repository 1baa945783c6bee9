#include "tvoc/registration.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "tvoc/error.hpp"

namespace tvoc {

double wrap_angle(double a) {
    constexpr double pi = std::numbers::pi;
    a = std::fmod(a, 2.0 * pi);
    if (a <= -pi) a += 2.0 * pi;
    if (a > pi) a -= 2.0 * pi;
    return a;
}

std::array<double, 9> euler_zyx(const Vec3& angles) {
    const double cx = std::cos(angles[0]), sx = std::sin(angles[0]);
    const double cy = std::cos(angles[1]), sy = std::sin(angles[1]);
    const double cz = std::cos(angles[2]), sz = std::sin(angles[2]);
    return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
            sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
            -sy,     cy * sx,                cy * cx};
}

Vec3 euler_from_matrix(const std::array<double, 9>& r) {
    const double sy = std::clamp(-r[6], -1.0, 1.0);
    const double ry = std::asin(sy);
    if (std::abs(sy) > 1.0 - 1e-12) return {0.0, ry, std::atan2(-r[1], r[4])};
    return {std::atan2(r[7], r[8]), ry, std::atan2(r[3], r[0])};
}

namespace {

Vec3 mat_vec(const std::array<double, 9>& r, const Vec3& v) {
    return {r[0] * v[0] + r[1] * v[1] + r[2] * v[2], r[3] * v[0] + r[4] * v[1] + r[5] * v[2],
            r[6] * v[0] + r[7] * v[1] + r[8] * v[2]};
}

std::array<double, 9> mat_mul(const std::array<double, 9>& a, const std::array<double, 9>& b) {
    std::array<double, 9> c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

std::array<double, 9> transpose(const std::array<double, 9>& r) {
    return {r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]};
}

}  // namespace

std::array<double, 9> RigidTransform::rotation() const { return euler_zyx(angles); }

Vec3 RigidTransform::apply(const Vec3& p) const {
    const Vec3 q = mat_vec(rotation(), {p[0] - center[0], p[1] - center[1], p[2] - center[2]});
    return {q[0] + center[0] + translation[0], q[1] + center[1] + translation[1], q[2] + center[2] + translation[2]};
}

RigidTransform RigidTransform::inverse() const {
    const auto rt = transpose(rotation());
    const Vec3 t = mat_vec(rt, translation);
    RigidTransform inv;
    inv.center = center;
    inv.translation = {-t[0], -t[1], -t[2]};
    const Vec3 a = euler_from_matrix(rt);
    inv.angles = {wrap_angle(a[0]), wrap_angle(a[1]), wrap_angle(a[2])};
    return inv;
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    const auto ra = a.rotation();
    RigidTransform out;
    out.center = b.center;
    const Vec3 v = mat_vec(ra, {b.center[0] + b.translation[0] - a.center[0], b.center[1] + b.translation[1] - a.center[1],
                                b.center[2] + b.translation[2] - a.center[2]});
    for (int i = 0; i < 3; ++i) out.translation[i] = v[i] + a.center[i] + a.translation[i] - b.center[i];
    const Vec3 ang = euler_from_matrix(mat_mul(ra, b.rotation()));
    out.angles = {wrap_angle(ang[0]), wrap_angle(ang[1]), wrap_angle(ang[2])};
    return out;
}

double sample_trilinear(const Volume& v, int echo, double x, double y, double z) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const int n[3] = {int(v.dims.nx), int(v.dims.ny), int(v.dims.nz)};
    const double c[3] = {x, y, z};
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        if (!(c[a] >= -1e-9 && c[a] <= n[a] - 1 + 1e-9)) return nan;
        if (n[a] == 1) {
            i0[a] = 0;
            f[a] = 0.0;
            continue;
        }
        const double cl = std::clamp(c[a], 0.0, double(n[a] - 1));
        i0[a] = std::min(int(cl), n[a] - 2);
        f[a] = cl - i0[a];
    }
    const int dx = n[0] > 1 ? 1 : 0, dy = n[1] > 1 ? 1 : 0, dz = n[2] > 1 ? 1 : 0;
    auto at = [&](int ox, int oy, int oz) { return double(v.at(i0[0] + ox, i0[1] + oy, i0[2] + oz, echo)); };
    const double c00 = at(0, 0, 0) * (1 - f[0]) + at(dx, 0, 0) * f[0];
    const double c10 = at(0, dy, 0) * (1 - f[0]) + at(dx, dy, 0) * f[0];
    const double c01 = at(0, 0, dz) * (1 - f[0]) + at(dx, 0, dz) * f[0];
    const double c11 = at(0, dy, dz) * (1 - f[0]) + at(dx, dy, dz) * f[0];
    const double c0 = c00 * (1 - f[1]) + c10 * f[1];
    const double c1 = c01 * (1 - f[1]) + c11 * f[1];
    return c0 * (1 - f[2]) + c1 * f[2];
}

Volume resample(const Volume& moving, Dims fixed_dims, Spacing fixed_spacing, const RigidTransform& t) {
    Volume out(fixed_dims, moving.echoes, fixed_spacing, moving.sequence_id);
    for (int z = 0; z < int(fixed_dims.nz); ++z)
        for (int y = 0; y < int(fixed_dims.ny); ++y)
            for (int x = 0; x < int(fixed_dims.nx); ++x) {
                const Vec3 q = t.apply({x * double(fixed_spacing.sx), y * double(fixed_spacing.sy), z * double(fixed_spacing.sz)});
                const double mx = q[0] / moving.spacing.sx, my = q[1] / moving.spacing.sy, mz = q[2] / moving.spacing.sz;
                for (std::uint32_t e = 0; e < moving.echoes; ++e) {
                    const double val = sample_trilinear(moving, int(e), mx, my, mz);
                    out.at(x, y, z, int(e)) = std::isnan(val) ? 0.0f : static_cast<float>(val);
                }
            }
    return out;
}

Mask resample_mask(const Mask& moving, Dims fixed_dims, Spacing fixed_spacing, const RigidTransform& t) {
    const Volume mv = volume_from_mask(moving);
    const Volume r = resample(mv, fixed_dims, fixed_spacing, t);
    Mask out(fixed_dims, fixed_spacing);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = r.data[i] >= 0.5f ? 1 : 0;
    return out;
}

namespace {

struct Level {
    Volume vol;
    Mask mask;
    Vec3 origin{0, 0, 0};  // physical position of voxel (0,0,0)
    Vec3 spacing{1, 1, 1};
};

Level downsample(const Volume& v, const Mask& m, int f) {
    int fa[3] = {f, f, f};
    const std::uint32_t n[3] = {v.dims.nx, v.dims.ny, v.dims.nz};
    for (int a = 0; a < 3; ++a)
        while (fa[a] > 1 && n[a] / std::uint32_t(fa[a]) < 8) fa[a] /= 2;
    Level L;
    const Dims d{n[0] / std::uint32_t(fa[0]), n[1] / std::uint32_t(fa[1]), n[2] / std::uint32_t(fa[2])};
    const double sp[3] = {v.spacing.sx, v.spacing.sy, v.spacing.sz};
    L.vol = Volume(d, v.echoes, Spacing{float(sp[0] * fa[0]), float(sp[1] * fa[1]), float(sp[2] * fa[2])}, v.sequence_id);
    L.mask = Mask(d, L.vol.spacing);
    for (int a = 0; a < 3; ++a) {
        L.origin[a] = 0.5 * (fa[a] - 1) * sp[a];
        L.spacing[a] = sp[a] * fa[a];
    }
    const double inv = 1.0 / (fa[0] * fa[1] * fa[2]);
    for (int z = 0; z < int(d.nz); ++z)
        for (int y = 0; y < int(d.ny); ++y)
            for (int x = 0; x < int(d.nx); ++x) {
                int inside = 0;
                for (std::uint32_t e = 0; e < v.echoes; ++e) {
                    double s = 0.0;
                    for (int oz = 0; oz < fa[2]; ++oz)
                        for (int oy = 0; oy < fa[1]; ++oy)
                            for (int ox = 0; ox < fa[0]; ++ox) {
                                const int X = x * fa[0] + ox, Y = y * fa[1] + oy, Z = z * fa[2] + oz;
                                s += v.at(X, Y, Z, int(e));
                                if (e == 0) inside += m.at(X, Y, Z);
                            }
                    L.vol.at(x, y, z, int(e)) = static_cast<float>(s * inv);
                }
                L.mask.set(x, y, z, inside * inv > 0.5);
            }
    return L;
}

Vec3 mask_centroid(const Mask& m) {
    double s[3] = {0, 0, 0};
    std::size_t n = 0;
    for (int z = 0; z < int(m.dims.nz); ++z)
        for (int y = 0; y < int(m.dims.ny); ++y)
            for (int x = 0; x < int(m.dims.nx); ++x)
                if (m.at(x, y, z)) {
                    s[0] += x;
                    s[1] += y;
                    s[2] += z;
                    ++n;
                }
    if (n == 0) fail(Errc::MaskTooSmall, "registration mask is empty");
    return {s[0] / n * m.spacing.sx, s[1] / n * m.spacing.sy, s[2] / n * m.spacing.sz};
}

// In-mask MSE of one resolution level, with a cached list of fixed samples.
class Cost {
public:
    Cost(const Level& fixed, const Level& moving) : moving_(moving) {
        const Volume& f = fixed.vol;
        for (int z = 0; z < int(f.dims.nz); ++z)
            for (int y = 0; y < int(f.dims.ny); ++y)
                for (int x = 0; x < int(f.dims.nx); ++x) {
                    if (!fixed.mask.at(x, y, z)) continue;
                    points_.push_back({fixed.origin[0] + x * fixed.spacing[0], fixed.origin[1] + y * fixed.spacing[1],
                                       fixed.origin[2] + z * fixed.spacing[2]});
                    for (std::uint32_t e = 0; e < f.echoes; ++e) values_.push_back(f.at(x, y, z, int(e)));
                }
        echoes_ = f.echoes;
    }

    bool empty() const { return points_.empty(); }

    double overlap(const RigidTransform& t) const {
        std::size_t in = 0;
        for (const Vec3& p : points_) {
            const Vec3 q = t.apply(p);
            if (!std::isnan(sample(q, 0))) ++in;
        }
        return points_.empty() ? 0.0 : double(in) / double(points_.size());
    }

    double operator()(const RigidTransform& t) {
        ++evaluations;
        const auto r = t.rotation();
        double sum = 0.0;
        std::size_t in = 0;
        for (std::size_t i = 0; i < points_.size(); ++i) {
            const Vec3& p = points_[i];
            const double d[3] = {p[0] - t.center[0], p[1] - t.center[1], p[2] - t.center[2]};
            const Vec3 q = {r[0] * d[0] + r[1] * d[1] + r[2] * d[2] + t.center[0] + t.translation[0],
                            r[3] * d[0] + r[4] * d[1] + r[5] * d[2] + t.center[1] + t.translation[1],
                            r[6] * d[0] + r[7] * d[1] + r[8] * d[2] + t.center[2] + t.translation[2]};
            bool ok = true;
            double local = 0.0;
            for (std::uint32_t e = 0; e < echoes_ && ok; ++e) {
                const double m = sample(q, int(e));
                if (std::isnan(m)) {
                    ok = false;
                    break;
                }
                const double diff = m - values_[i * echoes_ + e];
                local += diff * diff;
            }
            if (ok) {
                sum += local;
                ++in;
            }
        }
        // Too little overlap makes the in-bounds mean meaningless; treat as infeasible.
        if (in * 2 < points_.size()) return std::numeric_limits<double>::infinity();
        return sum / double(in * echoes_);
    }

    int evaluations = 0;

private:
    double sample(const Vec3& q, int e) const {
        return sample_trilinear(moving_.vol, e, (q[0] - moving_.origin[0]) / moving_.spacing[0],
                                (q[1] - moving_.origin[1]) / moving_.spacing[1],
                                (q[2] - moving_.origin[2]) / moving_.spacing[2]);
    }

    const Level& moving_;
    std::vector<Vec3> points_;
    std::vector<double> values_;
    std::uint32_t echoes_ = 1;
};

RigidTransform from_params(const std::array<double, 6>& p, const Vec3& center) {
    RigidTransform t;
    t.angles = {p[0], p[1], p[2]};
    t.translation = {p[3], p[4], p[5]};
    t.center = center;
    return t;
}

double refine(Cost& cost, std::array<double, 6>& p, double best, const Vec3& center, double angle_step,
              double trans_step, double angle_min, double trans_min, int max_sweeps) {
    double step[6] = {angle_step, angle_step, angle_step, trans_step, trans_step, trans_step};
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool improved = false;
        for (int i = 0; i < 6; ++i) {
            for (double dir : {1.0, -1.0}) {
                auto q = p;
                q[i] += dir * step[i];
                const double c = cost(from_params(q, center));
                if (c < best) {
                    best = c;
                    p = q;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            for (int i = 0; i < 6; ++i) step[i] *= 0.5;
            if (step[0] < angle_min && step[3] < trans_min) break;
        }
    }
    return best;
}

}  // namespace

RegistrationResult register_rigid(const Volume& fixed, const Mask& fixed_mask, const Volume& moving,
                                  const Mask& moving_mask, const RegistrationOptions& opts) {
    if (fixed.dims != fixed_mask.dims || moving.dims != moving_mask.dims)
        fail(Errc::ShapeMismatch, "mask does not match its volume");
    if (fixed.echoes != moving.echoes) fail(Errc::ShapeMismatch, "echo counts differ between fixed and moving");
    const Vec3 center = mask_centroid(fixed_mask);
    const Vec3 moving_center = mask_centroid(moving_mask);
    constexpr double deg = std::numbers::pi / 180.0;

    std::array<double, 6> p{0, 0, 0, moving_center[0] - center[0], moving_center[1] - center[1],
                            moving_center[2] - center[2]};
    RegistrationResult result;
    const int factors[3] = {4, 2, 1};
    double best = 0.0;
    for (int li = 0; li < 3; ++li) {
        const int f = factors[li];
        const Level fl = downsample(fixed, fixed_mask, f);
        const Level ml = downsample(moving, moving_mask, f);
        Cost cost(fl, ml);
        if (cost.empty()) continue;
        if (li == 0) {
            if (cost.overlap(from_params(p, center)) < 0.25 && cost.overlap(RigidTransform{{}, {}, center}) < 0.25)
                fail(Errc::NoOverlap, "fixed and moving fields of view do not overlap");
            best = cost(from_params(p, center));
            const auto base = p;
            const double tr = opts.grid_translation_mm, ts = opts.grid_translation_step_mm;
            const int nt = ts > 0 ? int(std::floor(tr / ts + 1e-9)) : 0;
            for (int a = -nt; a <= nt; ++a)
                for (int b = -nt; b <= nt; ++b)
                    for (int c = -nt; c <= nt; ++c) {
                        auto q = base;
                        q[3] += a * ts;
                        q[4] += b * ts;
                        q[5] += c * ts;
                        const double v = cost(from_params(q, center));
                        if (v < best) {
                            best = v;
                            p = q;
                        }
                    }
            const double as = opts.grid_angle_step_deg * deg;
            const int na = as > 0 ? int(std::floor(opts.grid_angle_deg / opts.grid_angle_step_deg + 1e-9)) : 0;
            const auto tbase = p;
            for (int a = -na; a <= na; ++a)
                for (int b = -na; b <= na; ++b)
                    for (int c = -na; c <= na; ++c) {
                        auto q = tbase;
                        q[0] += a * as;
                        q[1] += b * as;
                        q[2] += c * as;
                        const double v = cost(from_params(q, center));
                        if (v < best) {
                            best = v;
                            p = q;
                        }
                    }
        } else {
            best = cost(from_params(p, center));
        }
        const double vox = std::min({double(fl.vol.spacing.sx), double(fl.vol.spacing.sy), double(fl.vol.spacing.sz)});
        best = refine(cost, p, best, center, 2.0 * deg / (1 << li), vox, 0.01 * deg, 0.01 * vox, opts.max_iterations);
        result.evaluations += cost.evaluations;
    }
    if (!std::isfinite(best)) fail(Errc::NoOverlap, "no transform keeps the fixed mask inside the moving volume");
    result.transform = from_params(p, center);
    for (double& a : result.transform.angles) a = wrap_angle(a);
    result.residual = best;
    if (result.residual > opts.max_residual)
        fail(Errc::DidNotConverge, "registration residual " + std::to_string(result.residual) + " above threshold");
    return result;
}

}  // namespace tvoc
