#pragma once

#include <array>
#include <limits>

#include "tvoc/volume.hpp"

namespace tvoc {

using Vec3 = std::array<double, 3>;

/// Rigid map p -> R (p - center) + center + translation, with R = Rz * Ry * Rx.
/// Points are physical (mm): voxel index times spacing.
struct RigidTransform {
    Vec3 angles{0, 0, 0};       // rx, ry, rz in radians, wrapped to (-pi, pi]
    Vec3 translation{0, 0, 0};  // mm
    Vec3 center{0, 0, 0};       // mm

    static RigidTransform identity() { return {}; }
    std::array<double, 9> rotation() const;
    Vec3 apply(const Vec3& p) const;
    /// Exact inverse, returned as a rotation about the same center.
    RigidTransform inverse() const;
    /// Composition: (a * b)(p) = a(b(p)).
    friend RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
};

double wrap_angle(double a);
std::array<double, 9> euler_zyx(const Vec3& angles);
/// Inverse of euler_zyx; picks the branch with |ry| <= pi/2.
Vec3 euler_from_matrix(const std::array<double, 9>& r);

/// Trilinear sample of echo e at fractional voxel coordinates; nullopt-like NaN outside the grid.
double sample_trilinear(const Volume& v, int echo, double x, double y, double z);

/// Resamples `moving` onto the grid of a fixed volume: out(p) = moving(t(p)), zero outside.
Volume resample(const Volume& moving, Dims fixed_dims, Spacing fixed_spacing, const RigidTransform& t);
Mask resample_mask(const Mask& moving, Dims fixed_dims, Spacing fixed_spacing, const RigidTransform& t);

struct RegistrationOptions {
    double grid_translation_mm = 30.0;
    double grid_translation_step_mm = 6.0;
    double grid_angle_deg = 15.0;
    double grid_angle_step_deg = 5.0;
    int max_iterations = 400;      // coordinate-descent sweeps per level
    double max_residual = std::numeric_limits<double>::infinity();
};

struct RegistrationResult {
    RigidTransform transform;  // fixed-frame point -> moving-frame point
    double residual = 0.0;     // final in-mask MSE at full resolution
    int evaluations = 0;
};

/// Minimizes the mean squared intensity difference over the fixed mask (all echoes),
/// coarse-to-fine over 4x, 2x and 1x downsampling. The coarse level starts from the
/// mask-centroid offset and grid-searches translation, then rotation, before refining.
RegistrationResult register_rigid(const Volume& fixed, const Mask& fixed_mask, const Volume& moving,
                                  const Mask& moving_mask, const RegistrationOptions& opts = {});

}  // namespace tvoc
