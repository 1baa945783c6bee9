#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tvoc/manifest.hpp"
#include "tvoc/patch.hpp"
#include "tvoc/registration.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/signature.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {

/// Texture of one class in one sequence: per-echo means, one standard deviation and
/// the smoothing width (voxels) of the underlying Gaussian random field.
struct ClassTexture {
    std::vector<double> mean;  // one per echo
    double sd = 1.0;
    double correlation = 1.0;
};

struct SequenceSpec {
    std::string id;
    int echoes = 1;
    std::vector<ClassTexture> classes;  // K_true entries
};

struct ArmSpec {
    std::string name;
    double dose = 0.0;
    int n_subjects = 10;
    std::vector<double> kernel;  // K_true x K_true, row-stochastic
};

/// grade = number of thresholds <= sum_k weights[k] * proportion[k].
struct GradeRule {
    std::string name;
    std::vector<double> weights;
    std::vector<double> thresholds;  // ascending
};

struct CohortSpec {
    Dims dims{96, 96, 24};
    Spacing spacing{1.5f, 1.5f, 3.0f};
    int k_true = 5;
    std::vector<SequenceSpec> sequences;
    std::vector<ArmSpec> arms;
    std::vector<double> base_proportions;  // mean class mix at baseline
    double proportion_spread = 0.5;        // log-normal jitter of the per-subject mix
    int regions = 24;
    double region_z_weight = 24.0;         // z distance scale in the region partition; > 1 gives slab-like regions
    std::vector<GradeRule> grades;
    double grade_margin = 0.02;  // baseline scores keep this distance from every threshold
    double motion_mm = 0.0;      // follow-up rigid motion: translation bound per axis
    double motion_deg = 0.0;     // and rotation bound per axis
    bool images = true;          // false: labels and masks only
    std::uint64_t seed = 1;
};

/// Five classes, three sequences (t1w, dixon, t2star) and n_arms arms with doses
/// 0, 1, ...; each dose unit moves a further `effect` of class 1 to class 0.
CohortSpec default_cohort_spec(int n_arms = 3, int subjects_per_arm = 20, double effect = 0.3);

/// SpecInvalid unless kernels are row-stochastic, dimensions agree, and every class
/// pair is separated by >= 3 pooled standard deviations in some sequence and echo.
void validate(const CohortSpec& spec);

struct SyntheticVisit {
    std::string id;
    std::vector<Volume> volumes;    // one per sequence (empty when spec.images is false)
    Mask mask;
    std::vector<std::int16_t> truth;  // class per voxel, -1 outside the mask
    std::vector<double> proportions;
    std::vector<std::int64_t> grades;  // one per rule
};

struct SyntheticSubject {
    std::string id;
    int arm = 0;
    std::vector<int> region_class_t0;
    std::vector<int> region_class_t1;
    std::vector<double> region_size;  // voxels per region
    RigidTransform motion;  // maps baseline-frame points to follow-up-frame points
    SyntheticVisit baseline;
    SyntheticVisit followup;
};

SyntheticSubject generate_subject(const CohortSpec& spec, int index);
std::vector<SyntheticSubject> generate_subjects(const CohortSpec& spec);

/// Writes VVOL1 volumes, masks and truth label volumes plus manifest.json under out_dir.
Manifest generate_cohort(const CohortSpec& spec, const std::filesystem::path& out_dir);

/// True class labels at the dense positions of a visit (all in-mask voxels on the
/// in-plane stride grid, every slice), as a cluster map over K_true classes.
ClusterMap ground_truth_map(const SyntheticVisit& visit, Spacing spacing, int stride);

/// Patches drawn from single-texture volumes: `per_class` patches of every class.
struct LabeledPatches {
    std::vector<Patch> patches;
    std::vector<int> labels;
};
LabeledPatches texture_patches(const SequenceSpec& seq, int per_class, int size, std::uint64_t seed);

/// Smoothed white noise with unit marginal variance.
std::vector<float> gaussian_field(Dims dims, double sigma, Rng& rng);

}  // namespace tvoc
