#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tvoc {

enum class FusionMode { SF, IF };

/// Flat run configuration. Text form: one `key = value` per line, '#' starts a comment.
/// Lists are comma separated. `dcn.k.<sequence>` overrides dcn.k for one sequence.
struct RunConfig {
    std::filesystem::path out_dir = "run";
    std::filesystem::path manifest;  // empty: <out_dir>/cohort/manifest.json
    std::uint64_t seed = 1;

    // synth
    int synth_arms = 3;
    int synth_subjects_per_arm = 20;
    double synth_effect = 0.3;
    int synth_nx = 96, synth_ny = 96, synth_nz = 24;
    int synth_regions = 24;
    double synth_region_z_weight = 24.0;
    double synth_motion_mm = 0.0;
    double synth_motion_deg = 0.0;

    // patching
    int patch_size = 32;
    int patch_stride = 16;
    int patch_count = 4000;  // M, per sequence

    // dcn
    int dcn_k = 5;
    std::map<std::string, int> dcn_k_by_sequence;
    double dcn_lambda = 0.5;
    int dcn_pretrain_epochs = 10;
    int dcn_epochs = 10;
    int dcn_batch = 32;
    double dcn_lr = 1e-3;
    double dcn_momentum = 0.9;
    double dcn_holdout = 0.1;
    int dcn_kmeans_restarts = 10;

    // fusion
    FusionMode fusion = FusionMode::SF;
    std::vector<std::string> sequences{"t1w", "dixon", "t2star"};
    std::string reference = "t1w";

    // longitudinal
    std::string baseline_visit = "v0";
    std::string followup_visit = "v1";
    std::string arm_label = "dose";
    bool register_visits = true;
    std::string register_on = "mask";  // "mask": liver masks; "intensity": the reference sequence

    // analysis
    int phenotypes = 7;
    std::size_t n_perm = 1000;
    int folds = 5;
    int trees = 500;
    std::int64_t low_grade_max = 1;
    double alpha = 0.05;
    std::vector<std::string> grades{"steatosis", "inflammation", "fibrosis"};

    std::filesystem::path manifest_path() const;
    int k_for(const std::string& sequence) const;
    /// Sequences the DCN stages operate on: the configured list for SF, {"if"} for IF.
    std::vector<std::string> model_sequences() const;
};

/// ConfigInvalid on unknown keys, malformed values or violated bounds.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
void validate(const RunConfig& cfg);

/// Canonical text (every key, sorted); parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);
/// FNV-1a of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace tvoc
