#include "tvoc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "tvoc/error.hpp"
#include "tvoc/rng.hpp"
#include "tvoc/table.hpp"
#include "tvoc/volume.hpp"

namespace tvoc {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view want) {
    fail(Errc::ConfigInvalid, std::string(key) + ": expected " + std::string(want) + ", got '" + std::string(value) + "'");
}

std::int64_t to_int(std::string_view key, std::string_view v) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

double to_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    try {
        out = parse_number(v);
    } catch (const Error&) {
        bad_value(key, v, "a number");
    }
    if (!std::isfinite(out)) bad_value(key, v, "a finite number");
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(key, v, "true or false");
}

std::vector<std::string> to_list(std::string_view v) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= v.size()) {
        const std::size_t comma = std::min(v.find(',', start), v.size());
        std::string item = trim(v.substr(start, comma - start));
        if (!item.empty()) out.push_back(std::move(item));
        start = comma + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
    return out;
}

struct Key {
    const char* name;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Key int_key(const char* name, T RunConfig::*field) {
    return {name, [=](RunConfig& c, std::string_view v) { c.*field = static_cast<T>(to_int(name, v)); },
            [=](const RunConfig& c) { return std::to_string(c.*field); }};
}

Key double_key(const char* name, double RunConfig::*field) {
    return {name, [=](RunConfig& c, std::string_view v) { c.*field = to_double(name, v); },
            [=](const RunConfig& c) { return format_number(c.*field); }};
}

Key string_key(const char* name, std::string RunConfig::*field) {
    return {name, [=](RunConfig& c, std::string_view v) { c.*field = std::string(v); },
            [=](const RunConfig& c) { return c.*field; }};
}

Key list_key(const char* name, std::vector<std::string> RunConfig::*field) {
    return {name, [=](RunConfig& c, std::string_view v) { c.*field = to_list(v); },
            [=](const RunConfig& c) { return join(c.*field); }};
}

const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        {"out_dir", [](RunConfig& c, std::string_view v) { c.out_dir = std::string(v); },
         [](const RunConfig& c) { return c.out_dir.generic_string(); }},
        {"manifest", [](RunConfig& c, std::string_view v) { c.manifest = std::string(v); },
         [](const RunConfig& c) { return c.manifest.generic_string(); }},
        int_key("seed", &RunConfig::seed),
        int_key("synth.arms", &RunConfig::synth_arms),
        int_key("synth.subjects_per_arm", &RunConfig::synth_subjects_per_arm),
        double_key("synth.effect", &RunConfig::synth_effect),
        int_key("synth.nx", &RunConfig::synth_nx),
        int_key("synth.ny", &RunConfig::synth_ny),
        int_key("synth.nz", &RunConfig::synth_nz),
        int_key("synth.regions", &RunConfig::synth_regions),
        double_key("synth.region_z_weight", &RunConfig::synth_region_z_weight),
        double_key("synth.motion_mm", &RunConfig::synth_motion_mm),
        double_key("synth.motion_deg", &RunConfig::synth_motion_deg),
        int_key("patch.size", &RunConfig::patch_size),
        int_key("patch.stride", &RunConfig::patch_stride),
        int_key("patch.count", &RunConfig::patch_count),
        int_key("dcn.k", &RunConfig::dcn_k),
        double_key("dcn.lambda", &RunConfig::dcn_lambda),
        int_key("dcn.pretrain_epochs", &RunConfig::dcn_pretrain_epochs),
        int_key("dcn.epochs", &RunConfig::dcn_epochs),
        int_key("dcn.batch", &RunConfig::dcn_batch),
        double_key("dcn.lr", &RunConfig::dcn_lr),
        double_key("dcn.momentum", &RunConfig::dcn_momentum),
        double_key("dcn.holdout", &RunConfig::dcn_holdout),
        int_key("dcn.kmeans_restarts", &RunConfig::dcn_kmeans_restarts),
        {"fusion.mode",
         [](RunConfig& c, std::string_view v) {
             if (v == "SF" || v == "sf") c.fusion = FusionMode::SF;
             else if (v == "IF" || v == "if") c.fusion = FusionMode::IF;
             else bad_value("fusion.mode", v, "SF or IF");
         },
         [](const RunConfig& c) { return std::string(c.fusion == FusionMode::SF ? "SF" : "IF"); }},
        list_key("fusion.sequences", &RunConfig::sequences),
        string_key("fusion.reference", &RunConfig::reference),
        string_key("longitudinal.baseline", &RunConfig::baseline_visit),
        string_key("longitudinal.followup", &RunConfig::followup_visit),
        string_key("longitudinal.arm_label", &RunConfig::arm_label),
        {"longitudinal.register", [](RunConfig& c, std::string_view v) { c.register_visits = to_bool("longitudinal.register", v); },
         [](const RunConfig& c) { return std::string(c.register_visits ? "true" : "false"); }},
        {"longitudinal.register_on",
         [](RunConfig& c, std::string_view v) {
             if (v != "mask" && v != "intensity") bad_value("longitudinal.register_on", v, "mask or intensity");
             c.register_on = std::string(v);
         },
         [](const RunConfig& c) { return c.register_on; }},
        int_key("analysis.phenotypes", &RunConfig::phenotypes),
        int_key("analysis.n_perm", &RunConfig::n_perm),
        int_key("analysis.folds", &RunConfig::folds),
        int_key("analysis.trees", &RunConfig::trees),
        int_key("analysis.low_grade_max", &RunConfig::low_grade_max),
        double_key("analysis.alpha", &RunConfig::alpha),
        list_key("analysis.grades", &RunConfig::grades),
    };
    return k;
}

}  // namespace

std::filesystem::path RunConfig::manifest_path() const {
    return manifest.empty() ? out_dir / "cohort" / "manifest.json" : manifest;
}

int RunConfig::k_for(const std::string& sequence) const {
    const auto it = dcn_k_by_sequence.find(sequence);
    return it == dcn_k_by_sequence.end() ? dcn_k : it->second;
}

std::vector<std::string> RunConfig::model_sequences() const {
    if (fusion == FusionMode::IF) return {"if"};
    return sequences;
}

void set_config_value(RunConfig& cfg, std::string_view key_in, std::string_view value_in) {
    const std::string key = trim(key_in), value = trim(value_in);
    if (key.starts_with("dcn.k.") && key.size() > 6) {
        cfg.dcn_k_by_sequence[key.substr(6)] = int(to_int(key, value));
        return;
    }
    for (const Key& k : keys())
        if (key == k.name) {
            k.set(cfg, value);
            return;
        }
    fail(Errc::ConfigInvalid, "unknown key '" + key + "'");
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": expected key = value");
        set_config_value(cfg, std::string_view(line).substr(0, eq), std::string_view(line).substr(eq + 1));
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(Errc::ConfigInvalid, "config file not found: " + path.string());
    const std::vector<std::uint8_t> bytes = read_file(path);
    return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& m) {
        if (!ok) fail(Errc::ConfigInvalid, m);
    };
    need(c.dcn_k >= 2, "dcn.k must be >= 2");
    for (const auto& [seq, k] : c.dcn_k_by_sequence) need(k >= 2, "dcn.k." + seq + " must be >= 2");
    need(c.folds >= 2, "analysis.folds must be >= 2");
    need(c.synth_arms >= 2, "synth.arms must be >= 2");
    need(c.synth_subjects_per_arm >= 1, "synth.subjects_per_arm must be >= 1");
    need(c.synth_nx >= 8 && c.synth_ny >= 8 && c.synth_nz >= 1, "synth dims too small");
    need(c.synth_regions >= 1, "synth.regions must be >= 1");
    need(c.synth_region_z_weight > 0, "synth.region_z_weight must be positive");
    need(c.patch_size >= 8 && c.patch_size % 8 == 0, "patch.size must be a positive multiple of 8");
    need(c.patch_stride >= 1, "patch.stride must be >= 1");
    need(c.patch_count >= 1, "patch.count must be >= 1");
    need(c.dcn_epochs >= 0 && c.dcn_pretrain_epochs >= 0, "epoch counts must be >= 0");
    need(c.dcn_batch >= 1, "dcn.batch must be >= 1");
    need(c.dcn_lr > 0, "dcn.lr must be > 0");
    need(c.dcn_lambda >= 0, "dcn.lambda must be >= 0");
    need(c.dcn_holdout >= 0 && c.dcn_holdout < 1, "dcn.holdout must lie in [0, 1)");
    need(c.dcn_kmeans_restarts >= 1, "dcn.kmeans_restarts must be >= 1");
    need(!c.sequences.empty(), "fusion.sequences is empty");
    need(std::set<std::string>(c.sequences.begin(), c.sequences.end()).size() == c.sequences.size(),
         "fusion.sequences lists a sequence twice");
    need(std::find(c.sequences.begin(), c.sequences.end(), c.reference) != c.sequences.end(),
         "fusion.reference is not among fusion.sequences");
    need(c.phenotypes >= 1, "analysis.phenotypes must be >= 1");
    need(c.trees >= 1, "analysis.trees must be >= 1");
    need(c.alpha > 0 && c.alpha < 1, "analysis.alpha must lie in (0, 1)");
}

std::string to_text(const RunConfig& cfg) {
    std::vector<std::pair<std::string, std::string>> lines;
    for (const Key& k : keys()) lines.emplace_back(k.name, k.get(cfg));
    for (const auto& [seq, k] : cfg.dcn_k_by_sequence) lines.emplace_back("dcn.k." + seq, std::to_string(k));
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& [k, v] : lines) out += k + " = " + v + "\n";
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_text(cfg))));
    return buf;
}

}  // namespace tvoc
