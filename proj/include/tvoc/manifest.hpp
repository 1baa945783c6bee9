#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tvoc/volume.hpp"

namespace tvoc {

/// Ordinal grade or categorical value (e.g. treatment arm name).
using LabelValue = std::variant<std::int64_t, std::string>;

struct VisitEntry {
    std::string id;
    std::map<std::string, std::filesystem::path> sequences;  // sequence_id -> VVOL1 path
    std::filesystem::path mask;
    std::map<std::string, LabelValue> labels;
};

struct SubjectEntry {
    std::string id;
    std::vector<VisitEntry> visits;

    const VisitEntry* visit(std::string_view visit_id) const;
};

/// Cohort manifest: {subjects:[{id, visits:[{id, sequences:{name:path}, mask:path, labels:{...}}]}]}.
/// Relative paths are resolved against the manifest's directory on load.
struct Manifest {
    std::vector<SubjectEntry> subjects;
    std::filesystem::path base_dir;

    const SubjectEntry* subject(std::string_view id) const;
};

Manifest load_manifest(const std::filesystem::path& path);
/// Paths under base_dir are written relative to it.
void save_manifest(const Manifest& m, const std::filesystem::path& path);

struct LoadedVisit {
    std::string id;
    std::map<std::string, Volume> sequences;
    Mask mask;
    std::map<std::string, LabelValue> labels;
};

struct SubjectRecord {
    std::string subject_id;
    std::vector<LoadedVisit> visits;
};

/// Loads every volume of a subject; validates mask/volume dims agree.
SubjectRecord load_subject(const SubjectEntry& entry);
LoadedVisit load_visit(const VisitEntry& entry);

std::optional<std::int64_t> grade_label(const std::map<std::string, LabelValue>& labels, const std::string& name);

}  // namespace tvoc
