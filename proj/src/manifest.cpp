#include "tvoc/manifest.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "tvoc/error.hpp"

namespace tvoc {
namespace fs = std::filesystem;
using nlohmann::json;

const VisitEntry* SubjectEntry::visit(std::string_view visit_id) const {
    for (const auto& v : visits)
        if (v.id == visit_id) return &v;
    return nullptr;
}

const SubjectEntry* Manifest::subject(std::string_view id) const {
    for (const auto& s : subjects)
        if (s.id == id) return &s;
    return nullptr;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::string relativize(const fs::path& base, const fs::path& p) {
    if (base.empty()) return p.generic_string();
    const fs::path rel = p.lexically_relative(base);
    if (rel.empty() || *rel.begin() == "..") return p.generic_string();
    return rel.generic_string();
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoFailure, "cannot open manifest " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("manifest: ") + e.what());
    }
    Manifest m;
    m.base_dir = path.parent_path();
    try {
        std::set<std::string> ids;
        for (const auto& js : doc.at("subjects")) {
            SubjectEntry s;
            s.id = js.at("id").get<std::string>();
            if (!ids.insert(s.id).second) fail(Errc::ParseError, "duplicate subject id " + s.id);
            for (const auto& jv : js.at("visits")) {
                VisitEntry v;
                v.id = jv.at("id").get<std::string>();
                for (const auto& [name, p] : jv.at("sequences").items())
                    v.sequences[name] = resolve(m.base_dir, p.get<std::string>());
                v.mask = resolve(m.base_dir, jv.at("mask").get<std::string>());
                if (jv.contains("labels")) {
                    for (const auto& [name, val] : jv.at("labels").items()) {
                        if (val.is_number_integer())
                            v.labels[name] = val.get<std::int64_t>();
                        else if (val.is_string())
                            v.labels[name] = val.get<std::string>();
                        else if (!val.is_null())
                            fail(Errc::ParseError, "label " + name + " must be integer or string");
                    }
                }
                s.visits.push_back(std::move(v));
            }
            m.subjects.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("manifest: ") + e.what());
    }
    return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
    json subjects = json::array();
    for (const auto& s : m.subjects) {
        json visits = json::array();
        for (const auto& v : s.visits) {
            json seqs = json::object();
            for (const auto& [name, p] : v.sequences) seqs[name] = relativize(m.base_dir, p);
            json labels = json::object();
            for (const auto& [name, val] : v.labels)
                std::visit([&](const auto& x) { labels[name] = x; }, val);
            visits.push_back({{"id", v.id}, {"sequences", seqs}, {"mask", relativize(m.base_dir, v.mask)}, {"labels", labels}});
        }
        subjects.push_back({{"id", s.id}, {"visits", visits}});
    }
    const std::string text = json{{"subjects", subjects}}.dump(2) + "\n";
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

LoadedVisit load_visit(const VisitEntry& entry) {
    LoadedVisit out;
    out.id = entry.id;
    out.labels = entry.labels;
    out.mask = read_mask(entry.mask);
    for (const auto& [name, p] : entry.sequences) {
        Volume v = read_volume(p);
        v.sequence_id = name;
        if (v.dims != out.mask.dims)
            fail(Errc::ShapeMismatch, "mask dims differ from sequence " + name + " in visit " + entry.id);
        out.sequences.emplace(name, std::move(v));
    }
    return out;
}

SubjectRecord load_subject(const SubjectEntry& entry) {
    SubjectRecord r;
    r.subject_id = entry.id;
    for (const auto& v : entry.visits) r.visits.push_back(load_visit(v));
    return r;
}

std::optional<std::int64_t> grade_label(const std::map<std::string, LabelValue>& labels, const std::string& name) {
    auto it = labels.find(name);
    if (it == labels.end()) return std::nullopt;
    if (const auto* v = std::get_if<std::int64_t>(&it->second)) return *v;
    return std::nullopt;
}

}  // namespace tvoc
