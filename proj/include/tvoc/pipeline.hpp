#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "tvoc/config.hpp"

namespace tvoc {

/// Stage names in pipeline order.
const std::vector<std::string>& stage_names();

/// Runs one stage. Outputs land under cfg.out_dir together with <stage>.meta.json
/// (stage, config hash, seed, version, output list). MissingArtifact if an upstream
/// stage has not been run.
void run_stage(const std::string& stage, const RunConfig& cfg, std::ostream& log);

/// Every stage from synth through report, in order.
void run_all(const RunConfig& cfg, std::ostream& log);

std::filesystem::path meta_path(const RunConfig& cfg, const std::string& stage);

}  // namespace tvoc
