#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "sitebias/report.hpp"
#include "sitebias/run_config.hpp"

namespace sitebias::cli {

inline constexpr const char* kToolName = "sitebias";
inline constexpr const char* kToolVersion = "1.0.0";

// Each command writes only under config "out" and returns the JSON fragment it
// also saved there as <command>.json.
json cmd_synth(const RunConfig& config, std::ostream& log);
json cmd_audit(const RunConfig& config, std::ostream& log);
json cmd_debias(const RunConfig& config, std::ostream& log);
json cmd_sweep(const RunConfig& config, std::ostream& log);
json cmd_cca(const RunConfig& config, std::ostream& log);
json cmd_tsne(const RunConfig& config, std::ostream& log);

/// Merges fragments into report.json and report.txt under `out`. Fragments
/// whose configs differ (ignoring out and checkpoint) are rejected.
json cmd_report(std::span<const std::filesystem::path> fragments, const std::filesystem::path& out,
                std::ostream& log);

/// Metric-bearing content of a fragment or report (timings dropped), for
/// reproducibility comparisons.
json strip_timings(json fragment);

/// Full command line: parses flags, dispatches, maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sitebias::cli
