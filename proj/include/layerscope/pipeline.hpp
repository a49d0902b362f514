#pragma once

// Measurement stages over a capture run directory: streaming saturation,
// probe training and report assembly. Shared by the CLI and the test suites.

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "layerscope/probes.hpp"
#include "layerscope/report.hpp"
#include "layerscope/tensor_store.hpp"

namespace layerscope {

/// Labels dump of a run as class ids.
std::vector<int> read_labels(const RunManifest& m, const std::filesystem::path& run_dir);

/// Saturation of every conv dump, streamed in sample blocks.
SaturationSet compute_saturation(const RunManifest& m, const std::filesystem::path& run_dir,
                                 double delta, std::uint64_t block = 64);

struct ProbeOptions {
  ProbeConfig config;
  /// Conv layers that also get a per-position heatmap.
  std::set<std::string> heatmap_layers;
};

/// 4x4-pooled probe per conv dump, a vector probe on the global-pool dump,
/// and the requested heatmaps.
ProbeSet compute_probes(const RunManifest& m, const std::filesystem::path& run_dir, const ProbeOptions& opts);

nlohmann::json saturation_set_to_json(const SaturationSet& s);
SaturationSet saturation_set_from_json(const nlohmann::json& j);
nlohmann::json probe_set_to_json(const ProbeSet& p);
ProbeSet probe_set_from_json(const nlohmann::json& j);

/// Inverse of report_to_json, used to re-render charts from report.json.
Report report_from_json(const nlohmann::json& j);

}  // namespace layerscope
