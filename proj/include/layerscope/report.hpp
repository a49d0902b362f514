#pragma once

// Per-layer report combining static receptive fields with saturation and
// probe measurements, tail-pattern detection, and JSON/CSV/SVG emission.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerscope/arch_graph.hpp"
#include "layerscope/probes.hpp"
#include "layerscope/rf_analysis.hpp"
#include "layerscope/saturation.hpp"
#include "layerscope/tensor_store.hpp"

namespace layerscope {

inline constexpr const char* kReportSchemaVersion = "1";

/// Contiguous layer range [begin, end) in conv order.
struct LayerRange {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  bool contains(int i) const { return i >= begin && i < end; }
  bool operator==(const LayerRange&) const = default;
};

struct TailReport {
  std::optional<LayerRange> tail;
  std::string anchor = "none";  // "prefix", "suffix" or "none"
  double tau = 0.5;
  double epsilon = 0.005;
  double outside_median = 0.0;
  /// acc[i] - acc[i - 1] for every tail layer i that has a predecessor.
  std::vector<double> probe_deltas;
  std::optional<double> mean_probe_delta;
  bool confirmed = false;
  /// Interior low-saturation runs; never reported as a tail.
  std::vector<LayerRange> anomalies;
};

/// Longest prefix or suffix whose every saturation is below tau times the
/// median saturation outside it; equal lengths prefer the suffix. NaN
/// entries mark missing values: they never join a tail and are left out of
/// medians. `probe_accs` is empty or one value per layer. The tail is
/// confirmed when every within-tail probe gain is below epsilon.
TailReport detect_tail(std::span<const double> saturations, std::span<const double> probe_accs,
                       double tau = 0.5, double epsilon = 0.005);

nlohmann::json tail_to_json(const TailReport& t);

struct LayerReport {
  std::string layer_name;
  int node_id = 0;
  long long r = 0;
  long long jump = 0;
  std::optional<int> spatial;
  std::optional<double> saturation;
  std::optional<std::size_t> saturation_k;
  std::optional<std::size_t> saturation_d;
  std::optional<double> probe_accuracy;
  std::optional<double> relative_probe_accuracy;
  bool is_border = false;
  bool in_tail = false;
  bool in_solving = false;
  bool in_compressing = false;
  std::vector<std::string> flags;  // e.g. "missing_saturation"
};

/// Measurements for one run, each stamped with the run they came from.
struct SaturationSet {
  std::string run_hash;
  std::map<std::string, SaturationResult> by_layer;
};

struct ProbeSet {
  std::string run_hash;
  std::map<std::string, double> accuracy;  // 4x4-pooled probes, by layer
  std::optional<double> readout_accuracy;  // probe on the global-pool vector
  std::vector<Heatmap> heatmaps;           // per-position probes
};

struct Thresholds {
  double delta = 0.99;
  double tau = 0.5;
  double epsilon = 0.005;
};

struct Report {
  std::string architecture;
  std::string arch_hash;
  std::optional<std::string> run_hash;
  std::optional<std::uint64_t> seed;
  std::optional<int> input_size;
  std::optional<double> model_accuracy;
  Thresholds thresholds;
  std::vector<LayerReport> layers;
  std::optional<std::string> border;
  TailReport tail;
  std::optional<double> readout_probe_accuracy;
  std::vector<Heatmap> heatmaps;
  nlohmann::json rf_note;
  nlohmann::json saturation_detail = nlohmann::json::object();  // per layer, full spectra
  nlohmann::json probe_detail = nlohmann::json::array();        // one entry per probe
  nlohmann::json run_extra = nlohmann::json::object();
};

/// Identity of a capture run: FNV-1a 64 of the manifest JSON.
std::string run_hash(const RunManifest& m);

/// Assemble the report for a captured run. Throws Error(RunMismatch) when the
/// graph, saturation or probe inputs belong to a different run.
Report build_report(const RunManifest& manifest, const ArchGraph& graph, const SaturationSet& sat,
                    const ProbeSet& probes, const Thresholds& thresholds);

/// Static-only report (no measurements) for the rf command.
Report build_static_report(const ArchGraph& graph, std::optional<int> input_size);

nlohmann::json report_to_json(const Report& r);
std::string report_to_csv(const Report& r);

/// Writes report.json and report.csv into `dir`.
void emit_report(const Report& r, const std::filesystem::path& dir);

/// Saturation bars, probe-accuracy line, border marker and shaded tail.
/// Throws Error(InvalidArgument) on a report without layers.
std::string render_chart(const Report& r);

/// Relative probe accuracy per position (accuracy / model accuracy) as a
/// grid of heat cells with a legend.
std::string render_heatmap(const Heatmap& h, double model_accuracy);

}  // namespace layerscope
