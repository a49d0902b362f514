#include "layerscope/pipeline.hpp"

#include <cmath>

#include "layerscope/error.hpp"
#include "layerscope/saturation.hpp"

namespace layerscope {

std::vector<int> read_labels(const RunManifest& m, const std::filesystem::path& run_dir) {
  if (m.labels_file.empty()) throw Error(ErrorCode::Validation, "run manifest lists no labels file");
  const TensorDump d = read_dump(run_dir / m.labels_file);
  std::vector<int> labels;
  labels.reserve(d.payload.size());
  for (float v : d.payload) {
    if (!std::isfinite(v) || v < 0.0f || v != std::floor(v)) {
      throw Error(ErrorCode::Validation, "labels dump holds a non-integer class id");
    }
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

SaturationSet compute_saturation(const RunManifest& m, const std::filesystem::path& run_dir, double delta,
                                 std::uint64_t block) {
  SaturationSet out;
  out.run_hash = run_hash(m);
  for (const ManifestLayer& l : m.layers) {
    if (l.kind != "conv") continue;
    BatchStream stream(run_dir / l.file, block);
    CovAccumulator acc(static_cast<std::size_t>(stream.shape().at(1)));
    std::vector<std::uint64_t> shape = stream.shape();
    while (auto b = stream.next()) {
      shape[0] = b->count;
      acc.accumulate(b->values, shape);
    }
    out.by_layer[l.name] = saturation_of(acc, delta);
  }
  return out;
}

ProbeSet compute_probes(const RunManifest& m, const std::filesystem::path& run_dir, const ProbeOptions& opts) {
  ProbeSet out;
  out.run_hash = run_hash(m);
  const std::vector<int> labels = read_labels(m, run_dir);
  ProbeConfig cfg = opts.config;
  if (cfg.num_classes == 0) cfg.num_classes = m.num_classes;
  for (const ManifestLayer& l : m.layers) {
    if (l.kind == "vector") {
      const TensorDump d = read_dump(run_dir / l.file);
      out.readout_accuracy = train_probe(extract_features(d, labels, FeatureMode::Vector), cfg).accuracy;
      continue;
    }
    // pooled features are built block by block so large maps never sit in memory whole
    BatchStream stream(run_dir / l.file, 64);
    const auto& shape = stream.shape();
    if (shape.size() != 4) throw Error(ErrorCode::DimensionMismatch, "conv dump '" + l.name + "' is not 4-D");
    if (shape[0] != labels.size()) {
      throw Error(ErrorCode::DimensionMismatch, "layer '" + l.name + "' and the labels differ in sample count");
    }
    const int c = static_cast<int>(shape[1]), h = static_cast<int>(shape[2]), w = static_cast<int>(shape[3]);
    ProbeFeatures f;
    f.layer_name = l.name;
    f.mode = FeatureMode::Pooled4x4;
    f.rows = labels.size();
    f.cols = static_cast<std::size_t>(16 * c);
    f.y = labels;
    f.x.reserve(f.rows * f.cols);
    const std::size_t per = stream.sample_size();
    while (auto b = stream.next()) {
      for (std::uint64_t s = 0; s < b->count; ++s) {
        const auto pooled = adaptive_avg_pool(std::span<const float>(b->values.data() + s * per, per), c, h, w, 4);
        f.x.insert(f.x.end(), pooled.begin(), pooled.end());
      }
    }
    out.accuracy[l.name] = train_probe(f, cfg).accuracy;
    if (opts.heatmap_layers.count(l.name)) {
      out.heatmaps.push_back(position_heatmap(read_dump(run_dir / l.file), labels, cfg));
    }
  }
  return out;
}

nlohmann::json saturation_set_to_json(const SaturationSet& s) {
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [name, r] : s.by_layer) layers[name] = saturation_to_json(r);
  return {{"run_hash", s.run_hash}, {"layers", layers}};
}

SaturationSet saturation_set_from_json(const nlohmann::json& j) {
  SaturationSet s;
  s.run_hash = j.at("run_hash").get<std::string>();
  for (const auto& [name, v] : j.at("layers").items()) {
    SaturationResult r;
    r.k = v.at("k").get<std::size_t>();
    r.d = v.at("d").get<std::size_t>();
    r.value = v.at("value").get<double>();
    r.delta = v.at("delta").get<double>();
    r.eigvals = v.at("eigvals").get<std::vector<double>>();
    s.by_layer[name] = std::move(r);
  }
  return s;
}

namespace {

nlohmann::json heatmap_json(const Heatmap& h) {
  return {{"layer", h.layer_name}, {"height", h.height}, {"width", h.width}, {"accuracy", h.accuracy}};
}

Heatmap heatmap_from(const nlohmann::json& j) {
  Heatmap h;
  h.layer_name = j.at("layer").get<std::string>();
  h.height = j.at("height").get<int>();
  h.width = j.at("width").get<int>();
  h.accuracy = j.at("accuracy").get<std::vector<double>>();
  return h;
}

template <typename T>
std::optional<T> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::json probe_set_to_json(const ProbeSet& p) {
  nlohmann::json heatmaps = nlohmann::json::array();
  for (const auto& h : p.heatmaps) heatmaps.push_back(heatmap_json(h));
  return {{"run_hash", p.run_hash},
          {"accuracy", p.accuracy},
          {"readout_accuracy", p.readout_accuracy ? nlohmann::json(*p.readout_accuracy) : nlohmann::json(nullptr)},
          {"heatmaps", heatmaps}};
}

ProbeSet probe_set_from_json(const nlohmann::json& j) {
  ProbeSet p;
  p.run_hash = j.at("run_hash").get<std::string>();
  p.accuracy = j.at("accuracy").get<std::map<std::string, double>>();
  p.readout_accuracy = opt_from<double>(j, "readout_accuracy");
  for (const auto& h : j.at("heatmaps")) p.heatmaps.push_back(heatmap_from(h));
  return p;
}

Report report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<std::string>() != kReportSchemaVersion) {
      throw Error(ErrorCode::VersionMismatch, "unsupported report schema " + j.at("schema_version").dump());
    }
    Report r;
    r.architecture = j.at("architecture").get<std::string>();
    r.arch_hash = j.at("arch_hash").get<std::string>();
    r.run_hash = opt_from<std::string>(j, "run_hash");
    r.seed = opt_from<std::uint64_t>(j, "seed");
    r.input_size = opt_from<int>(j, "input_size");
    r.model_accuracy = opt_from<double>(j, "model_accuracy");
    const auto& th = j.at("thresholds");
    r.thresholds = {th.at("delta").get<double>(), th.at("tau").get<double>(), th.at("epsilon").get<double>()};
    r.border = opt_from<std::string>(j, "border");
    for (const auto& l : j.at("layers")) {
      LayerReport lr;
      lr.layer_name = l.at("layer").get<std::string>();
      lr.node_id = l.at("node_id").get<int>();
      lr.r = l.at("r").get<long long>();
      lr.jump = l.at("jump").get<long long>();
      lr.spatial = opt_from<int>(l, "spatial");
      lr.saturation = opt_from<double>(l, "saturation");
      lr.saturation_k = opt_from<std::size_t>(l, "saturation_k");
      lr.saturation_d = opt_from<std::size_t>(l, "saturation_d");
      lr.probe_accuracy = opt_from<double>(l, "probe_accuracy");
      lr.relative_probe_accuracy = opt_from<double>(l, "relative_probe_accuracy");
      lr.is_border = l.at("is_border").get<bool>();
      lr.in_tail = l.at("in_tail").get<bool>();
      lr.in_solving = l.at("in_solving").get<bool>();
      lr.in_compressing = l.at("in_compressing").get<bool>();
      lr.flags = l.at("flags").get<std::vector<std::string>>();
      r.layers.push_back(std::move(lr));
    }
    const auto& t = j.at("tail");
    r.tail.anchor = t.at("anchor").get<std::string>();
    r.tail.tau = t.at("tau").get<double>();
    r.tail.epsilon = t.at("epsilon").get<double>();
    if (!t.at("tail").is_null()) {
      r.tail.tail = LayerRange{t.at("tail").at("begin").get<int>(), t.at("tail").at("end").get<int>()};
      r.tail.outside_median = t.at("outside_median").get<double>();
    }
    r.tail.probe_deltas = t.at("probe_deltas").get<std::vector<double>>();
    r.tail.mean_probe_delta = opt_from<double>(t, "mean_probe_delta");
    r.tail.confirmed = t.at("confirmed").get<bool>();
    for (const auto& a : t.at("anomalies")) r.tail.anomalies.push_back({a.at("begin").get<int>(), a.at("end").get<int>()});
    r.readout_probe_accuracy = opt_from<double>(j, "readout_probe_accuracy");
    for (const auto& h : j.at("heatmaps")) r.heatmaps.push_back(heatmap_from(h));
    r.rf_note = j.at("rf_note");
    r.saturation_detail = j.at("saturation");
    r.probe_detail = j.at("probes");
    r.run_extra = j.at("run");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed report: ") + e.what());
  }
}

}  // namespace layerscope
