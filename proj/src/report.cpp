#include "layerscope/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "layerscope/error.hpp"

namespace layerscope {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median of the finite saturations outside [begin, end); NaN when none remain.
double outside_median(std::span<const double> s, int begin, int end) {
  std::vector<double> out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i) {
    if ((i < begin || i >= end) && std::isfinite(s[static_cast<std::size_t>(i)])) {
      out.push_back(s[static_cast<std::size_t>(i)]);
    }
  }
  return out.empty() ? std::nan("") : median(std::move(out));
}

bool qualifies(std::span<const double> s, int begin, int end, double tau, double* med) {
  const double m = outside_median(s, begin, end);
  if (!std::isfinite(m)) return false;
  for (int i = begin; i < end; ++i) {
    const double v = s[static_cast<std::size_t>(i)];
    if (!std::isfinite(v) || !(v < tau * m)) return false;
  }
  *med = m;
  return true;
}

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string fnv_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json range_json(const LayerRange& r) { return {{"begin", r.begin}, {"end", r.end}}; }

}  // namespace

TailReport detect_tail(std::span<const double> s, std::span<const double> probe_accs, double tau,
                       double epsilon) {
  const int n = static_cast<int>(s.size());
  if (n < 3) throw Error(ErrorCode::InvalidArgument, "tail detection needs at least 3 conv layers");
  if (!probe_accs.empty() && probe_accs.size() != s.size()) {
    throw Error(ErrorCode::DimensionMismatch, "probe accuracies must match the saturation count");
  }
  if (!(tau > 0.0) || !(epsilon >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "tau must be > 0 and epsilon >= 0");
  }
  TailReport t;
  t.tau = tau;
  t.epsilon = epsilon;

  int best_prefix = 0, best_suffix = 0;
  double med_prefix = 0.0, med_suffix = 0.0;
  for (int len = n - 1; len >= 1 && (best_prefix == 0 || best_suffix == 0); --len) {
    double m = 0.0;
    if (best_prefix == 0 && qualifies(s, 0, len, tau, &m)) {
      best_prefix = len;
      med_prefix = m;
    }
    if (best_suffix == 0 && qualifies(s, n - len, n, tau, &m)) {
      best_suffix = len;
      med_suffix = m;
    }
  }
  if (best_suffix > 0 && best_suffix >= best_prefix) {
    t.tail = LayerRange{n - best_suffix, n};
    t.anchor = "suffix";
    t.outside_median = med_suffix;
  } else if (best_prefix > 0) {
    t.tail = LayerRange{0, best_prefix};
    t.anchor = "prefix";
    t.outside_median = med_prefix;
  }

  if (t.tail && !probe_accs.empty()) {
    for (int i = std::max(1, t.tail->begin); i < t.tail->end; ++i) {
      t.probe_deltas.push_back(probe_accs[static_cast<std::size_t>(i)] - probe_accs[static_cast<std::size_t>(i - 1)]);
    }
    if (!t.probe_deltas.empty()) {
      t.mean_probe_delta = std::accumulate(t.probe_deltas.begin(), t.probe_deltas.end(), 0.0) /
                           static_cast<double>(t.probe_deltas.size());
      t.confirmed = std::all_of(t.probe_deltas.begin(), t.probe_deltas.end(),
                                [&](double d) { return std::isfinite(d) && d < epsilon; });
    }
  }

  // interior runs of layers far below the overall median
  const double all_median = outside_median(s, 0, 0);
  if (std::isfinite(all_median)) {
    std::optional<int> start;
    for (int i = 0; i <= n; ++i) {
      const bool low = i < n && !(t.tail && t.tail->contains(i)) &&
                       std::isfinite(s[static_cast<std::size_t>(i)]) &&
                       s[static_cast<std::size_t>(i)] < tau * all_median;
      if (low && !start) start = i;
      if (!low && start) {
        if (*start > 0 && i < n) {
          t.anomalies.push_back({*start, i});
        }
        start.reset();
      }
    }
  }
  return t;
}

nlohmann::json tail_to_json(const TailReport& t) {
  nlohmann::json j;
  j["tail"] = t.tail ? range_json(*t.tail) : nlohmann::json(nullptr);
  j["anchor"] = t.anchor;
  j["tau"] = t.tau;
  j["epsilon"] = t.epsilon;
  j["outside_median"] = t.tail ? nlohmann::json(t.outside_median) : nlohmann::json(nullptr);
  j["probe_deltas"] = t.probe_deltas;
  j["mean_probe_delta"] = opt(t.mean_probe_delta);
  j["confirmed"] = t.confirmed;
  j["anomalies"] = nlohmann::json::array();
  for (const auto& a : t.anomalies) j["anomalies"].push_back(range_json(a));
  return j;
}

std::string run_hash(const RunManifest& m) { return fnv_hex(m.to_json().dump()); }

namespace {

// Layers, RF columns and stage flags shared by the static and measured reports.
void fill_static(Report& r, const ArchGraph& graph, const std::vector<int>& conv_ids,
                 std::optional<int> input_size) {
  const RFResult rf = compute_rf(graph, input_size);
  r.architecture = graph.name();
  r.arch_hash = arch_hash(graph);
  r.input_size = input_size;
  r.rf_note = rf_formula_note(graph, rf);
  std::optional<BorderReport> border;
  if (input_size) border = border_layer(graph, rf, *input_size);
  if (border && border->border_node) r.border = graph.node(*border->border_node).name;
  for (int id : conv_ids) {
    LayerReport l;
    l.layer_name = graph.node(id).name;
    l.node_id = id;
    l.r = rf.r_of(id);
    l.jump = rf.jump_of(id);
    if (!rf.spatial.empty()) l.spatial = rf.spatial[static_cast<std::size_t>(id)];
    if (border) {
      l.is_border = border->border_node == id;
      l.in_compressing = std::count(border->compressing.begin(), border->compressing.end(), id) > 0;
      l.in_solving = !l.in_compressing;
    }
    r.layers.push_back(std::move(l));
  }
}

}  // namespace

Report build_static_report(const ArchGraph& graph, std::optional<int> input_size) {
  Report r;
  fill_static(r, graph, graph.conv_ids(), input_size);
  return r;
}

Report build_report(const RunManifest& manifest, const ArchGraph& graph, const SaturationSet& sat,
                    const ProbeSet& probes, const Thresholds& thresholds) {
  const std::string hash = run_hash(manifest);
  if (manifest.arch_hash != arch_hash(graph)) {
    throw Error(ErrorCode::RunMismatch, "architecture hash " + arch_hash(graph) +
                                            " does not match the run manifest (" + manifest.arch_hash + ")");
  }
  if (sat.run_hash != hash) {
    throw Error(ErrorCode::RunMismatch, "saturation results come from run " + sat.run_hash + ", expected " + hash);
  }
  if (probes.run_hash != hash) {
    throw Error(ErrorCode::RunMismatch, "probe results come from run " + probes.run_hash + ", expected " + hash);
  }

  std::vector<int> conv_ids;
  for (const ManifestLayer& l : manifest.layers) {
    if (l.kind != "conv") continue;
    const auto id = graph.find(l.source_conv.empty() ? l.name : l.source_conv);
    if (!id) throw Error(ErrorCode::RunMismatch, "manifest layer '" + l.name + "' is not in the architecture");
    conv_ids.push_back(*id);
  }

  Report r;
  fill_static(r, graph, conv_ids, manifest.input_size);
  r.architecture = manifest.architecture;
  r.run_hash = hash;
  r.seed = manifest.seed;
  r.model_accuracy = manifest.model_accuracy;
  r.thresholds = thresholds;
  r.readout_probe_accuracy = probes.readout_accuracy;
  r.heatmaps = probes.heatmaps;
  r.run_extra = manifest.extra;

  for (const auto& [name, res] : sat.by_layer) r.saturation_detail[name] = saturation_to_json(res);
  const auto probe_entry = [&](const std::string& layer, const char* mode, double acc, nlohmann::json pos) {
    const bool rel = manifest.model_accuracy > 0.0;
    r.probe_detail.push_back({{"layer", layer},
                              {"mode", mode},
                              {"accuracy", acc},
                              {"relative_accuracy", rel ? nlohmann::json(acc / manifest.model_accuracy) : nlohmann::json(nullptr)},
                              {"position", std::move(pos)}});
  };
  for (const ManifestLayer& l : manifest.layers) {
    if (l.kind == "conv" && probes.accuracy.count(l.name)) {
      probe_entry(l.name, "pooled4x4", probes.accuracy.at(l.name), nullptr);
    }
    if (l.kind == "vector" && probes.readout_accuracy) probe_entry(l.name, "vector", *probes.readout_accuracy, nullptr);
  }
  for (const Heatmap& h : probes.heatmaps) {
    for (int y = 0; y < h.height; ++y) {
      for (int x = 0; x < h.width; ++x) {
        probe_entry(h.layer_name, "per_position", h.accuracy[static_cast<std::size_t>(y) * h.width + x], {y, x});
      }
    }
  }

  std::vector<double> sats, accs;
  bool have_all_probes = true;
  for (LayerReport& l : r.layers) {
    if (auto it = sat.by_layer.find(l.layer_name); it != sat.by_layer.end()) {
      l.saturation = it->second.value;
      l.saturation_k = it->second.k;
      l.saturation_d = it->second.d;
    } else {
      l.flags.push_back("missing_saturation");
    }
    if (auto it = probes.accuracy.find(l.layer_name); it != probes.accuracy.end()) {
      l.probe_accuracy = it->second;
      if (manifest.model_accuracy > 0.0) {
        l.relative_probe_accuracy = relative_performance(it->second, manifest.model_accuracy);
      }
    } else {
      l.flags.push_back("missing_probe");
      have_all_probes = false;
    }
    sats.push_back(l.saturation.value_or(std::nan("")));
    accs.push_back(l.probe_accuracy.value_or(std::nan("")));
  }

  r.tail.tau = thresholds.tau;
  r.tail.epsilon = thresholds.epsilon;
  if (r.layers.size() >= 3) {
    r.tail = detect_tail(sats, have_all_probes ? std::span<const double>(accs) : std::span<const double>(),
                         thresholds.tau, thresholds.epsilon);
    if (r.tail.tail) {
      for (int i = r.tail.tail->begin; i < r.tail.tail->end; ++i) r.layers[static_cast<std::size_t>(i)].in_tail = true;
    }
  }
  return r;
}

nlohmann::json report_to_json(const Report& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["architecture"] = r.architecture;
  j["arch_hash"] = r.arch_hash;
  j["run_hash"] = opt(r.run_hash);
  j["seed"] = opt(r.seed);
  j["input_size"] = opt(r.input_size);
  j["model_accuracy"] = opt(r.model_accuracy);
  j["thresholds"] = {{"delta", r.thresholds.delta}, {"tau", r.thresholds.tau}, {"epsilon", r.thresholds.epsilon}};
  j["border"] = opt(r.border);
  j["layers"] = nlohmann::json::array();
  for (const LayerReport& l : r.layers) {
    j["layers"].push_back({{"layer", l.layer_name},
                           {"node_id", l.node_id},
                           {"r", l.r},
                           {"jump", l.jump},
                           {"spatial", opt(l.spatial)},
                           {"saturation", opt(l.saturation)},
                           {"saturation_k", opt(l.saturation_k)},
                           {"saturation_d", opt(l.saturation_d)},
                           {"probe_accuracy", opt(l.probe_accuracy)},
                           {"relative_probe_accuracy", opt(l.relative_probe_accuracy)},
                           {"is_border", l.is_border},
                           {"in_tail", l.in_tail},
                           {"in_solving", l.in_solving},
                           {"in_compressing", l.in_compressing},
                           {"flags", l.flags}});
  }
  j["tail"] = tail_to_json(r.tail);
  j["readout_probe_accuracy"] = opt(r.readout_probe_accuracy);
  j["heatmaps"] = nlohmann::json::array();
  for (const Heatmap& h : r.heatmaps) {
    j["heatmaps"].push_back({{"layer", h.layer_name}, {"height", h.height}, {"width", h.width}, {"accuracy", h.accuracy}});
  }
  j["rf_note"] = r.rf_note;
  j["saturation"] = r.saturation_detail;
  j["probes"] = r.probe_detail;
  j["run"] = r.run_extra;
  return j;
}

std::string report_to_csv(const Report& r) {
  std::ostringstream out;
  out << "layer,node_id,r,jump,spatial,saturation,saturation_k,saturation_d,probe_accuracy,"
         "relative_probe_accuracy,is_border,in_tail,in_solving,in_compressing,flags\n";
  // numbers use the JSON spelling so both files carry identical values
  const auto cell = [](const nlohmann::json& v) { return v.is_null() ? std::string() : v.dump(); };
  for (const LayerReport& l : r.layers) {
    std::string flags;
    for (const auto& f : l.flags) flags += (flags.empty() ? "" : ";") + f;
    out << l.layer_name << ',' << l.node_id << ',' << l.r << ',' << l.jump << ',' << cell(opt(l.spatial)) << ','
        << cell(opt(l.saturation)) << ',' << cell(opt(l.saturation_k)) << ',' << cell(opt(l.saturation_d)) << ','
        << cell(opt(l.probe_accuracy)) << ',' << cell(opt(l.relative_probe_accuracy)) << ',' << l.is_border << ','
        << l.in_tail << ',' << l.in_solving << ',' << l.in_compressing << ',' << flags << '\n';
  }
  return out.str();
}

void emit_report(const Report& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary);
    f << text;
    if (!f) throw Error(ErrorCode::Io, "cannot write " + (dir / name).string());
  };
  write("report.json", report_to_json(r).dump(2) + "\n");
  write("report.csv", report_to_csv(r));
}

}  // namespace layerscope
