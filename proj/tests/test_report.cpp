#include <gtest/gtest.h>

#include <cmath>
#include <regex>
#include <sstream>

#include "layerscope/pipeline.hpp"
#include "layerscope/report.hpp"
#include "test_support.hpp"

using namespace layerscope;
using test_support::code_of;
using test_support::TempDir;

namespace {

const double kNaN = std::nan("");

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// Five 3x3 convs with two pools: r = 3, 5, 10, 14, 24. At 8 px conv3 already
// sees more than the image, so conv4 is the border.
const char* kFiveConv =
    "input 1\n"
    "conv conv1 k=3 s=1 d=1 p=1 ch=4 from=input\n"
    "conv conv2 k=3 s=1 d=1 p=1 ch=4 from=conv1\n"
    "maxpool pool1 k=2 s=2 from=conv2\n"
    "conv conv3 k=3 s=1 d=1 p=1 ch=4 from=pool1\n"
    "conv conv4 k=3 s=1 d=1 p=1 ch=4 from=conv3\n"
    "maxpool pool2 k=2 s=2 from=conv4\n"
    "conv conv5 k=3 s=1 d=1 p=1 ch=4 from=pool2\n"
    "gap gap from=conv5\ndense fc out=2 from=gap\nsoftmax prob from=fc\n";

struct Fixture {
  ArchGraph graph = parse_arch(kFiveConv, "five");
  RunManifest manifest;
  SaturationSet sat;
  ProbeSet probes;

  explicit Fixture(int input_size = 8) {
    manifest.architecture = "five";
    manifest.arch_hash = arch_hash(graph);
    manifest.input_size = input_size;
    manifest.model_accuracy = 0.8;
    manifest.seed = 3;
    manifest.num_classes = 2;
    manifest.labels_file = "dumps/labels.actd";
    for (int i = 1; i <= 5; ++i) {
      const std::string name = "conv" + std::to_string(i);
      manifest.layers.push_back({name, "dumps/" + name + ".actd", {100, 4, 4, 4}, "conv", name});
    }
    manifest.layers.push_back({"gap", "dumps/gap.actd", {100, 4}, "vector", ""});
    const std::string h = run_hash(manifest);
    sat.run_hash = h;
    probes.run_hash = h;
    const double sats[5] = {0.75, 1.0, 0.75, 0.25, 0.25};
    const double accs[5] = {0.6, 0.7, 0.8, 0.8, 0.8};
    for (int i = 0; i < 5; ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      SaturationResult s;
      s.d = 4;
      s.k = static_cast<std::size_t>(sats[i] * 4);
      s.value = sats[i];
      s.eigvals = {4, 3, 2, 1};
      sat.by_layer[name] = s;
      probes.accuracy[name] = accs[i];
    }
    probes.readout_accuracy = 0.8;
  }

  Report build() const { return build_report(manifest, graph, sat, probes, Thresholds{}); }
};

}  // namespace

TEST(DetectTail, SuffixTail) {
  const std::vector<double> s = {0.8, 0.9, 0.85, 0.3, 0.2};
  const std::vector<double> a = {0.5, 0.7, 0.9, 0.9, 0.9};
  const TailReport t = detect_tail(s, a);
  ASSERT_TRUE(t.tail);
  EXPECT_EQ(*t.tail, (LayerRange{3, 5}));
  EXPECT_EQ(t.anchor, "suffix");
  EXPECT_DOUBLE_EQ(t.outside_median, 0.85);
  ASSERT_EQ(t.probe_deltas.size(), 2u);
  EXPECT_DOUBLE_EQ(t.probe_deltas[0], 0.0);
  EXPECT_TRUE(t.confirmed);
  EXPECT_DOUBLE_EQ(*t.mean_probe_delta, 0.0);
}

TEST(DetectTail, PrefixTail) {
  const std::vector<double> s = {0.1, 0.2, 0.9, 0.8, 0.95};
  const TailReport t = detect_tail(s, {});
  ASSERT_TRUE(t.tail);
  EXPECT_EQ(*t.tail, (LayerRange{0, 2}));
  EXPECT_EQ(t.anchor, "prefix");
  EXPECT_FALSE(t.confirmed);
}

TEST(DetectTail, GainsInsideTailRejectConfirmation) {
  const std::vector<double> s = {0.8, 0.9, 0.85, 0.3, 0.2};
  const std::vector<double> a = {0.5, 0.7, 0.8, 0.85, 0.9};
  const TailReport t = detect_tail(s, a);
  ASSERT_TRUE(t.tail);
  EXPECT_FALSE(t.confirmed);
  EXPECT_NEAR(t.probe_deltas[0], 0.05, 1e-12);
}

TEST(DetectTail, NoTailWhenFlat) {
  const std::vector<double> s = {0.5, 0.55, 0.6, 0.5, 0.45};
  const TailReport t = detect_tail(s, {});
  EXPECT_FALSE(t.tail);
  EXPECT_EQ(t.anchor, "none");
  EXPECT_TRUE(t.anomalies.empty());
}

TEST(DetectTail, EqualLengthsPreferSuffix) {
  const std::vector<double> s = {0.1, 0.9, 0.9, 0.9, 0.1};
  const TailReport t = detect_tail(s, {});
  ASSERT_TRUE(t.tail);
  EXPECT_EQ(t.anchor, "suffix");
  EXPECT_EQ(*t.tail, (LayerRange{4, 5}));
}

TEST(DetectTail, StrictThreshold) {
  // 0.45 is exactly tau times the outside median 0.9, so it does not qualify
  const std::vector<double> s = {0.9, 0.9, 0.9, 0.45};
  EXPECT_FALSE(detect_tail(s, {}).tail);
  const std::vector<double> lower = {0.9, 0.9, 0.9, 0.4499};
  EXPECT_TRUE(detect_tail(lower, {}).tail);
}

TEST(DetectTail, ScaleInvariant) {
  const std::vector<double> s = {0.8, 0.9, 0.85, 0.3, 0.2, 0.7, 0.1};
  const TailReport base = detect_tail(s, {});
  for (double f : {0.01, 0.5, 3.0, 1000.0}) {
    std::vector<double> scaled = s;
    for (double& v : scaled) v *= f;
    const TailReport t = detect_tail(scaled, {});
    EXPECT_EQ(t.tail, base.tail);
    EXPECT_EQ(t.anchor, base.anchor);
  }
}

TEST(DetectTail, InteriorDipIsAnomaly) {
  const std::vector<double> s = {0.9, 0.8, 0.1, 0.1, 0.85, 0.9};
  const TailReport t = detect_tail(s, {});
  EXPECT_FALSE(t.tail);
  ASSERT_EQ(t.anomalies.size(), 1u);
  EXPECT_EQ(t.anomalies[0], (LayerRange{2, 4}));
}

TEST(DetectTail, NaNNeverJoinsTail) {
  const std::vector<double> s = {0.9, 0.8, 0.85, 0.2, kNaN};
  EXPECT_FALSE(detect_tail(s, {}).tail);
  const std::vector<double> s2 = {0.9, kNaN, 0.85, 0.8, 0.2};
  const TailReport t = detect_tail(s2, {});
  ASSERT_TRUE(t.tail);
  EXPECT_EQ(*t.tail, (LayerRange{4, 5}));
}

TEST(DetectTail, Errors) {
  const std::vector<double> two = {0.1, 0.2};
  EXPECT_EQ(code_of([&] { detect_tail(two, {}); }), ErrorCode::InvalidArgument);
  const std::vector<double> s = {0.1, 0.2, 0.3};
  const std::vector<double> a = {0.1, 0.2};
  EXPECT_EQ(code_of([&] { detect_tail(s, a); }), ErrorCode::DimensionMismatch);
  EXPECT_EQ(code_of([&] { detect_tail(s, {}, 0.0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([&] { detect_tail(s, {}, 0.5, -1.0); }), ErrorCode::InvalidArgument);
}

TEST(BuildReport, CombinesMeasurements) {
  const Fixture f;
  const Report r = f.build();
  ASSERT_EQ(r.layers.size(), 5u);
  EXPECT_EQ(r.border, "conv4");
  EXPECT_EQ(r.layers[0].r, 3);
  EXPECT_EQ(r.layers[2].r, 10);
  EXPECT_EQ(r.layers[4].r, 24);
  EXPECT_TRUE(r.layers[3].is_border);
  EXPECT_TRUE(r.layers[3].in_compressing);
  EXPECT_TRUE(r.layers[4].in_compressing);
  EXPECT_TRUE(r.layers[2].in_solving);
  EXPECT_FALSE(r.layers[2].in_compressing);
  EXPECT_DOUBLE_EQ(*r.layers[1].saturation, 1.0);
  EXPECT_DOUBLE_EQ(*r.layers[0].relative_probe_accuracy, 0.6 / 0.8);
  ASSERT_TRUE(r.tail.tail);
  EXPECT_EQ(*r.tail.tail, (LayerRange{3, 5}));
  EXPECT_TRUE(r.tail.confirmed);
  EXPECT_TRUE(r.layers[3].in_tail);
  EXPECT_FALSE(r.layers[2].in_tail);
  EXPECT_EQ(r.run_hash, run_hash(f.manifest));
  EXPECT_EQ(r.probe_detail.size(), 6u);
  EXPECT_EQ(r.saturation_detail.size(), 5u);
}

TEST(BuildReport, RunMismatch) {
  Fixture f;
  f.sat.run_hash = "0000000000000000";
  EXPECT_EQ(code_of([&] { f.build(); }), ErrorCode::RunMismatch);
  Fixture g;
  g.probes.run_hash = "x";
  EXPECT_EQ(code_of([&] { g.build(); }), ErrorCode::RunMismatch);
  Fixture h;
  h.graph = parse_arch(std::string(kFiveConv).replace(std::string(kFiveConv).find("ch=4"), 4, "ch=5"), "five");
  EXPECT_EQ(code_of([&] { h.build(); }), ErrorCode::RunMismatch);
}

TEST(BuildReport, MissingSaturationIsNull) {
  Fixture f;
  f.sat.by_layer.erase("conv2");
  const Report r = f.build();
  EXPECT_FALSE(r.layers[1].saturation);
  EXPECT_EQ(r.layers[1].flags, std::vector<std::string>{"missing_saturation"});
  const auto j = report_to_json(r);
  EXPECT_TRUE(j["layers"][1]["saturation"].is_null());
  const std::string csv = report_to_csv(r);
  EXPECT_NE(csv.find("conv2,"), std::string::npos);
  EXPECT_NE(csv.find("missing_saturation"), std::string::npos);
}

TEST(ReportJson, SectionsPresent) {
  const auto j = report_to_json(Fixture().build());
  for (const char* key : {"schema_version", "architecture", "arch_hash", "run_hash", "seed", "input_size",
                          "model_accuracy", "thresholds", "border", "layers", "tail", "readout_probe_accuracy",
                          "heatmaps", "rf_note", "saturation", "probes", "run"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["saturation"]["conv1"]["eigvals"].size(), 4u);
  EXPECT_EQ(j["probes"][5]["mode"], "vector");
  EXPECT_EQ(j["probes"][0]["mode"], "pooled4x4");
}

TEST(ReportJson, ReEmissionIsByteIdentical) {
  Fixture f;
  f.probes.heatmaps.push_back({"conv3", 2, 2, {0.5, 0.6, 0.7, 0.8}});
  const Report r = f.build();
  const std::string first = report_to_json(r).dump(2);
  const Report back = report_from_json(nlohmann::json::parse(first));
  EXPECT_EQ(report_to_json(back).dump(2), first);
  EXPECT_EQ(report_to_csv(back), report_to_csv(r));
  EXPECT_EQ(render_chart(back), render_chart(r));

  TempDir a("ls_report_a"), b("ls_report_b");
  emit_report(r, a.path());
  emit_report(back, b.path());
  EXPECT_EQ(test_support::read_text(a / "report.json"), test_support::read_text(b / "report.json"));
  EXPECT_EQ(test_support::read_text(a / "report.csv"), test_support::read_text(b / "report.csv"));
}

TEST(ReportCsv, MatchesJsonValues) {
  const Report r = Fixture().build();
  const auto j = report_to_json(r);
  std::istringstream csv(report_to_csv(r));
  std::string line;
  std::getline(csv, line);
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    for (std::string cell; std::getline(hs, cell, ',');) header.push_back(cell);
  }
  ASSERT_EQ(header.size(), 15u);
  for (std::size_t row = 0; std::getline(csv, line); ++row) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    cells.resize(header.size());
    const auto& layer = j["layers"][row];
    for (std::size_t c = 0; c < header.size(); ++c) {
      const std::string key = header[c] == "layer" ? "layer" : header[c];
      const auto& v = layer.at(key);
      if (v.is_null()) {
        EXPECT_TRUE(cells[c].empty()) << key;
      } else if (v.is_boolean()) {
        EXPECT_EQ(cells[c], v.get<bool>() ? "1" : "0") << key;
      } else if (v.is_number()) {
        EXPECT_DOUBLE_EQ(std::stod(cells[c]), v.get<double>()) << key;
      } else if (v.is_string()) {
        EXPECT_EQ(cells[c], v.get<std::string>()) << key;
      }
    }
  }
}

TEST(Chart, ElementCounts) {
  const std::string svg = render_chart(Fixture().build());
  EXPECT_EQ(count_of(svg, "class=\"sat-bar\""), 5u);
  EXPECT_EQ(count_of(svg, "class=\"probe-point\""), 5u);
  EXPECT_EQ(count_of(svg, "class=\"border-marker\""), 1u);
  EXPECT_EQ(count_of(svg, "class=\"tail-region\""), 1u);
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Chart, NoBorderMarkerWithoutBorder) {
  // at 64 px every r stays inside the image
  const std::string svg = render_chart(Fixture(64).build());
  EXPECT_EQ(count_of(svg, "class=\"border-marker\""), 0u);
  EXPECT_EQ(code_of([] { render_chart(Report{}); }), ErrorCode::InvalidArgument);
}

TEST(Chart, HeatmapColourFollowsRank) {
  const Heatmap h{"conv3", 2, 3, {0.9, 0.1, 0.5, 0.3, 0.7, 0.2}};
  const std::string svg = render_heatmap(h, 0.9);
  EXPECT_EQ(count_of(svg, "class=\"heat-cell\""), 6u);
  const std::regex cell_re("class=\"heat-cell\"[^>]*fill=\"rgb\\((\\d+),\\d+,\\d+\\)\" data-value=\"([^\"]+)\"");
  std::vector<std::pair<double, int>> cells;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell_re); it != std::sregex_iterator(); ++it) {
    cells.emplace_back(std::stod((*it)[2]), std::stoi((*it)[1]));
  }
  ASSERT_EQ(cells.size(), 6u);
  std::sort(cells.begin(), cells.end());
  for (std::size_t i = 1; i < cells.size(); ++i) EXPECT_LT(cells[i - 1].second, cells[i].second);
  EXPECT_DOUBLE_EQ(cells.back().first, 1.0);
  EXPECT_EQ(code_of([] { render_heatmap(Heatmap{"x", 0, 0, {}}, 1.0); }), ErrorCode::InvalidArgument);
}

TEST(StaticReport, CarriesRfColumnsOnly) {
  const Report r = build_static_report(generate_builtin("vgg16"), 32);
  EXPECT_EQ(r.layers.size(), 13u);
  EXPECT_EQ(r.border, "conv8");
  EXPECT_FALSE(r.run_hash);
  for (const LayerReport& l : r.layers) EXPECT_FALSE(l.saturation);
  EXPECT_FALSE(build_static_report(generate_builtin("vgg16"), std::nullopt).border);
}

TEST(RunHash, DependsOnManifest) {
  Fixture f;
  const std::string h = run_hash(f.manifest);
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h, run_hash(f.manifest));
  f.manifest.seed = 4;
  EXPECT_NE(run_hash(f.manifest), h);
}
