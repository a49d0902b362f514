// layerscope command-line front end. Every subcommand reads and writes a run
// directory:
//   arch.dsl  model/  train.json  manifest.json  dumps/  saturation.json
//   probes.json  report.json  report.csv  chart.svg  heatmap_<layer>.svg

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "layerscope/arch_graph.hpp"
#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/kernels.hpp"
#include "layerscope/pipeline.hpp"
#include "layerscope/report.hpp"
#include "layerscope/rf_analysis.hpp"
#include "layerscope/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace layerscope;

namespace {

struct Options {
  std::string builtin;
  std::string arch;
  std::optional<int> input_size;
  std::uint64_t seed = 0;
  std::string out;
  bool force = false;
  int width_div = 1;
  int dilation = 1;
  std::string residual_mask;
  bool no_batchnorm = false;
  std::string toy = "default";
  std::string mnist;
  int mnist_limit = 0;
  int epochs = 30;
  double lr = 0.1;
  int batch = 64;
  double momentum = 0.0;
  bool hflip = false;
  int crop_pad = 0;
  double delta = 0.99;
  double tau = 0.5;
  double epsilon = 0.005;
  int probe_epochs = 30;
  std::vector<std::string> heatmaps;
  bool suggest = false;
  std::string split = "test";
};

bool is_validation(ErrorCode c) {
  switch (c) {
    case ErrorCode::Io:
    case ErrorCode::BadMagic:
    case ErrorCode::VersionMismatch:
    case ErrorCode::Truncated:
    case ErrorCode::NonFinite:
    case ErrorCode::Divergence:
      return false;
    default:
      return true;
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Validation, p.string() + ": " + e.what());
  }
}

void note(const std::string& msg) { std::cerr << "layerscope: " << msg << "\n"; }

// Exclusive lock on a run directory, released on scope exit.
class RunLock {
 public:
  explicit RunLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw Error(ErrorCode::Io, "run directory " + dir.string() +
                                     " is locked by another process (delete .lock if it is stale)");
    }
    std::fclose(f);
  }
  ~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  fs::path path_;
};

std::vector<bool> parse_mask(const std::string& text) {
  std::vector<bool> mask;
  if (text.empty()) return mask;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item != "0" && item != "1") {
      throw Error(ErrorCode::InvalidArgument, "--residual-mask expects comma-separated 0/1 flags, got '" + text + "'");
    }
    mask.push_back(item == "1");
  }
  return mask;
}

ArchGraph load_graph(const Options& o, int in_channels, int classes) {
  if (o.builtin.empty() == o.arch.empty()) {
    throw Error(ErrorCode::InvalidArgument, "give exactly one of --builtin or --arch");
  }
  if (!o.builtin.empty()) {
    BuiltinOptions b;
    b.in_channels = in_channels;
    b.num_classes = classes;
    b.width_divisor = o.width_div;
    b.dilation = o.dilation;
    b.residual_mask = parse_mask(o.residual_mask);
    b.batchnorm = !o.no_batchnorm;
    return generate_builtin(o.builtin, b);
  }
  return parse_arch(read_text(o.arch), fs::path(o.arch).stem().string());
}

// ---------------------------------------------------------------------------
// rf

int cmd_rf(const Options& o) {
  const ArchGraph g = load_graph(o, 3, 10);
  const RFResult rf = compute_rf(g, o.input_size);
  std::printf("architecture %s (%zu nodes, hash %s)\n", g.name().c_str(), g.size(), arch_hash(g).c_str());
  std::printf("%-22s %-10s %8s %6s", "layer", "kind", "r", "jump");
  if (o.input_size) std::printf(" %8s", "spatial");
  std::printf("\n");
  for (int id : g.topo_order()) {
    const LayerNode& n = g.node(id);
    std::printf("%-22s %-10s %8lld %6lld", n.name.c_str(), std::string(kind_name(n.kind)).c_str(), rf.r_of(id),
                rf.jump_of(id));
    if (o.input_size) std::printf(" %8d", rf.spatial[static_cast<std::size_t>(id)]);
    std::printf("\n");
  }
  if (!g.conv_ids().empty()) {
    const int last = final_conv(g);
    std::printf("final conv %s: r = %lld\n", g.node(last).name.c_str(), rf.r_of(last));
  }
  const json rf_note = rf_formula_note(g, rf);
  if (rf_note.contains("reference")) {
    const auto& ref = rf_note["reference"];
    std::printf("published value for %s: %s%lld, computed %lld (%s)\n", ref["layer"].get<std::string>().c_str(),
                ref["published_is_lower_bound"].get<bool>() ? "over " : "", ref["published"].get<long long>(),
                ref["computed"].get<long long>(), ref["agrees"].get<bool>() ? "agrees" : "differs, see note");
  }
  std::printf("note: %s\n", rf_note["note"].get<std::string>().c_str());

  std::vector<SurgeryEdit> edits;
  if (o.input_size) {
    const BorderReport b = border_layer(g, rf, *o.input_size);
    if (b.border_node) {
      std::printf("border layer at %d px: %s (%zu solving convs, %zu compressing convs)\n", *o.input_size,
                  g.node(*b.border_node).name.c_str(), b.solving.size(), b.compressing.size());
    } else {
      std::printf("border layer at %d px: none (every conv sees less than the input)\n", *o.input_size);
    }
    if (o.suggest) {
      edits = suggest_surgery(g, *o.input_size);
      if (edits.empty()) std::printf("no single edit moves the border later\n");
      for (const auto& e : edits) {
        std::printf("suggest %s on %s: %s -> border %s, %zu solving convs, final r %lld\n",
                    std::string(edit_kind_name(e.kind)).c_str(), e.target.c_str(), e.description.c_str(),
                    e.border ? e.border->c_str() : "none", e.solving_convs, e.final_r);
      }
    }
  } else if (o.suggest) {
    throw Error(ErrorCode::InvalidArgument, "--suggest needs --input-size");
  }

  if (!o.out.empty()) {
    const fs::path dir(o.out);
    RunLock lock(dir);
    const Report r = build_static_report(g, o.input_size);
    emit_report(r, dir);
    json j;
    j["rf"] = rf_to_json(g, rf);
    if (o.input_size) j["border"] = border_to_json(g, border_layer(g, rf, *o.input_size));
    j["note"] = rf_note;
    json s = json::array();
    for (const auto& e : edits) {
      s.push_back({{"kind", edit_kind_name(e.kind)},
                   {"target", e.target},
                   {"description", e.description},
                   {"border", e.border ? json(*e.border) : json(nullptr)},
                   {"solving_convs", e.solving_convs},
                   {"final_r", e.final_r}});
    }
    j["suggestions"] = s;
    write_text(dir / "rf.json", j.dump(2) + "\n");
    write_text(dir / "arch.dsl", serialize_arch(g));
    std::printf("wrote %s\n", (dir / "report.json").string().c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// data

struct DataSource {
  json desc;
  engine::Dataset train;
  engine::Dataset test;
};

engine::ToySpec resolve_toy(const std::string& toy, std::uint64_t seed, std::optional<int> input_size) {
  engine::ToySpec spec;
  const auto names = engine::toy_preset_names();
  if (std::find(names.begin(), names.end(), toy) != names.end()) {
    spec = engine::toy_preset(toy);
  } else if (fs::exists(toy)) {
    spec = engine::toy_from_json(read_json(toy));
  } else {
    throw Error(ErrorCode::InvalidArgument, "--toy '" + toy + "' is neither a preset nor a spec file");
  }
  spec.seed = seed;
  if (input_size && *input_size != spec.image_size()) spec.upsample_to = *input_size;
  return spec;
}

engine::Dataset load_mnist_split(const fs::path& dir, bool train, int size, int limit) {
  const std::string prefix = train ? "train" : "t10k";
  const IdxImages img = read_idx_images(dir / (prefix + "-images-idx3-ubyte"));
  const auto labels = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
  engine::Dataset d = engine::dataset_from_idx(img, labels, 1, size);
  if (limit > 0 && limit < d.images.n) {
    d.images.n = limit;
    d.images.data.resize(static_cast<std::size_t>(limit) * d.images.sample_size());
    d.labels.resize(static_cast<std::size_t>(limit));
  }
  d.num_classes = 10;
  return d;
}

DataSource load_data(const json& desc) {
  DataSource s;
  s.desc = desc;
  if (desc.at("source") == "toy") {
    const engine::ToySpec spec = engine::toy_from_json(desc.at("toy"));
    s.train = engine::generate_toy(spec, Split::Train);
    s.test = engine::generate_toy(spec, Split::Test);
  } else {
    const fs::path dir = desc.at("dir").get<std::string>();
    const int size = desc.at("size").get<int>();
    const int limit = desc.at("limit").get<int>();
    s.train = load_mnist_split(dir, true, size, limit);
    s.test = load_mnist_split(dir, false, size, limit);
  }
  return s;
}

json data_desc(const Options& o) {
  if (!o.mnist.empty()) {
    return {{"source", "mnist"}, {"dir", o.mnist}, {"size", o.input_size.value_or(28)}, {"limit", o.mnist_limit}};
  }
  return {{"source", "toy"}, {"toy", engine::toy_to_json(resolve_toy(o.toy, o.seed, o.input_size))}};
}

// ---------------------------------------------------------------------------
// pipeline stages

bool skip(const Options& o, const fs::path& artifact, const char* stage) {
  if (o.force || !fs::exists(artifact)) return false;
  note(std::string(stage) + ": " + artifact.filename().string() + " already exists, skipping (use --force to redo)");
  return true;
}

void stage_train(const Options& o, const fs::path& dir) {
  if (skip(o, dir / "train.json", "train")) return;
  const json desc = data_desc(o);
  const DataSource data = load_data(desc);
  const int size = engine::input_size_of(data.train);
  ArchGraph g = load_graph(o, data.train.images.c, data.train.num_classes);
  compute_rf(g, size);  // rejects inputs too small for the architecture
  if (!o.input_size) note("train: input size " + std::to_string(size) + " px taken from the data");

  engine::TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.lr = o.lr;
  cfg.momentum = o.momentum;
  cfg.hflip = o.hflip;
  cfg.crop_pad = o.crop_pad;
  cfg.seed = derive_seed(o.seed, 2);
  engine::Model model = engine::Model::init(g, derive_seed(o.seed, 1));
  note("train: " + g.name() + " on " + std::to_string(data.train.images.n) + " images of " + std::to_string(size) +
       " px for " + std::to_string(cfg.epochs) + " epochs");
  const engine::TrainResult tr = engine::train(model, data.train, data.test, cfg);

  fs::remove_all(dir / "model");
  model.save(dir / "model");
  write_text(dir / "arch.dsl", serialize_arch(g));
  json history = json::array();
  for (const auto& e : tr.history) {
    history.push_back({{"epoch", e.epoch},
                       {"lr", e.lr},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"test_accuracy", e.test_accuracy ? json(*e.test_accuracy) : json(nullptr)}});
  }
  const json tj = {{"architecture", g.name()}, {"arch_hash", arch_hash(g)}, {"seed", o.seed},
                   {"input_size", size},       {"data", desc},              {"train", engine::train_config_to_json(cfg)},
                   {"history", history},       {"test_accuracy", tr.test_accuracy}};
  write_text(dir / "train.json", tj.dump(2) + "\n");
  std::printf("trained %s: test accuracy %.4f\n", g.name().c_str(), tr.test_accuracy);
}

void stage_capture(const Options& o, const fs::path& dir) {
  if (skip(o, dir / "manifest.json", "capture")) return;
  if (!fs::exists(dir / "train.json") || !fs::exists(dir / "model")) {
    throw Error(ErrorCode::Validation, "no trained model in " + dir.string() + " (run train first)");
  }
  const json tj = read_json(dir / "train.json");
  const engine::Model model = engine::Model::load(dir / "model");
  const DataSource data = load_data(tj.at("data"));
  fs::remove(dir / "manifest.json");
  fs::remove_all(dir / "dumps");
  engine::CaptureInfo info;
  info.architecture = tj.at("architecture").get<std::string>();
  info.seed = tj.at("seed").get<std::uint64_t>();
  info.threads = kernels::threads();
  info.extra = {{"data", tj.at("data")}, {"train", tj.at("train")}, {"history", tj.at("history")},
                {"split", o.split}};
  const bool train_split = o.split == "train";
  if (train_split) info.model_accuracy = tj.at("test_accuracy").get<double>();
  info.split = train_split ? Split::Train : Split::Test;
  const engine::Dataset& images = train_split ? data.train : data.test;
  const RunManifest m = engine::capture_run(model, images, dir, info);
  std::printf("captured %zu layers over %d %s images (model accuracy %.4f)\n", m.layers.size(), images.images.n,
              o.split.c_str(), m.model_accuracy);
}

template <typename Fn>
json cached(const Options& o, const fs::path& file, const json& key, Fn&& compute) {
  if (!o.force && fs::exists(file)) {
    json j = read_json(file);
    if (j.value("key", json()) == key) return j;
  }
  json j = compute();
  j["key"] = key;
  write_text(file, j.dump(2) + "\n");
  return j;
}

void stage_analyze(const Options& o, const fs::path& dir) {
  if (skip(o, dir / "report.json", "analyze")) return;
  if (!fs::exists(dir / "manifest.json")) throw Error(ErrorCode::Validation, "no dumps found in " + dir.string());
  const RunManifest m = read_manifest(dir);
  if (m.layers.empty()) throw Error(ErrorCode::Validation, "no dumps found in " + dir.string());
  for (const auto& l : m.layers) {
    if (!fs::exists(dir / l.file)) throw Error(ErrorCode::Validation, "no dumps found: " + (dir / l.file).string() + " is missing");
  }
  verify_manifest(m, dir);
  const ArchGraph g = parse_arch(read_text(dir / "arch.dsl"), m.architecture);
  const std::string hash = run_hash(m);

  const json sj = cached(o, dir / "saturation.json", {{"run_hash", hash}, {"delta", o.delta}},
                         [&] { return saturation_set_to_json(compute_saturation(m, dir, o.delta)); });

  ProbeOptions po;
  po.config.epochs = o.probe_epochs;
  po.config.seed = derive_seed(m.seed, 3);
  if (o.heatmaps.empty()) {
    // default: the border conv and the last conv, when their maps are small
    const RFResult rf = compute_rf(g, m.input_size);
    const BorderReport b = border_layer(g, rf, m.input_size);
    for (const auto& l : m.layers) {
      if (l.kind != "conv" || l.shape.size() != 4 || l.shape[2] > 16) continue;
      const bool is_border = b.border_node && g.node(*b.border_node).name == l.source_conv;
      const bool is_last = &l == &*std::find_if(m.layers.rbegin(), m.layers.rend(), [](const ManifestLayer& x) {
                             return x.kind == "conv";
                           });
      if (is_border || is_last) po.heatmap_layers.insert(l.name);
    }
  } else if (!(o.heatmaps.size() == 1 && o.heatmaps.front() == "none")) {
    po.heatmap_layers.insert(o.heatmaps.begin(), o.heatmaps.end());
  }
  json heat_key = json::array();
  for (const auto& h : po.heatmap_layers) heat_key.push_back(h);
  const json pj = cached(o, dir / "probes.json",
                         {{"run_hash", hash}, {"epochs", po.config.epochs}, {"seed", po.config.seed}, {"heatmaps", heat_key}},
                         [&] { return probe_set_to_json(compute_probes(m, dir, po)); });

  const Report r = build_report(m, g, saturation_set_from_json(sj), probe_set_from_json(pj), {o.delta, o.tau, o.epsilon});
  emit_report(r, dir);
  std::printf("%-16s %8s %8s %8s  %s\n", "layer", "r", "sat", "probe", "flags");
  for (const auto& l : r.layers) {
    std::string flags;
    if (l.is_border) flags += " border";
    if (l.in_tail) flags += " tail";
    flags += l.in_compressing ? " compressing" : (l.in_solving ? " solving" : "");
    std::printf("%-16s %8lld %8.4f %8.4f %s\n", l.layer_name.c_str(), l.r, l.saturation.value_or(NAN),
                l.probe_accuracy.value_or(NAN), flags.c_str());
  }
  if (r.tail.tail) {
    std::printf("tail: %s of %d layers from %s (%s)\n", r.tail.anchor.c_str(), r.tail.tail->size(),
                r.layers[static_cast<std::size_t>(r.tail.tail->begin)].layer_name.c_str(),
                r.tail.confirmed ? "confirmed unproductive" : "not confirmed by probes");
  } else {
    std::printf("tail: none\n");
  }
}

void stage_chart(const Options& o, const fs::path& dir) {
  if (skip(o, dir / "chart.svg", "chart")) return;
  if (!fs::exists(dir / "report.json")) {
    throw Error(ErrorCode::Validation, "no report.json in " + dir.string() + " (run analyze first)");
  }
  const Report r = report_from_json(read_json(dir / "report.json"));
  write_text(dir / "chart.svg", render_chart(r));
  for (const Heatmap& h : r.heatmaps) {
    write_text(dir / ("heatmap_" + h.layer_name + ".svg"), render_heatmap(h, r.model_accuracy.value_or(0.0)));
  }
  std::printf("wrote %s\n", (dir / "chart.svg").string().c_str());
}

fs::path run_dir(const Options& o) {
  if (o.out.empty()) throw Error(ErrorCode::InvalidArgument, "--out <run directory> is required");
  return o.out;
}

void add_arch(CLI::App* app, Options& o) {
  auto* b = app->add_option("--builtin", o.builtin, "Builtin architecture (vgg11/13/16/19, resnet18/34, resnet18_cifar, ...)");
  auto* a = app->add_option("--arch", o.arch, "Architecture text file");
  b->excludes(a);
  app->add_option("--width-div", o.width_div, "Divide builtin channel widths by this factor")->check(CLI::PositiveNumber);
  app->add_option("--dilation", o.dilation, "Dilation for every conv of a vgg builtin")->check(CLI::PositiveNumber);
  app->add_option("--residual-mask", o.residual_mask, "Per-stage residual flags for resnet builtins, e.g. 1,1,0,0");
  app->add_flag("--no-batchnorm", o.no_batchnorm, "Build builtins without batch normalization");
}

void add_train(CLI::App* app, Options& o) {
  app->add_option("--toy", o.toy, "Toy data preset (default, tiny, centered16, canvas64) or spec JSON file");
  app->add_option("--mnist", o.mnist, "Directory with MNIST IDX files instead of toy data");
  app->add_option("--mnist-limit", o.mnist_limit, "Use only the first N MNIST images per split");
  app->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  app->add_option("--lr", o.lr)->check(CLI::NonNegativeNumber);
  app->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
  app->add_option("--momentum", o.momentum)->check(CLI::Range(0.0, 1.0));
  app->add_flag("--hflip", o.hflip, "Random horizontal flips during training");
  app->add_option("--crop-pad", o.crop_pad, "Reflect-pad and random-crop by this many pixels")->check(CLI::NonNegativeNumber);
}

void add_capture(CLI::App* app, Options& o) {
  app->add_option("--split", o.split, "Dataset split whose activations are dumped")
      ->check(CLI::IsMember({"train", "test"}));
}

void add_analyze(CLI::App* app, Options& o) {
  app->add_option("--delta", o.delta, "Variance share for saturation")->check(CLI::Range(1e-9, 1.0));
  app->add_option("--tau", o.tau, "Tail threshold relative to the outside median")->check(CLI::PositiveNumber);
  app->add_option("--epsilon", o.epsilon, "Probe gain below which tail layers count as unproductive")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--probe-epochs", o.probe_epochs)->check(CLI::PositiveNumber);
  app->add_option("--heatmap", o.heatmaps, "Conv layers that get per-position probe heatmaps ('none' to skip)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layerscope: receptive-field analysis and layer productivity measurements for CNNs"};
  app.require_subcommand(1);
  Options o;
  kernels::set_threads(engine::configured_threads());

  auto seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Master seed for every random choice"); return sub; };
  auto out = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--out", o.out, "Run directory");
    if (required) opt->required();
    return sub;
  };
  auto size = [&](CLI::App* sub) {
    sub->add_option("--input-size", o.input_size, "Input side length in pixels")->check(CLI::PositiveNumber);
    sub->add_flag("--force", o.force, "Recompute outputs that already exist");
    return sub;
  };

  auto* rf = app.add_subcommand("rf", "Receptive fields, border layer and surgery suggestions");
  add_arch(rf, o);
  size(out(rf, false));
  rf->add_flag("--suggest", o.suggest, "Suggest single edits that move the border layer deeper");

  auto* train = app.add_subcommand("train", "Train a model on toy or MNIST data");
  add_arch(train, o);
  add_train(train, o);
  size(out(seed(train), true));

  auto* capture = app.add_subcommand("capture", "Dump activations of a trained run");
  add_capture(capture, o);
  size(out(capture, true));

  auto* analyze = app.add_subcommand("analyze", "Saturation, probes, tail detection and report");
  add_analyze(analyze, o);
  size(out(analyze, true));

  auto* chart = app.add_subcommand("chart", "Render chart.svg and heatmaps from report.json");
  size(out(chart, true));

  auto* full = app.add_subcommand("full", "train, capture, analyze and chart in one go");
  add_arch(full, o);
  add_train(full, o);
  add_capture(full, o);
  add_analyze(full, o);
  size(out(seed(full), true));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (rf->parsed()) return cmd_rf(o);
    const fs::path dir = run_dir(o);
    RunLock lock(dir);
    if (train->parsed()) stage_train(o, dir);
    if (capture->parsed()) stage_capture(o, dir);
    if (analyze->parsed()) stage_analyze(o, dir);
    if (chart->parsed()) stage_chart(o, dir);
    if (full->parsed()) {
      stage_train(o, dir);
      stage_capture(o, dir);
      stage_analyze(o, dir);
      stage_chart(o, dir);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "layerscope: error: " << e.what() << "\n";
    return is_validation(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "layerscope: error: " << e.what() << "\n";
    return 1;
  }
}
