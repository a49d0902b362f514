#include <algorithm>
#include <memory>
#include <numeric>

#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/kernels.hpp"
#include "layerscope/rf_analysis.hpp"

namespace layerscope::engine {

RunManifest capture_run(const Model& model, const Dataset& data, const std::filesystem::path& out_dir,
                        const CaptureInfo& info, int batch) {
  namespace fs = std::filesystem;
  if (fs::exists(out_dir / "manifest.json")) {
    throw Error(ErrorCode::AlreadyExists, "refusing to overwrite " + (out_dir / "manifest.json").string());
  }
  if (data.images.n < 1 || data.labels.size() != static_cast<std::size_t>(data.images.n)) {
    throw Error(ErrorCode::InvalidArgument, "capture needs a non-empty labelled dataset");
  }
  batch = std::max(1, batch);
  const ArchGraph& g = model.graph();
  const int size = input_size_of(data);
  const std::vector<int> spatial = propagate_spatial(g, size);
  const auto n = static_cast<std::uint64_t>(data.images.n);

  fs::create_directories(out_dir / "dumps");
  RunManifest m;
  m.architecture = info.architecture.empty() ? g.name() : info.architecture;
  m.arch_hash = arch_hash(g);
  m.input_size = size;
  m.seed = info.seed;
  m.threads = info.threads;
  m.kernel_isa = std::string(kernels::isa_name(kernels::active_isa()));
  m.extra = info.extra;

  struct Target {
    std::string node;
    std::unique_ptr<DumpWriter> writer;
  };
  std::vector<Target> targets;
  std::set<std::string> capture;
  const auto add_target = [&](const std::string& dump_name, int node, const std::string& kind,
                              const std::string& source) {
    const LayerNode& nd = g.node(node);
    const auto side = static_cast<std::uint64_t>(spatial[static_cast<std::size_t>(node)]);
    std::vector<std::uint64_t> shape = {n, static_cast<std::uint64_t>(nd.out_channels)};
    if (kind == "conv") {
      shape.push_back(side);
      shape.push_back(side);
    }
    const std::string file = "dumps/" + dump_name + ".actd";
    m.layers.push_back({dump_name, file, shape, kind, source});
    targets.push_back({nd.name, std::make_unique<DumpWriter>(out_dir / file, shape, dump_name, info.split)});
    capture.insert(nd.name);
  };
  for (const CapturePoint& cp : capture_points(g)) add_target(cp.conv, cp.node, "conv", cp.conv);
  for (int id : g.topo_order()) {
    if (g.node(id).kind == LayerKind::GlobalAvgPool) add_target(g.node(id).name, id, "vector", "");
  }

  std::size_t correct = 0;
  std::vector<float> labels;
  labels.reserve(static_cast<std::size_t>(n));
  const std::size_t sample = data.images.sample_size();
  for (int first = 0; first < data.images.n; first += batch) {
    const int count = std::min(batch, data.images.n - first);
    Tensor x(count, data.images.c, data.images.h, data.images.w);
    std::copy_n(data.images.data.begin() + static_cast<std::ptrdiff_t>(first * sample), count * sample,
                x.data.begin());
    const ForwardResult r = model.forward(x, capture);
    for (auto& t : targets) t.writer->append(r.captured.at(t.node).data);
    const std::size_t width = r.logits.sample_size();
    for (int s = 0; s < count; ++s) {
      const float* row = r.logits.data.data() + static_cast<std::size_t>(s) * width;
      const int label = data.labels[static_cast<std::size_t>(first + s)];
      if (std::max_element(row, row + width) - row == label) ++correct;
      labels.push_back(static_cast<float>(label));
    }
  }
  for (auto& t : targets) t.writer->finish();

  TensorDump label_dump;
  label_dump.shape = {n};
  label_dump.payload = std::move(labels);
  label_dump.layer_name = "labels";
  m.labels_file = "dumps/labels.actd";
  write_dump(label_dump, out_dir / m.labels_file);

  m.model_accuracy = info.model_accuracy.value_or(static_cast<double>(correct) / static_cast<double>(n));
  m.num_classes = data.num_classes;
  write_manifest(m, out_dir);
  return m;
}

}  // namespace layerscope::engine
