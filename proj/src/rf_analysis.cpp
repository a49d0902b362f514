#include "layerscope/rf_analysis.hpp"

#include <algorithm>
#include <map>

#include "layerscope/error.hpp"

namespace layerscope {
namespace {

struct Published {
  long long value;
  bool lower_bound;  // the reference only states "over <value>"
};

// Reference receptive fields for the last conv of the catalog architectures.
const std::map<std::string, Published>& published_values() {
  static const std::map<std::string, Published> table = {
      {"vgg19", {252, false}},
      {"resnet18", {413, false}},
      {"resnet18_cifar", {109, false}},
      {"resnet34", {800, true}},
  };
  return table;
}

std::size_t idx(int id) { return static_cast<std::size_t>(id); }

}  // namespace

std::vector<int> propagate_spatial(const ArchGraph& graph, int input_size) {
  if (input_size < 1) throw Error(ErrorCode::InvalidArgument, "input size must be >= 1");
  std::vector<int> size(graph.size(), 0);
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    if (n.kind == LayerKind::Input) {
      size[idx(id)] = input_size;
      continue;
    }
    const int in = size[idx(n.inputs.front())];
    for (int p : n.inputs) {
      if (size[idx(p)] != in) {
        throw Error(ErrorCode::ShapeMismatch,
                    "node '" + n.name + "' merges maps of size " + std::to_string(in) + " and " +
                        std::to_string(size[idx(p)]));
      }
    }
    if (is_windowed(n.kind)) {
      const int span = in + 2 * n.padding - n.effective_kernel();
      // a pooling window larger than its map clips to the map
      if (span < 0 && n.kind != LayerKind::Conv) {
        size[idx(id)] = 1;
        continue;
      }
      if (span < 0) {
        throw Error(ErrorCode::ShapeMismatch,
                    "node '" + n.name + "' receives a " + std::to_string(in) +
                        "px map, smaller than its kernel");
      }
      size[idx(id)] = span / n.stride + 1;
    } else if (n.kind == LayerKind::GlobalAvgPool || n.kind == LayerKind::Dense ||
               n.kind == LayerKind::Softmax) {
      size[idx(id)] = 1;
    } else {
      size[idx(id)] = in;
    }
  }
  return size;
}

RFResult compute_rf(const ArchGraph& graph, std::optional<int> input_size) {
  RFResult out;
  out.r.assign(graph.size(), 1);
  out.jump.assign(graph.size(), 1);
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    if (n.kind == LayerKind::Input) continue;
    long long r_prev = 0;
    const long long jump_prev = out.jump[idx(n.inputs.front())];
    for (int p : n.inputs) {
      if (out.jump[idx(p)] != jump_prev) {
        throw Error(ErrorCode::JumpMismatch,
                    "node '" + n.name + "' merges paths with jumps " + std::to_string(jump_prev) +
                        " ('" + graph.node(n.inputs.front()).name + "') and " +
                        std::to_string(out.jump[idx(p)]) + " ('" + graph.node(p).name + "')");
      }
      r_prev = std::max(r_prev, out.r[idx(p)]);
    }
    const int k_eff = is_windowed(n.kind) ? n.effective_kernel() : 1;
    const int stride = is_windowed(n.kind) ? n.stride : 1;
    out.r[idx(id)] = r_prev + static_cast<long long>(k_eff - 1) * jump_prev;
    out.jump[idx(id)] = jump_prev * stride;
  }
  if (input_size) {
    out.spatial = propagate_spatial(graph, *input_size);
    out.input_size = input_size;
  }
  return out;
}

int final_conv(const ArchGraph& graph) {
  const auto convs = graph.conv_ids();
  if (convs.empty()) throw Error(ErrorCode::InvalidArgument, "architecture has no conv layers");
  return convs.back();
}

BorderReport border_layer(const ArchGraph& graph, const RFResult& rf, int input_size) {
  if (input_size < 1) throw Error(ErrorCode::InvalidArgument, "input size must be >= 1");
  BorderReport out;
  out.input_size = input_size;
  for (int id : graph.conv_ids()) {
    const LayerNode& n = graph.node(id);
    if (!out.border_node) {
      const bool crosses = std::any_of(n.inputs.begin(), n.inputs.end(),
                                       [&](int p) { return rf.r_of(p) > input_size; });
      if (crosses) out.border_node = id;
    }
    (out.border_node ? out.compressing : out.solving).push_back(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Surgery

std::string_view edit_kind_name(EditKind kind) {
  switch (kind) {
    case EditKind::StemStride: return "stem_stride";
    case EditKind::StemKernel: return "stem_kernel";
    case EditKind::CompactStem: return "compact_stem";
    case EditKind::RemoveDownsample: return "remove_downsample";
  }
  return "?";
}

namespace {

// Bypass a single-input node and renumber the remaining ids.
std::vector<LayerNode> remove_node(std::vector<LayerNode> nodes, int victim) {
  const int through = nodes[idx(victim)].inputs.front();
  for (LayerNode& n : nodes) {
    for (int& p : n.inputs) {
      if (p == victim) p = through;
    }
  }
  nodes.erase(nodes.begin() + victim);
  for (LayerNode& n : nodes) {
    if (n.id > victim) --n.id;
    for (int& p : n.inputs) {
      if (p > victim) --p;
    }
  }
  return nodes;
}

int shrunk_kernel(int k) { return std::max(1, (k / 2) | 1); }

// Pool reached from the stem through BN/ReLU only, if any.
std::optional<int> stem_pool(const ArchGraph& g, int stem) {
  int cur = stem;
  while (true) {
    const auto& succ = g.successors(cur);
    if (succ.size() != 1) return std::nullopt;
    const LayerNode& next = g.node(succ.front());
    if (next.kind == LayerKind::MaxPool || next.kind == LayerKind::AvgPool) {
      return next.stride > 1 ? std::optional<int>(next.id) : std::nullopt;
    }
    if (next.kind != LayerKind::BatchNorm && next.kind != LayerKind::ReLU) return std::nullopt;
    cur = next.id;
  }
}

}  // namespace

std::vector<SurgeryEdit> suggest_surgery(const ArchGraph& graph, int input_size) {
  const RFResult base_rf = compute_rf(graph);
  const BorderReport base = border_layer(graph, base_rf, input_size);
  if (!base.border_node) return {};

  struct Candidate {
    EditKind kind;
    std::string target;
    std::string description;
    std::vector<LayerNode> nodes;
  };
  std::vector<Candidate> candidates;

  const int stem = graph.conv_ids().front();
  const LayerNode& stem_node = graph.node(stem);
  if (stem_node.stride > 1) {
    auto nodes = graph.nodes();
    nodes[idx(stem)].stride = 1;
    candidates.push_back({EditKind::StemStride, stem_node.name,
                          "set stride of '" + stem_node.name + "' from " +
                              std::to_string(stem_node.stride) + " to 1",
                          std::move(nodes)});
  }
  const int small_k = shrunk_kernel(stem_node.kernel);
  if (small_k < stem_node.kernel) {
    auto nodes = graph.nodes();
    nodes[idx(stem)].kernel = small_k;
    nodes[idx(stem)].padding = stem_node.dilation * (small_k - 1) / 2;
    candidates.push_back({EditKind::StemKernel, stem_node.name,
                          "shrink kernel of '" + stem_node.name + "' from " +
                              std::to_string(stem_node.kernel) + " to " + std::to_string(small_k),
                          std::move(nodes)});
  }
  const auto pool = stem_pool(graph, stem);
  if (stem_node.stride > 1 && small_k < stem_node.kernel) {
    auto nodes = graph.nodes();
    nodes[idx(stem)].stride = 1;
    nodes[idx(stem)].kernel = small_k;
    nodes[idx(stem)].padding = stem_node.dilation * (small_k - 1) / 2;
    std::string what = "compact stem: '" + stem_node.name + "' becomes k=" +
                       std::to_string(small_k) + " s=1";
    if (pool) {
      what += " and '" + graph.node(*pool).name + "' is removed";
      nodes = remove_node(std::move(nodes), *pool);
    }
    candidates.push_back({EditKind::CompactStem, stem_node.name, what, std::move(nodes)});
  }
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    if ((n.kind == LayerKind::MaxPool || n.kind == LayerKind::AvgPool) && n.stride > 1) {
      candidates.push_back({EditKind::RemoveDownsample, n.name,
                            "remove downsampling node '" + n.name + "'",
                            remove_node(graph.nodes(), id)});
    }
  }

  std::vector<SurgeryEdit> out;
  for (auto& c : candidates) {
    try {
      ArchGraph edited = ArchGraph::build(graph.name(), std::move(c.nodes));
      const RFResult rf = compute_rf(edited);
      const BorderReport br = border_layer(edited, rf, input_size);
      if (br.border_node && br.solving.size() <= base.solving.size()) continue;
      SurgeryEdit e{c.kind,
                    c.target,
                    c.description,
                    edited,
                    rf.r_of(final_conv(edited)),
                    br.border_node ? std::optional<std::string>(edited.node(*br.border_node).name)
                                   : std::nullopt,
                    br.solving.size()};
      out.push_back(std::move(e));
    } catch (const Error&) {
      // an edit that breaks a merge (unequal jumps) is not a candidate
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const SurgeryEdit& a, const SurgeryEdit& b) {
    return a.solving_convs > b.solving_convs;
  });
  return out;
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json rf_to_json(const ArchGraph& graph, const RFResult& rf) {
  nlohmann::json layers = nlohmann::json::array();
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    nlohmann::json j;
    j["id"] = id;
    j["name"] = n.name;
    j["kind"] = std::string(kind_name(n.kind));
    j["r"] = rf.r_of(id);
    j["jump"] = rf.jump_of(id);
    if (!rf.spatial.empty()) j["spatial"] = rf.spatial[idx(id)];
    layers.push_back(std::move(j));
  }
  return layers;
}

nlohmann::json border_to_json(const ArchGraph& graph, const BorderReport& border) {
  nlohmann::json j;
  j["input_size"] = border.input_size;
  if (border.border_node) {
    j["border_node"] = graph.node(*border.border_node).name;
    j["border_node_id"] = *border.border_node;
  } else {
    j["border_node"] = nullptr;
    j["border_node_id"] = nullptr;
  }
  auto names = [&](const std::vector<int>& ids) {
    nlohmann::json a = nlohmann::json::array();
    for (int id : ids) a.push_back(graph.node(id).name);
    return a;
  };
  j["solving"] = names(border.solving);
  j["compressing"] = names(border.compressing);
  return j;
}

nlohmann::json rf_formula_note(const ArchGraph& graph, const RFResult& rf) {
  nlohmann::json j;
  j["formula"] = "r_l = r_{l-1} + (k_eff - 1) * jump_{l-1}, jump_l = jump_{l-1} * s_l, "
                 "k_eff = d * (k - 1) + 1, r_0 = 1";
  j["note"] =
      "The recurrence is sometimes printed with (k - 2) in place of (k - 1). That form "
      "contradicts r_1 = k for a single stride-1 layer, so (k - 1) is used here. Residual "
      "branches are ignored; merges take the largest incoming receptive field.";
  const auto& table = published_values();
  const auto it = table.find(graph.name());
  if (it != table.end() && !graph.conv_ids().empty()) {
    const long long computed = rf.r_of(final_conv(graph));
    nlohmann::json ref;
    ref["layer"] = graph.node(final_conv(graph)).name;
    ref["computed"] = computed;
    ref["published"] = it->second.value;
    ref["published_is_lower_bound"] = it->second.lower_bound;
    const bool agrees = it->second.lower_bound ? computed > it->second.value : computed == it->second.value;
    ref["agrees"] = agrees;
    j["reference"] = ref;
    if (!agrees) {
      j["note"] = j["note"].get<std::string>() + " For " + graph.name() + " this gives r = " +
                  std::to_string(computed) + " at " + graph.node(final_conv(graph)).name +
                  ", while the published figure is " + std::to_string(it->second.value) + ".";
    }
  }
  return j;
}

}  // namespace layerscope
