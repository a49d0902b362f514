#pragma once

// CNN architectures as validated DAGs of layer nodes, the line-based
// architecture text format, and the builtin VGG/ResNet catalog.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace layerscope {

enum class LayerKind {
  Input,
  Conv,
  MaxPool,
  AvgPool,
  GlobalAvgPool,
  BatchNorm,
  ReLU,
  Add,
  Concat,
  Dense,
  Softmax,
};

std::string_view kind_name(LayerKind kind);

/// True for kinds that carry kernel/stride/padding (Conv and the windowed pools).
bool is_windowed(LayerKind kind);

struct LayerNode {
  int id = 0;
  std::string name;
  LayerKind kind = LayerKind::Input;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<int> inputs;  // predecessor ids, in declaration order

  /// Spatial extent covered by the kernel once dilation is applied.
  int effective_kernel() const { return dilation * (kernel - 1) + 1; }

  bool operator==(const LayerNode&) const = default;
};

/// Immutable, validated architecture. Node ids equal their index in nodes().
class ArchGraph {
 public:
  /// Validate `nodes` and build the graph. Channel counts are inferred:
  /// callers set out_channels for Input, Conv and Dense only.
  /// Throws Error (Validation, DanglingReference, Cycle).
  static ArchGraph build(std::string name, std::vector<LayerNode> nodes);

  const std::string& name() const { return name_; }
  const std::vector<LayerNode>& nodes() const { return nodes_; }
  const LayerNode& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  int input_id() const { return input_id_; }

  /// Deterministic topological order; among ready nodes the smallest id goes first.
  const std::vector<int>& topo_order() const { return topo_; }
  const std::vector<int>& successors(int id) const {
    return successors_.at(static_cast<std::size_t>(id));
  }

  std::optional<int> find(std::string_view name) const;
  const LayerNode& node(std::string_view name) const;

  /// Conv node ids in topological order.
  std::vector<int> conv_ids() const;

  /// True when no node has more than one predecessor.
  bool is_sequential() const;

  /// Structural equality ignores the metadata name.
  bool same_structure(const ArchGraph& other) const { return nodes_ == other.nodes_; }

 private:
  std::string name_;
  std::vector<LayerNode> nodes_;
  std::vector<std::vector<int>> successors_;
  std::vector<int> topo_;
  int input_id_ = 0;
};

/// Free-function spelling of ArchGraph::topo_order, returning node ids.
std::vector<int> topo_order(const ArchGraph& graph);

ArchGraph parse_arch(std::string_view text, std::string name = "custom");
std::string serialize_arch(const ArchGraph& graph);

/// FNV-1a 64 of the serialized text, as 16 lowercase hex digits.
std::string arch_hash(const ArchGraph& graph);

struct BuiltinOptions {
  bool batchnorm = true;
  /// Per-stage residual enable flags for resnet names (4 entries). Empty means all enabled.
  std::vector<bool> residual_mask;
  /// Dilation applied to every conv of the vgg names.
  int dilation = 1;
  int in_channels = 3;
  int num_classes = 10;
  /// Channel widths are divided by this factor (minimum 1 channel) for desk-scale runs.
  int width_divisor = 1;
};

std::vector<std::string> builtin_names();
ArchGraph generate_builtin(std::string_view name, const BuiltinOptions& options = {});

}  // namespace layerscope
