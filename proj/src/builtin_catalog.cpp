#include <algorithm>
#include <string>

#include "layerscope/arch_graph.hpp"
#include "layerscope/error.hpp"

namespace layerscope {
namespace {

// Appends nodes with names and predecessor names; ids are resolved on the fly.
class Builder {
 public:
  explicit Builder(const BuiltinOptions& opt) : opt_(opt) {}

  int width(int channels) const { return std::max(1, channels / std::max(1, opt_.width_divisor)); }

  int input(int channels) {
    LayerNode n;
    n.name = "input";
    n.kind = LayerKind::Input;
    n.out_channels = channels;
    return push(std::move(n));
  }

  int conv(const std::string& name, int from, int k, int s, int d, int p, int ch) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::Conv;
    n.kernel = k;
    n.stride = s;
    n.dilation = d;
    n.padding = p;
    n.out_channels = ch;
    n.inputs = {from};
    return push(std::move(n));
  }

  int pool(LayerKind kind, const std::string& name, int from, int k, int s, int p) {
    LayerNode n;
    n.name = name;
    n.kind = kind;
    n.kernel = k;
    n.stride = s;
    n.padding = p;
    n.inputs = {from};
    return push(std::move(n));
  }

  int unary(LayerKind kind, const std::string& name, int from) {
    LayerNode n;
    n.name = name;
    n.kind = kind;
    n.inputs = {from};
    return push(std::move(n));
  }

  int add(const std::string& name, int a, int b) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::Add;
    n.inputs = {a, b};
    return push(std::move(n));
  }

  int dense(const std::string& name, int from, int out) {
    LayerNode n;
    n.name = name;
    n.kind = LayerKind::Dense;
    n.out_channels = out;
    n.inputs = {from};
    return push(std::move(n));
  }

  /// GAP -> Dense -> Softmax readout.
  void readout(int from) {
    const int gap = unary(LayerKind::GlobalAvgPool, "gap", from);
    const int fc = dense("fc", gap, opt_.num_classes);
    unary(LayerKind::Softmax, "softmax", fc);
  }

  ArchGraph finish(std::string name) { return ArchGraph::build(std::move(name), std::move(nodes_)); }

 private:
  int push(LayerNode n) {
    n.id = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(n));
    return nodes_.back().id;
  }

  const BuiltinOptions& opt_;
  std::vector<LayerNode> nodes_;
};

// 0 marks a 2x2 stride-2 max pool.
std::vector<int> vgg_plan(std::string_view name) {
  if (name == "vgg11") return {64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0};
  if (name == "vgg13") return {64, 64, 0, 128, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0};
  if (name == "vgg16") {
    return {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
  }
  return {64,  64,  0,   128, 128, 0,   256, 256, 256, 256, 0,
          512, 512, 512, 512, 0,   512, 512, 512, 512, 0};
}

ArchGraph make_vgg(std::string_view name, const BuiltinOptions& opt) {
  if (opt.dilation < 1) throw Error(ErrorCode::InvalidArgument, "dilation must be >= 1");
  Builder b(opt);
  int prev = b.input(opt.in_channels);
  int conv_index = 0;
  int pool_index = 0;
  for (int ch : vgg_plan(name)) {
    if (ch == 0) {
      prev = b.pool(LayerKind::MaxPool, "pool" + std::to_string(++pool_index), prev, 2, 2, 0);
      continue;
    }
    const std::string idx = std::to_string(++conv_index);
    // padding = dilation keeps 3x3 convs spatial-preserving
    prev = b.conv("conv" + idx, prev, 3, 1, opt.dilation, opt.dilation, b.width(ch));
    if (opt.batchnorm) prev = b.unary(LayerKind::BatchNorm, "bn" + idx, prev);
    prev = b.unary(LayerKind::ReLU, "relu" + idx, prev);
  }
  b.readout(prev);
  return b.finish(std::string(name));
}

ArchGraph make_resnet(std::string_view name, const BuiltinOptions& opt) {
  const bool cifar = name.ends_with("_cifar");
  const bool deep = name.starts_with("resnet34");
  const int blocks[4] = {deep ? 3 : 2, deep ? 4 : 2, deep ? 6 : 2, deep ? 3 : 2};
  const int widths[4] = {64, 128, 256, 512};

  std::vector<bool> mask = opt.residual_mask;
  if (mask.empty()) mask.assign(4, true);
  if (mask.size() != 4) {
    throw Error(ErrorCode::InvalidArgument,
                "residual_mask needs one entry per stage (4), got " + std::to_string(mask.size()));
  }

  Builder b(opt);
  int prev = b.input(opt.in_channels);
  int stem_ch = b.width(64);
  if (cifar) {
    prev = b.conv("conv1", prev, 3, 1, 1, 1, stem_ch);
  } else {
    prev = b.conv("conv1", prev, 7, 2, 1, 3, stem_ch);
  }
  if (opt.batchnorm) prev = b.unary(LayerKind::BatchNorm, "bn1", prev);
  prev = b.unary(LayerKind::ReLU, "relu1", prev);
  if (!cifar) prev = b.pool(LayerKind::MaxPool, "maxpool", prev, 3, 2, 1);

  int in_ch = stem_ch;
  for (int stage = 0; stage < 4; ++stage) {
    const int ch = b.width(widths[stage]);
    for (int block = 0; block < blocks[stage]; ++block) {
      const std::string base =
          "l" + std::to_string(stage + 1) + "b" + std::to_string(block + 1) + "_";
      const int stride = (stage > 0 && block == 0) ? 2 : 1;
      const bool residual = mask[static_cast<std::size_t>(stage)];
      const int block_in = prev;
      int shortcut = block_in;
      // The projection is declared first so it never ends up last in topological order.
      if (residual && (stride != 1 || in_ch != ch)) {
        shortcut = b.conv(base + "down", block_in, 1, stride, 1, 0, ch);
        if (opt.batchnorm) shortcut = b.unary(LayerKind::BatchNorm, base + "down_bn", shortcut);
      }
      int x = b.conv(base + "conv1", block_in, 3, stride, 1, 1, ch);
      if (opt.batchnorm) x = b.unary(LayerKind::BatchNorm, base + "bn1", x);
      x = b.unary(LayerKind::ReLU, base + "relu1", x);
      x = b.conv(base + "conv2", x, 3, 1, 1, 1, ch);
      if (opt.batchnorm) x = b.unary(LayerKind::BatchNorm, base + "bn2", x);
      if (residual) x = b.add(base + "add", x, shortcut);
      prev = b.unary(LayerKind::ReLU, base + "relu2", x);
      in_ch = ch;
    }
  }
  b.readout(prev);
  return b.finish(std::string(name));
}

}  // namespace

std::vector<std::string> builtin_names() {
  return {"vgg11",    "vgg13",    "vgg16",          "vgg19",
          "resnet18", "resnet34", "resnet18_cifar", "resnet34_cifar"};
}

ArchGraph generate_builtin(std::string_view name, const BuiltinOptions& options) {
  if (options.width_divisor < 1) throw Error(ErrorCode::InvalidArgument, "width_divisor must be >= 1");
  if (options.num_classes < 1 || options.in_channels < 1) {
    throw Error(ErrorCode::InvalidArgument, "num_classes and in_channels must be >= 1");
  }
  if (name == "vgg11" || name == "vgg13" || name == "vgg16" || name == "vgg19") {
    if (!options.residual_mask.empty()) {
      throw Error(ErrorCode::InvalidArgument, "residual_mask applies to resnet architectures only");
    }
    return make_vgg(name, options);
  }
  if (name == "resnet18" || name == "resnet34" || name == "resnet18_cifar" ||
      name == "resnet34_cifar") {
    if (options.dilation != 1) {
      throw Error(ErrorCode::InvalidArgument, "dilation applies to vgg architectures only");
    }
    return make_resnet(name, options);
  }
  throw Error(ErrorCode::UnknownBuiltin, "unknown builtin architecture '" + std::string(name) + "'");
}

}  // namespace layerscope
