#include <algorithm>
#include <cmath>
#include <fstream>

#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/rf_analysis.hpp"
#include "layerscope/rng.hpp"
#include "ops.hpp"

namespace layerscope::engine {
namespace {

ops::Window window_of(const LayerNode& n) {
  return ops::Window{n.kernel, n.stride, n.dilation, n.padding};
}

[[noreturn]] void shape_error(const LayerNode& n, const std::string& what) {
  throw Error(ErrorCode::ShapeMismatch, "node '" + n.name + "': " + what);
}

void add_into(Tensor& dst, const Tensor& src) {
  if (dst.data.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < src.size(); ++i) dst.data[i] += src.data[i];
}

Tensor& grad_slot(std::vector<Tensor>& grads, const std::vector<Tensor>& outputs, int id) {
  Tensor& g = grads[static_cast<std::size_t>(id)];
  if (g.data.empty()) {
    const Tensor& o = outputs[static_cast<std::size_t>(id)];
    g = Tensor(o.n, o.c, o.h, o.w);
  }
  return g;
}

bool finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

std::vector<CapturePoint> capture_points(const ArchGraph& graph) {
  const RFResult rf = compute_rf(graph);
  std::map<int, int> owner;  // capture node -> conv id
  for (int conv : graph.conv_ids()) {
    int cur = conv;
    int point = conv;
    // walk single-successor chains through BN and Add to the first ReLU
    while (true) {
      const auto& succ = graph.successors(cur);
      if (succ.size() != 1) break;
      const LayerNode& s = graph.node(succ.front());
      if (s.kind == LayerKind::ReLU) {
        point = s.id;
        break;
      }
      if (s.kind != LayerKind::BatchNorm && s.kind != LayerKind::Add) break;
      cur = s.id;
    }
    auto it = owner.find(point);
    if (it == owner.end() || rf.r_of(conv) > rf.r_of(it->second)) owner[point] = conv;
  }
  std::vector<CapturePoint> out;
  for (int conv : graph.conv_ids()) {
    for (const auto& [point, c] : owner) {
      if (c == conv) out.push_back({graph.node(conv).name, point});
    }
  }
  return out;
}

Model Model::init(ArchGraph graph, std::uint64_t seed) {
  Model m;
  m.seed_ = seed;
  m.params_.resize(graph.size());
  Rng rng(derive_seed(seed, 0x1417));
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    NodeParams& p = m.params_[static_cast<std::size_t>(id)];
    const auto out = static_cast<std::size_t>(n.out_channels);
    if (n.kind == LayerKind::Conv || n.kind == LayerKind::Dense) {
      const std::size_t fan_in = static_cast<std::size_t>(n.in_channels) *
                                 (n.kind == LayerKind::Conv ? n.kernel * n.kernel : 1);
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      p.weight.resize(out * fan_in);
      for (float& w : p.weight) w = static_cast<float>(rng.uniform(-bound, bound));
      p.bias.assign(out, 0.0f);
    } else if (n.kind == LayerKind::BatchNorm) {
      p.gamma.assign(out, 1.0f);
      p.beta.assign(out, 0.0f);
      p.running_mean.assign(out, 0.0f);
      p.running_var.assign(out, 1.0f);
    }
  }
  // logits are the input of a trailing softmax, else the last node
  const int last = graph.topo_order().back();
  m.logits_node_ = graph.node(last).kind == LayerKind::Softmax ? graph.node(last).inputs.front() : last;
  m.graph_ = std::move(graph);
  return m;
}

ForwardResult Model::forward(const Tensor& input, Mode mode, const std::set<std::string>& capture,
                             Tape* tape) {
  return run(input, mode, capture, tape, mode == Mode::Train);
}

ForwardResult Model::forward(const Tensor& input, const std::set<std::string>& capture) const {
  return const_cast<Model*>(this)->run(input, Mode::Eval, capture, nullptr, false);
}

ForwardResult Model::run(const Tensor& input, Mode mode, const std::set<std::string>& capture,
                         Tape* tape, bool update_stats) {
  const std::size_t count = graph_.size();
  std::vector<Tensor> local;
  std::vector<Tensor>& out = tape ? tape->outputs : local;
  out.assign(count, Tensor{});
  if (tape) {
    tape->normalized.assign(count, Tensor{});
    tape->inv_std.assign(count, {});
    tape->argmax.assign(count, {});
  }
  // consumers left per node, so eval passes can drop dead activations early
  std::vector<int> pending(count, 0);
  for (const LayerNode& n : graph_.nodes()) {
    for (int in : n.inputs) ++pending[static_cast<std::size_t>(in)];
  }

  ForwardResult result;
  for (int id : graph_.topo_order()) {
    const LayerNode& n = graph_.node(id);
    const auto idx = static_cast<std::size_t>(id);
    NodeParams& p = params_[idx];
    Tensor& y = out[idx];
    const Tensor* x = n.inputs.empty() ? nullptr : &out[static_cast<std::size_t>(n.inputs.front())];
    if (x && x->c != n.in_channels && n.kind != LayerKind::Concat) {
      shape_error(n, "expected " + std::to_string(n.in_channels) + " channels, got " + std::to_string(x->c));
    }
    if (n.kind == LayerKind::Conv && std::min(x->h, x->w) + 2 * n.padding < n.effective_kernel()) {
      shape_error(n, "feature map of " + std::to_string(x->h) + "x" + std::to_string(x->w) +
                         " is smaller than the kernel");
    }
    switch (n.kind) {
      case LayerKind::Input:
        if (input.c != n.out_channels) {
          shape_error(n, "input has " + std::to_string(input.c) + " channels, graph expects " +
                             std::to_string(n.out_channels));
        }
        y = input;
        break;
      case LayerKind::Conv:
        ops::conv2d_forward(*x, p.weight, p.bias, n.out_channels, window_of(n), y);
        break;
      case LayerKind::MaxPool:
        ops::maxpool_forward(*x, window_of(n), y, tape ? &tape->argmax[idx] : nullptr);
        break;
      case LayerKind::AvgPool:
        ops::avgpool_forward(*x, window_of(n), y);
        break;
      case LayerKind::GlobalAvgPool:
        ops::gap_forward(*x, y);
        break;
      case LayerKind::BatchNorm:
        if (mode == Mode::Train) {
          Tensor x_hat;
          std::vector<float> inv_std, mean, var;
          ops::batchnorm_train(*x, p.gamma, p.beta, y, x_hat, inv_std, mean, var);
          if (update_stats) {
            const float mom = ops::kBatchNormMomentum;
            for (std::size_t c = 0; c < mean.size(); ++c) {
              p.running_mean[c] = (1.0f - mom) * p.running_mean[c] + mom * mean[c];
              p.running_var[c] = (1.0f - mom) * p.running_var[c] + mom * var[c];
            }
          }
          if (tape) {
            tape->normalized[idx] = std::move(x_hat);
            tape->inv_std[idx] = std::move(inv_std);
          }
        } else {
          ops::batchnorm_eval(*x, p, y);
        }
        break;
      case LayerKind::ReLU:
        ops::relu_forward(*x, y);
        break;
      case LayerKind::Add: {
        y = *x;
        for (std::size_t k = 1; k < n.inputs.size(); ++k) {
          const Tensor& o = out[static_cast<std::size_t>(n.inputs[k])];
          if (!o.same_shape(y)) shape_error(n, "add operands differ in shape");
          for (std::size_t i = 0; i < o.size(); ++i) y.data[i] += o.data[i];
        }
        break;
      }
      case LayerKind::Concat: {
        int channels = 0;
        for (int in : n.inputs) {
          const Tensor& o = out[static_cast<std::size_t>(in)];
          if (o.n != x->n || o.h != x->h || o.w != x->w) shape_error(n, "concat operands differ in spatial shape");
          channels += o.c;
        }
        y = Tensor(x->n, channels, x->h, x->w);
        const std::size_t hw = static_cast<std::size_t>(x->h) * x->w;
        for (int s = 0; s < x->n; ++s) {
          float* dst = y.data.data() + static_cast<std::size_t>(s) * channels * hw;
          for (int in : n.inputs) {
            const Tensor& o = out[static_cast<std::size_t>(in)];
            const float* src = o.data.data() + static_cast<std::size_t>(s) * o.c * hw;
            dst = std::copy(src, src + o.c * hw, dst);
          }
        }
        break;
      }
      case LayerKind::Dense:
        if (x->h != 1 || x->w != 1) shape_error(n, "dense input must be a vector (add a global pool)");
        ops::dense_forward(*x, p.weight, p.bias, n.out_channels, y);
        break;
      case LayerKind::Softmax:
        ops::softmax_forward(*x, y);
        break;
    }

    if (capture.count(n.name)) result.captured[n.name] = y;
    if (!tape) {
      for (int in : n.inputs) {
        const auto i = static_cast<std::size_t>(in);
        if (--pending[i] == 0 && static_cast<int>(i) != logits_node_) out[i] = Tensor{};
      }
    }
  }

  result.logits = out[static_cast<std::size_t>(logits_node_)];
  if (!finite(result.logits.data)) {
    throw Error(ErrorCode::NonFinite, "non-finite logits in forward pass (training diverged?)");
  }
  ops::softmax_forward(result.logits, result.probs);
  return result;
}

std::vector<NodeGrads> Model::backward(const Tape& tape, const Tensor& dlogits) const {
  const std::size_t count = graph_.size();
  std::vector<NodeGrads> grads(count);
  std::vector<Tensor> g(count);
  g[static_cast<std::size_t>(logits_node_)] = dlogits;
  const auto& order = graph_.topo_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const int id = *it;
    const auto idx = static_cast<std::size_t>(id);
    if (g[idx].data.empty()) continue;
    const LayerNode& n = graph_.node(id);
    const NodeParams& p = params_[idx];
    NodeGrads& pg = grads[idx];
    const Tensor& dy = g[idx];
    const int in0 = n.inputs.empty() ? -1 : n.inputs.front();
    const bool need_dx = in0 >= 0 && graph_.node(in0).kind != LayerKind::Input;
    const Tensor* x = in0 >= 0 ? &tape.outputs[static_cast<std::size_t>(in0)] : nullptr;

    switch (n.kind) {
      case LayerKind::Input:
      case LayerKind::Softmax:
        break;
      case LayerKind::Conv:
        pg.weight.assign(p.weight.size(), 0.0f);
        pg.bias.assign(p.bias.size(), 0.0f);
        ops::conv2d_backward(*x, p.weight, dy, window_of(n), pg.weight, pg.bias,
                             need_dx ? &grad_slot(g, tape.outputs, in0) : nullptr);
        break;
      case LayerKind::Dense:
        pg.weight.assign(p.weight.size(), 0.0f);
        pg.bias.assign(p.bias.size(), 0.0f);
        ops::dense_backward(*x, p.weight, dy, pg.weight, pg.bias,
                            need_dx ? &grad_slot(g, tape.outputs, in0) : nullptr);
        break;
      case LayerKind::MaxPool:
        if (need_dx) ops::maxpool_backward(dy, tape.argmax[idx], grad_slot(g, tape.outputs, in0));
        break;
      case LayerKind::AvgPool:
        if (need_dx) ops::avgpool_backward(dy, window_of(n), grad_slot(g, tape.outputs, in0));
        break;
      case LayerKind::GlobalAvgPool:
        if (need_dx) ops::gap_backward(dy, grad_slot(g, tape.outputs, in0));
        break;
      case LayerKind::BatchNorm: {
        pg.gamma.assign(p.gamma.size(), 0.0f);
        pg.beta.assign(p.beta.size(), 0.0f);
        if (tape.normalized[idx].data.empty()) {
          throw Error(ErrorCode::InvalidArgument, "backward needs a Train-mode tape");
        }
        Tensor scratch;
        Tensor& dx = need_dx ? grad_slot(g, tape.outputs, in0) : (scratch = Tensor(dy.n, dy.c, dy.h, dy.w));
        ops::batchnorm_backward(dy, tape.normalized[idx], tape.inv_std[idx], p.gamma, pg.gamma, pg.beta, dx);
        break;
      }
      case LayerKind::ReLU:
        if (need_dx) ops::relu_backward(tape.outputs[idx], dy, grad_slot(g, tape.outputs, in0));
        break;
      case LayerKind::Add:
        for (int in : n.inputs) {
          if (graph_.node(in).kind != LayerKind::Input) add_into(g[static_cast<std::size_t>(in)], dy);
        }
        break;
      case LayerKind::Concat: {
        const std::size_t hw = static_cast<std::size_t>(dy.h) * dy.w;
        std::size_t offset = 0;
        for (int in : n.inputs) {
          const Tensor& o = tape.outputs[static_cast<std::size_t>(in)];
          if (graph_.node(in).kind != LayerKind::Input) {
            Tensor& dx = grad_slot(g, tape.outputs, in);
            for (int s = 0; s < dy.n; ++s) {
              const float* src = dy.data.data() + (static_cast<std::size_t>(s) * dy.c + offset) * hw;
              float* dst = dx.data.data() + static_cast<std::size_t>(s) * o.c * hw;
              for (std::size_t i = 0; i < o.c * hw; ++i) dst[i] += src[i];
            }
          }
          offset += static_cast<std::size_t>(o.c);
        }
        break;
      }
    }
    g[idx] = Tensor{};
  }
  return grads;
}

bool Model::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](const NodeParams& p) {
    return finite(p.weight) && finite(p.bias) && finite(p.gamma) && finite(p.beta) &&
           finite(p.running_mean) && finite(p.running_var);
  });
}

namespace {

std::vector<std::vector<float>*> param_fields(NodeParams& p) {
  return {&p.weight, &p.bias, &p.gamma, &p.beta, &p.running_mean, &p.running_var};
}

}  // namespace

void Model::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream arch(dir / "arch.dsl", std::ios::binary);
    arch << serialize_arch(graph_);
    if (!arch) throw Error(ErrorCode::Io, "cannot write " + (dir / "arch.dsl").string());
  }
  TensorDump dump;
  dump.layer_name = graph_.name();
  for (const NodeParams& p : params_) {
    for (auto* f : param_fields(const_cast<NodeParams&>(p))) {
      dump.payload.insert(dump.payload.end(), f->begin(), f->end());
    }
  }
  dump.shape = {dump.payload.size()};
  write_dump(dump, dir / "params.actd");
  nlohmann::json meta = {{"seed", seed_}, {"name", graph_.name()}, {"parameters", dump.payload.size()}};
  std::ofstream m(dir / "model.json", std::ios::binary);
  m << meta.dump(2) << "\n";
  if (!m) throw Error(ErrorCode::Io, "cannot write " + (dir / "model.json").string());
}

Model Model::load(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "model.json", std::ios::binary);
  std::ifstream arch_in(dir / "arch.dsl", std::ios::binary);
  if (!meta_in || !arch_in) throw Error(ErrorCode::Io, "no saved model in " + dir.string());
  const nlohmann::json meta = nlohmann::json::parse(meta_in);
  const std::string text((std::istreambuf_iterator<char>(arch_in)), std::istreambuf_iterator<char>());
  Model m = init(parse_arch(text, meta.at("name").get<std::string>()), meta.at("seed").get<std::uint64_t>());
  const TensorDump dump = read_dump(dir / "params.actd");
  std::size_t pos = 0;
  for (NodeParams& p : m.params_) {
    for (auto* f : param_fields(p)) {
      if (pos + f->size() > dump.payload.size()) {
        throw Error(ErrorCode::Truncated, "parameter file too short for the architecture");
      }
      std::copy_n(dump.payload.begin() + static_cast<std::ptrdiff_t>(pos), f->size(), f->begin());
      pos += f->size();
    }
  }
  if (pos != dump.payload.size()) {
    throw Error(ErrorCode::DimensionMismatch, "parameter file does not match the architecture");
  }
  return m;
}

}  // namespace layerscope::engine
