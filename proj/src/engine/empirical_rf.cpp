#include <algorithm>

#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/rf_analysis.hpp"

namespace layerscope::engine {
namespace {

// Gradient restricted to the bounding box [y0, y0 + h) x [x0, x0 + w) of one
// feature map; everything outside the box is zero. Channels collapse to one
// because every weight is the same positive constant.
struct Patch {
  int y0 = 0, x0 = 0, h = 0, w = 0;
  std::vector<double> v;

  bool empty() const { return h == 0 || w == 0; }
  double& at(int y, int x) { return v[static_cast<std::size_t>(y - y0) * w + (x - x0)]; }
};

void accumulate(Patch& dst, const Patch& src) {
  if (src.empty()) return;
  if (dst.empty()) {
    dst = src;
    return;
  }
  Patch merged;
  merged.y0 = std::min(dst.y0, src.y0);
  merged.x0 = std::min(dst.x0, src.x0);
  merged.h = std::max(dst.y0 + dst.h, src.y0 + src.h) - merged.y0;
  merged.w = std::max(dst.x0 + dst.w, src.x0 + src.w) - merged.x0;
  merged.v.assign(static_cast<std::size_t>(merged.h) * merged.w, 0.0);
  for (const Patch* p : {static_cast<const Patch*>(&dst), &src}) {
    for (int y = 0; y < p->h; ++y) {
      for (int x = 0; x < p->w; ++x) {
        merged.at(p->y0 + y, p->x0 + x) += p->v[static_cast<std::size_t>(y) * p->w + x];
      }
    }
  }
  dst = std::move(merged);
}

// Adjoint of a windowed op with uniform taps of weight `tap`.
Patch window_backward(const Patch& dy, const LayerNode& n, int in_side, double tap) {
  const int k_eff = n.effective_kernel();
  const int lo_y = std::max(0, dy.y0 * n.stride - n.padding);
  const int lo_x = std::max(0, dy.x0 * n.stride - n.padding);
  const int hi_y = std::min(in_side, (dy.y0 + dy.h - 1) * n.stride - n.padding + k_eff);
  const int hi_x = std::min(in_side, (dy.x0 + dy.w - 1) * n.stride - n.padding + k_eff);
  Patch dx;
  if (hi_y <= lo_y || hi_x <= lo_x) return dx;
  dx.y0 = lo_y;
  dx.x0 = lo_x;
  dx.h = hi_y - lo_y;
  dx.w = hi_x - lo_x;
  dx.v.assign(static_cast<std::size_t>(dx.h) * dx.w, 0.0);
  for (int oy = dy.y0; oy < dy.y0 + dy.h; ++oy) {
    for (int ox = dy.x0; ox < dy.x0 + dy.w; ++ox) {
      const double g = dy.v[static_cast<std::size_t>(oy - dy.y0) * dy.w + (ox - dy.x0)] * tap;
      if (g == 0.0) continue;
      for (int ki = 0; ki < n.kernel; ++ki) {
        const int iy = oy * n.stride - n.padding + ki * n.dilation;
        if (iy < 0 || iy >= in_side) continue;
        for (int kj = 0; kj < n.kernel; ++kj) {
          const int ix = ox * n.stride - n.padding + kj * n.dilation;
          if (ix >= 0 && ix < in_side) dx.at(iy, ix) += g;
        }
      }
    }
  }
  return dx;
}

SupportWidth probe(const ArchGraph& g, const std::vector<int>& spatial, int start, int input_size) {
  std::vector<Patch> grads(g.size());
  const int side = spatial[static_cast<std::size_t>(start)];
  Patch& seed = grads[static_cast<std::size_t>(start)];
  seed.y0 = seed.x0 = (side - 1) / 2;
  seed.h = seed.w = 1;
  seed.v = {1.0};

  const auto& order = g.topo_order();
  const auto pos = std::find(order.begin(), order.end(), start);
  for (auto it = std::make_reverse_iterator(pos + 1); it != order.rend(); ++it) {
    const LayerNode& n = g.node(*it);
    Patch dy = std::move(grads[static_cast<std::size_t>(n.id)]);
    if (dy.empty() || n.kind == LayerKind::Input) {
      grads[static_cast<std::size_t>(n.id)] = std::move(dy);
      continue;
    }
    for (int in : n.inputs) {
      const int in_side = spatial[static_cast<std::size_t>(in)];
      Patch dx;
      switch (n.kind) {
        case LayerKind::Conv:
          dx = window_backward(dy, n, in_side, 1.0);
          break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
          dx = window_backward(dy, n, in_side, 1.0 / (n.kernel * n.kernel));
          break;
        case LayerKind::GlobalAvgPool:
        case LayerKind::Dense:
        case LayerKind::Softmax:
          throw Error(ErrorCode::InvalidArgument, "empirical_rf cannot start after global pooling");
        default:  // BN, ReLU, Add, Concat act as identity on the single channel
          dx = dy;
          break;
      }
      accumulate(grads[static_cast<std::size_t>(in)], dx);
    }
  }

  Patch& in = grads[static_cast<std::size_t>(g.input_id())];
  SupportWidth out;
  out.node = start;
  if (in.empty()) return out;
  int y_lo = in.y0 + in.h, y_hi = -1, x_lo = in.x0 + in.w, x_hi = -1;
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      if (in.v[static_cast<std::size_t>(y) * in.w + x] != 0.0) {
        y_lo = std::min(y_lo, in.y0 + y);
        y_hi = std::max(y_hi, in.y0 + y);
        x_lo = std::min(x_lo, in.x0 + x);
        x_hi = std::max(x_hi, in.x0 + x);
      }
    }
  }
  if (y_hi < 0) return out;
  out.width = std::max(y_hi - y_lo, x_hi - x_lo) + 1;
  out.clipped = y_lo == 0 || x_lo == 0 || y_hi == input_size - 1 || x_hi == input_size - 1;
  return out;
}

}  // namespace

std::vector<SupportWidth> empirical_rf(const ArchGraph& graph, int input_size,
                                       std::optional<std::vector<int>> nodes) {
  const std::vector<int> spatial = propagate_spatial(graph, input_size);
  // nodes at or after a global pool have no spatial map to probe
  std::vector<bool> pooled(graph.size(), false);
  for (int id : graph.topo_order()) {
    const LayerNode& n = graph.node(id);
    bool p = n.kind == LayerKind::GlobalAvgPool || n.kind == LayerKind::Dense || n.kind == LayerKind::Softmax;
    for (int in : n.inputs) p = p || pooled[static_cast<std::size_t>(in)];
    pooled[static_cast<std::size_t>(id)] = p;
  }
  std::vector<int> targets;
  if (nodes) {
    for (int id : *nodes) {
      if (id < 0 || static_cast<std::size_t>(id) >= graph.size()) {
        throw Error(ErrorCode::InvalidArgument, "empirical_rf: node id out of range");
      }
      if (pooled[static_cast<std::size_t>(id)]) {
        throw Error(ErrorCode::InvalidArgument, "empirical_rf: node '" + graph.node(id).name +
                                                    "' follows global pooling");
      }
      targets.push_back(id);
    }
  } else {
    for (int id : graph.topo_order()) {
      if (!pooled[static_cast<std::size_t>(id)]) targets.push_back(id);
    }
  }
  std::vector<SupportWidth> out;
  out.reserve(targets.size());
  for (int id : targets) out.push_back(probe(graph, spatial, id, input_size));
  return out;
}

}  // namespace layerscope::engine
