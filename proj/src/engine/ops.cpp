#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "layerscope/kernels.hpp"

namespace layerscope::engine::ops {
namespace {

constexpr std::size_t kColBudget = std::size_t{1} << 18;  // floats per im2col buffer

std::size_t chunk_samples(int n, std::size_t k, std::size_t p) {
  const std::size_t per = std::max<std::size_t>(1, k * p);
  return std::clamp<std::size_t>(kColBudget / per, 1, static_cast<std::size_t>(n));
}

// Output columns [lo, hi) whose input index ow * stride + offset lies in [0, extent).
std::pair<int, int> valid_range(int out_n, int stride, int offset, int extent) {
  int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  int hi = extent - offset <= 0 ? 0 : (extent - offset - 1) / stride + 1;
  lo = std::min(lo, out_n);
  hi = std::clamp(hi, lo, out_n);
  return {lo, hi};
}

// col is K x (count * P); column index = local sample * P + output position.
void im2col(const Tensor& x, int first, int count, const Window& win, int oh_n, int ow_n,
            std::vector<float>& col) {
  const int k = win.kernel;
  const std::size_t p_count = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t ld = static_cast<std::size_t>(count) * p_count;
  col.resize(static_cast<std::size_t>(x.c) * k * k * ld);
  for (int c = 0; c < x.c; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        float* row = col.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ld;
        const int w_off = kj * win.dilation - win.padding;
        const auto [lo, hi] = valid_range(ow_n, win.stride, w_off, x.w);
        for (int s = 0; s < count; ++s) {
          const float* plane = x.data.data() + (static_cast<std::size_t>(first + s) * x.c + c) * x.h * x.w;
          float* dst = row + static_cast<std::size_t>(s) * p_count;
          for (int oh = 0; oh < oh_n; ++oh) {
            float* d = dst + static_cast<std::size_t>(oh) * ow_n;
            const int ih = oh * win.stride - win.padding + ki * win.dilation;
            if (ih < 0 || ih >= x.h) {
              std::fill(d, d + ow_n, 0.0f);
              continue;
            }
            const float* src = plane + static_cast<std::size_t>(ih) * x.w + w_off;
            std::fill(d, d + lo, 0.0f);
            if (win.stride == 1) {
              std::copy(src + lo, src + hi, d + lo);
            } else {
              for (int ow = lo; ow < hi; ++ow) d[ow] = src[ow * win.stride];
            }
            std::fill(d + hi, d + ow_n, 0.0f);
          }
        }
      }
    }
  }
}

void col2im(const std::vector<float>& col, int first, int count, const Window& win, int oh_n,
            int ow_n, Tensor& dx) {
  const int k = win.kernel;
  const std::size_t p_count = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t ld = static_cast<std::size_t>(count) * p_count;
  for (int c = 0; c < dx.c; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const float* row = col.data() + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * ld;
        for (int s = 0; s < count; ++s) {
          float* plane = dx.data.data() + (static_cast<std::size_t>(first + s) * dx.c + c) * dx.h * dx.w;
          const float* src = row + static_cast<std::size_t>(s) * p_count;
          for (int oh = 0; oh < oh_n; ++oh) {
            const int ih = oh * win.stride - win.padding + ki * win.dilation;
            if (ih < 0 || ih >= dx.h) continue;
            float* d = plane + static_cast<std::size_t>(ih) * dx.w;
            const float* s_row = src + static_cast<std::size_t>(oh) * ow_n;
            for (int ow = 0; ow < ow_n; ++ow) {
              const int iw = ow * win.stride - win.padding + kj * win.dilation;
              if (iw >= 0 && iw < dx.w) d[iw] += s_row[ow];
            }
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias,
                    int out_channels, const Window& win, Tensor& y) {
  const int oh_n = win.out_extent(x.h);
  const int ow_n = win.out_extent(x.w);
  y = Tensor(x.n, out_channels, oh_n, ow_n);
  const std::size_t k_dim = static_cast<std::size_t>(x.c) * win.kernel * win.kernel;
  const std::size_t p_count = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t chunk = chunk_samples(x.n, k_dim, p_count);
  std::vector<float> col;
  std::vector<float> ymat;
  for (int first = 0; first < x.n; first += static_cast<int>(chunk)) {
    const int count = std::min(static_cast<int>(chunk), x.n - first);
    const std::size_t cols = static_cast<std::size_t>(count) * p_count;
    im2col(x, first, count, win, oh_n, ow_n, col);
    ymat.assign(static_cast<std::size_t>(out_channels) * cols, 0.0f);
    kernels::gemm_nn(static_cast<std::size_t>(out_channels), cols, k_dim, weight.data(), k_dim,
                     col.data(), cols, ymat.data(), cols);
    for (int s = 0; s < count; ++s) {
      for (int o = 0; o < out_channels; ++o) {
        const float* src = ymat.data() + static_cast<std::size_t>(o) * cols + s * p_count;
        float* dst = y.data.data() + (static_cast<std::size_t>(first + s) * out_channels + o) * p_count;
        const float b = bias[static_cast<std::size_t>(o)];
        for (std::size_t p = 0; p < p_count; ++p) dst[p] = src[p] + b;
      }
    }
  }
}

void conv2d_backward(const Tensor& x, const std::vector<float>& weight, const Tensor& dy,
                     const Window& win, std::vector<float>& dweight, std::vector<float>& dbias,
                     Tensor* dx) {
  const int out_channels = dy.c;
  const int oh_n = dy.h;
  const int ow_n = dy.w;
  const std::size_t k_dim = static_cast<std::size_t>(x.c) * win.kernel * win.kernel;
  const std::size_t p_count = static_cast<std::size_t>(oh_n) * ow_n;
  const std::size_t chunk = chunk_samples(x.n, k_dim, p_count);
  std::vector<float> col;
  std::vector<float> dymat;
  std::vector<float> dcol;
  for (int first = 0; first < x.n; first += static_cast<int>(chunk)) {
    const int count = std::min(static_cast<int>(chunk), x.n - first);
    const std::size_t cols = static_cast<std::size_t>(count) * p_count;
    dymat.resize(static_cast<std::size_t>(out_channels) * cols);
    for (int s = 0; s < count; ++s) {
      for (int o = 0; o < out_channels; ++o) {
        const float* src = dy.data.data() + (static_cast<std::size_t>(first + s) * out_channels + o) * p_count;
        std::copy(src, src + p_count, dymat.data() + static_cast<std::size_t>(o) * cols + s * p_count);
      }
    }
    for (int o = 0; o < out_channels; ++o) {
      const float* row = dymat.data() + static_cast<std::size_t>(o) * cols;
      float acc = 0.0f;
      for (std::size_t i = 0; i < cols; ++i) acc += row[i];
      dbias[static_cast<std::size_t>(o)] += acc;
    }
    im2col(x, first, count, win, oh_n, ow_n, col);
    kernels::gemm_nt(static_cast<std::size_t>(out_channels), k_dim, cols, dymat.data(), cols,
                     col.data(), cols, dweight.data(), k_dim);
    if (dx) {
      dcol.assign(k_dim * cols, 0.0f);
      kernels::gemm_tn(k_dim, cols, static_cast<std::size_t>(out_channels), weight.data(), k_dim,
                       dymat.data(), cols, dcol.data(), cols);
      col2im(dcol, first, count, win, oh_n, ow_n, *dx);
    }
  }
}

void maxpool_forward(const Tensor& x, const Window& win, Tensor& y, std::vector<std::uint32_t>* argmax) {
  const int oh_n = win.out_extent(x.h);
  const int ow_n = win.out_extent(x.w);
  y = Tensor(x.n, x.c, oh_n, ow_n);
  if (argmax) argmax->assign(y.size(), std::numeric_limits<std::uint32_t>::max());
  std::size_t out = 0;
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * x.c + c) * x.h * x.w;
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow, ++out) {
          float best = -std::numeric_limits<float>::infinity();
          std::uint32_t best_idx = std::numeric_limits<std::uint32_t>::max();
          for (int ki = 0; ki < win.kernel; ++ki) {
            const int ih = oh * win.stride - win.padding + ki;
            if (ih < 0 || ih >= x.h) continue;
            for (int kj = 0; kj < win.kernel; ++kj) {
              const int iw = ow * win.stride - win.padding + kj;
              if (iw < 0 || iw >= x.w) continue;
              const std::size_t idx = base + static_cast<std::size_t>(ih) * x.w + iw;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = static_cast<std::uint32_t>(idx);
              }
            }
          }
          y.data[out] = best_idx == std::numeric_limits<std::uint32_t>::max() ? 0.0f : best;
          if (argmax) (*argmax)[out] = best_idx;
        }
      }
    }
  }
}

void maxpool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, Tensor& dx) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (argmax[i] != std::numeric_limits<std::uint32_t>::max()) dx.data[argmax[i]] += dy.data[i];
  }
}

void avgpool_forward(const Tensor& x, const Window& win, Tensor& y) {
  const int oh_n = win.out_extent(x.h);
  const int ow_n = win.out_extent(x.w);
  y = Tensor(x.n, x.c, oh_n, ow_n);
  const float scale = 1.0f / static_cast<float>(win.kernel * win.kernel);
  std::size_t out = 0;
  for (int n = 0; n < x.n; ++n) {
    for (int c = 0; c < x.c; ++c) {
      const float* plane = x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * x.h * x.w;
      for (int oh = 0; oh < oh_n; ++oh) {
        for (int ow = 0; ow < ow_n; ++ow, ++out) {
          float acc = 0.0f;
          for (int ki = 0; ki < win.kernel; ++ki) {
            const int ih = oh * win.stride - win.padding + ki;
            if (ih < 0 || ih >= x.h) continue;
            for (int kj = 0; kj < win.kernel; ++kj) {
              const int iw = ow * win.stride - win.padding + kj;
              if (iw >= 0 && iw < x.w) acc += plane[ih * x.w + iw];
            }
          }
          y.data[out] = acc * scale;
        }
      }
    }
  }
}

void avgpool_backward(const Tensor& dy, const Window& win, Tensor& dx) {
  const float scale = 1.0f / static_cast<float>(win.kernel * win.kernel);
  std::size_t out = 0;
  for (int n = 0; n < dy.n; ++n) {
    for (int c = 0; c < dy.c; ++c) {
      float* plane = dx.data.data() + (static_cast<std::size_t>(n) * dx.c + c) * dx.h * dx.w;
      for (int oh = 0; oh < dy.h; ++oh) {
        for (int ow = 0; ow < dy.w; ++ow, ++out) {
          const float g = dy.data[out] * scale;
          for (int ki = 0; ki < win.kernel; ++ki) {
            const int ih = oh * win.stride - win.padding + ki;
            if (ih < 0 || ih >= dx.h) continue;
            for (int kj = 0; kj < win.kernel; ++kj) {
              const int iw = ow * win.stride - win.padding + kj;
              if (iw >= 0 && iw < dx.w) plane[ih * dx.w + iw] += g;
            }
          }
        }
      }
    }
  }
}

void batchnorm_train(const Tensor& x, const std::vector<float>& gamma, const std::vector<float>& beta,
                     Tensor& y, Tensor& x_hat, std::vector<float>& inv_std, std::vector<float>& mean,
                     std::vector<float>& var_unbiased) {
  y = Tensor(x.n, x.c, x.h, x.w);
  x_hat = Tensor(x.n, x.c, x.h, x.w);
  inv_std.assign(static_cast<std::size_t>(x.c), 0.0f);
  mean.assign(static_cast<std::size_t>(x.c), 0.0f);
  var_unbiased.assign(static_cast<std::size_t>(x.c), 0.0f);
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  const double m = static_cast<double>(x.n) * static_cast<double>(hw);
  for (int c = 0; c < x.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const float* p = x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) sum += p[i];
    }
    const double mu = sum / m;
    double sq = 0.0;
    for (int n = 0; n < x.n; ++n) {
      const float* p = x.data.data() + (static_cast<std::size_t>(n) * x.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mu;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const float is = static_cast<float>(1.0 / std::sqrt(var + kBatchNormEps));
    const auto ci = static_cast<std::size_t>(c);
    inv_std[ci] = is;
    mean[ci] = static_cast<float>(mu);
    var_unbiased[ci] = static_cast<float>(m > 1.0 ? sq / (m - 1.0) : var);
    const float muf = static_cast<float>(mu);
    for (int n = 0; n < x.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * x.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const float xh = (x.data[off + i] - muf) * is;
        x_hat.data[off + i] = xh;
        y.data[off + i] = gamma[ci] * xh + beta[ci];
      }
    }
  }
}

void batchnorm_eval(const Tensor& x, const NodeParams& p, Tensor& y) {
  y = Tensor(x.n, x.c, x.h, x.w);
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  for (int c = 0; c < x.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const float scale = p.gamma[ci] / std::sqrt(p.running_var[ci] + kBatchNormEps);
    const float shift = p.beta[ci] - p.running_mean[ci] * scale;
    for (int n = 0; n < x.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * x.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) y.data[off + i] = x.data[off + i] * scale + shift;
    }
  }
}

void batchnorm_backward(const Tensor& dy, const Tensor& x_hat, const std::vector<float>& inv_std,
                        const std::vector<float>& gamma, std::vector<float>& dgamma,
                        std::vector<float>& dbeta, Tensor& dx) {
  const std::size_t hw = static_cast<std::size_t>(dy.h) * dy.w;
  const double m = static_cast<double>(dy.n) * static_cast<double>(hw);
  for (int c = 0; c < dy.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    double sum_dy = 0.0;
    double sum_dy_xh = 0.0;
    for (int n = 0; n < dy.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * dy.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += dy.data[off + i];
        sum_dy_xh += static_cast<double>(dy.data[off + i]) * x_hat.data[off + i];
      }
    }
    dgamma[ci] += static_cast<float>(sum_dy_xh);
    dbeta[ci] += static_cast<float>(sum_dy);
    const double k = static_cast<double>(gamma[ci]) * inv_std[ci] / m;
    for (int n = 0; n < dy.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * dy.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        dx.data[off + i] += static_cast<float>(
            k * (m * dy.data[off + i] - sum_dy - x_hat.data[off + i] * sum_dy_xh));
      }
    }
  }
}

void relu_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h, x.w);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
}

void relu_backward(const Tensor& y, const Tensor& dy, Tensor& dx) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y.data[i] > 0.0f) dx.data[i] += dy.data[i];
  }
}

void gap_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, 1, 1);
  const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
  for (std::size_t i = 0; i < static_cast<std::size_t>(x.n) * x.c; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += x.data[i * hw + j];
    y.data[i] = static_cast<float>(acc / static_cast<double>(hw));
  }
}

void gap_backward(const Tensor& dy, Tensor& dx) {
  const std::size_t hw = static_cast<std::size_t>(dx.h) * dx.w;
  const float scale = 1.0f / static_cast<float>(hw);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const float g = dy.data[i] * scale;
    for (std::size_t j = 0; j < hw; ++j) dx.data[i * hw + j] += g;
  }
}

void dense_forward(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias,
                   int out, Tensor& y) {
  const std::size_t f = x.sample_size();
  y = Tensor(x.n, out, 1, 1);
  kernels::gemm_nt(static_cast<std::size_t>(x.n), static_cast<std::size_t>(out), f, x.data.data(), f,
                   weight.data(), f, y.data.data(), static_cast<std::size_t>(out));
  for (int n = 0; n < x.n; ++n) {
    for (int o = 0; o < out; ++o) y.data[static_cast<std::size_t>(n) * out + o] += bias[static_cast<std::size_t>(o)];
  }
}

void dense_backward(const Tensor& x, const std::vector<float>& weight, const Tensor& dy,
                    std::vector<float>& dweight, std::vector<float>& dbias, Tensor* dx) {
  const std::size_t f = x.sample_size();
  const std::size_t out = static_cast<std::size_t>(dy.c);
  const std::size_t n = static_cast<std::size_t>(x.n);
  kernels::gemm_tn(out, f, n, dy.data.data(), out, x.data.data(), f, dweight.data(), f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) dbias[o] += dy.data[i * out + o];
  }
  if (dx) kernels::gemm_nn(n, f, out, dy.data.data(), out, weight.data(), f, dx->data.data(), f);
}

void softmax_forward(const Tensor& x, Tensor& y) {
  y = Tensor(x.n, x.c, x.h, x.w);
  const std::size_t classes = x.sample_size();
  for (int n = 0; n < x.n; ++n) {
    const float* in = x.data.data() + static_cast<std::size_t>(n) * classes;
    float* out = y.data.data() + static_cast<std::size_t>(n) * classes;
    const float top = *std::max_element(in, in + classes);
    double total = 0.0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(static_cast<double>(in[c] - top));
    for (std::size_t c = 0; c < classes; ++c) {
      out[c] = static_cast<float>(std::exp(static_cast<double>(in[c] - top)) / total);
    }
  }
}

}  // namespace layerscope::engine::ops
