#pragma once

// Layer kernels used by Model. Shapes are validated by the caller.

#include <cstdint>
#include <vector>

#include "layerscope/engine.hpp"

namespace layerscope::engine::ops {

struct Window {
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  int out_extent(int in) const {
    const int span = in + 2 * padding - dilation * (kernel - 1) - 1;
    return span < 0 ? 1 : span / stride + 1;
  }
};

void conv2d_forward(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias,
                    int out_channels, const Window& win, Tensor& y);

/// Accumulates into dweight/dbias; writes dx when non-null.
void conv2d_backward(const Tensor& x, const std::vector<float>& weight, const Tensor& dy,
                     const Window& win, std::vector<float>& dweight, std::vector<float>& dbias,
                     Tensor* dx);

void maxpool_forward(const Tensor& x, const Window& win, Tensor& y, std::vector<std::uint32_t>* argmax);
void maxpool_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, Tensor& dx);

void avgpool_forward(const Tensor& x, const Window& win, Tensor& y);
void avgpool_backward(const Tensor& dy, const Window& win, Tensor& dx);

void batchnorm_train(const Tensor& x, const std::vector<float>& gamma, const std::vector<float>& beta,
                     Tensor& y, Tensor& x_hat, std::vector<float>& inv_std, std::vector<float>& mean,
                     std::vector<float>& var_unbiased);
void batchnorm_eval(const Tensor& x, const NodeParams& p, Tensor& y);
void batchnorm_backward(const Tensor& dy, const Tensor& x_hat, const std::vector<float>& inv_std,
                        const std::vector<float>& gamma, std::vector<float>& dgamma,
                        std::vector<float>& dbeta, Tensor& dx);

void relu_forward(const Tensor& x, Tensor& y);
void relu_backward(const Tensor& y, const Tensor& dy, Tensor& dx);

void gap_forward(const Tensor& x, Tensor& y);
void gap_backward(const Tensor& dy, Tensor& dx);

void dense_forward(const Tensor& x, const std::vector<float>& weight, const std::vector<float>& bias,
                   int out, Tensor& y);
void dense_backward(const Tensor& x, const std::vector<float>& weight, const Tensor& dy,
                    std::vector<float>& dweight, std::vector<float>& dbias, Tensor* dx);

void softmax_forward(const Tensor& x, Tensor& y);

constexpr float kBatchNormEps = 1e-5f;
constexpr float kBatchNormMomentum = 0.1f;

}  // namespace layerscope::engine::ops
