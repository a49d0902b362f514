#pragma once

// Streaming covariance accumulation and the saturation metric: the share of
// a layer's channel dimensions needed to explain a fraction delta of the
// activation variance. Conv activations contribute one sample per spatial
// position, with channels as the feature dimensions.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

namespace layerscope {

class CovAccumulator {
 public:
  CovAccumulator() = default;
  explicit CovAccumulator(std::size_t d);

  std::size_t dim() const { return d_; }
  std::uint64_t count() const { return n_; }
  const std::vector<double>& sum() const { return sum_; }
  /// Cross-product sums, d x d row-major, symmetric.
  std::vector<double> moment2() const;

  /// Add a block laid out as N x C x H x W (shape of size 4) or N x C (size 2).
  /// Every (n, h, w) position is one C-dimensional sample.
  void accumulate(std::span<const float> block, std::span<const std::uint64_t> shape);

  /// Add samples given row-major as rows x d.
  void accumulate_rows(std::span<const double> rows, std::size_t count);

  void merge(const CovAccumulator& other);

  /// Biased (1/n) covariance, d x d row-major.
  std::vector<double> covariance() const;
  std::vector<double> mean() const;

 private:
  std::size_t d_ = 0;
  std::uint64_t n_ = 0;
  std::vector<double> sum_;
  std::vector<double> upper_;  // upper triangle of the cross-product sums, stored as d x d
};

CovAccumulator merge(const CovAccumulator& a, const CovAccumulator& b);

struct SaturationResult {
  std::size_t k = 0;
  std::size_t d = 0;
  double value = 0.0;
  std::vector<double> eigvals;  // descending, clamped at 0
  double delta = 0.99;
};

/// Smallest k whose leading eigenvalues reach delta * trace; value = k / d.
/// Ties at the threshold keep the smaller k. A zero-trace covariance gives k = 1.
SaturationResult saturation_of(const CovAccumulator& acc, double delta = 0.99);

/// Same selection rule applied to an already computed spectrum (descending, >= 0).
std::size_t retained_directions(std::span<const double> eigvals_desc, double delta);

nlohmann::json saturation_to_json(const SaturationResult& s);

}  // namespace layerscope
