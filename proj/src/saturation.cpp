#include "layerscope/saturation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "layerscope/error.hpp"
#include "layerscope/kernels.hpp"

namespace layerscope {

CovAccumulator::CovAccumulator(std::size_t d) : d_(d), sum_(d, 0.0), upper_(d * d, 0.0) {
  if (d == 0) throw Error(ErrorCode::InvalidArgument, "accumulator dimension must be >= 1");
}

void CovAccumulator::accumulate_rows(std::span<const double> rows, std::size_t count) {
  if (rows.size() != count * d_) {
    throw Error(ErrorCode::DimensionMismatch,
                "row block does not hold " + std::to_string(count) + " samples of dimension " +
                    std::to_string(d_));
  }
  for (std::size_t r = 0; r < count; ++r) {
    const double* x = rows.data() + r * d_;
    for (std::size_t i = 0; i < d_; ++i) sum_[i] += x[i];
  }
  kernels::syrk_upper_f64(count, d_, rows.data(), d_, upper_.data(), d_);
  n_ += count;
}

void CovAccumulator::accumulate(std::span<const float> block, std::span<const std::uint64_t> shape) {
  if (shape.size() != 2 && shape.size() != 4) {
    throw Error(ErrorCode::DimensionMismatch, "activation block must be N x C or N x C x H x W");
  }
  const std::size_t samples = static_cast<std::size_t>(shape[0]);
  const std::size_t channels = static_cast<std::size_t>(shape[1]);
  const std::size_t positions =
      shape.size() == 4 ? static_cast<std::size_t>(shape[2] * shape[3]) : std::size_t{1};
  if (channels != d_) {
    throw Error(ErrorCode::DimensionMismatch, "block has " + std::to_string(channels) +
                                                  " channels, accumulator expects " +
                                                  std::to_string(d_));
  }
  if (block.size() != samples * channels * positions) {
    throw Error(ErrorCode::DimensionMismatch, "block size does not match its shape");
  }
  // Transpose each sample to positions x channels so every row is one sample.
  std::vector<double> rows(positions * channels);
  for (std::size_t n = 0; n < samples; ++n) {
    const float* src = block.data() + n * channels * positions;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < positions; ++p) {
        rows[p * channels + c] = static_cast<double>(src[c * positions + p]);
      }
    }
    accumulate_rows(rows, positions);
  }
}

void CovAccumulator::merge(const CovAccumulator& other) {
  if (other.n_ == 0 && other.d_ == 0) return;
  if (d_ == 0 && n_ == 0) {
    *this = other;
    return;
  }
  if (other.d_ != d_) {
    throw Error(ErrorCode::DimensionMismatch, "cannot merge accumulators of dimension " +
                                                  std::to_string(d_) + " and " +
                                                  std::to_string(other.d_));
  }
  n_ += other.n_;
  for (std::size_t i = 0; i < d_; ++i) sum_[i] += other.sum_[i];
  for (std::size_t i = 0; i < upper_.size(); ++i) upper_[i] += other.upper_[i];
}

CovAccumulator merge(const CovAccumulator& a, const CovAccumulator& b) {
  CovAccumulator out = a;
  out.merge(b);
  return out;
}

std::vector<double> CovAccumulator::moment2() const {
  std::vector<double> m(d_ * d_);
  for (std::size_t i = 0; i < d_; ++i) {
    for (std::size_t j = i; j < d_; ++j) {
      m[i * d_ + j] = upper_[i * d_ + j];
      m[j * d_ + i] = upper_[i * d_ + j];
    }
  }
  return m;
}

std::vector<double> CovAccumulator::mean() const {
  std::vector<double> mu(d_, 0.0);
  if (n_ == 0) return mu;
  for (std::size_t i = 0; i < d_; ++i) mu[i] = sum_[i] / static_cast<double>(n_);
  return mu;
}

std::vector<double> CovAccumulator::covariance() const {
  if (n_ == 0) throw Error(ErrorCode::NotEnoughSamples, "covariance of an empty accumulator");
  const double n = static_cast<double>(n_);
  const auto mu = mean();
  std::vector<double> cov(d_ * d_);
  for (std::size_t i = 0; i < d_; ++i) {
    for (std::size_t j = i; j < d_; ++j) {
      const double v = upper_[i * d_ + j] / n - mu[i] * mu[j];
      cov[i * d_ + j] = v;
      cov[j * d_ + i] = v;
    }
  }
  return cov;
}

std::size_t retained_directions(std::span<const double> eigvals_desc, double delta) {
  double trace = 0.0;
  for (double v : eigvals_desc) trace += v;
  if (!(trace > 0.0)) return 1;
  const double target = delta * trace;
  double cumulative = 0.0;
  for (std::size_t k = 0; k < eigvals_desc.size(); ++k) {
    cumulative += eigvals_desc[k];
    if (cumulative >= target) return k + 1;
  }
  return eigvals_desc.size();
}

SaturationResult saturation_of(const CovAccumulator& acc, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "delta must lie in (0, 1]");
  }
  if (acc.count() < 2) {
    throw Error(ErrorCode::NotEnoughSamples, "saturation needs at least 2 samples, got " +
                                                 std::to_string(acc.count()));
  }
  const std::size_t d = acc.dim();
  const auto cov = acc.covariance();
  for (double v : cov) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "accumulator holds non-finite values");
  }
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
      cov.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success) {
    throw Error(ErrorCode::NonFinite, "eigendecomposition did not converge");
  }

  SaturationResult out;
  out.d = d;
  out.delta = delta;
  out.eigvals.resize(d);
  const auto& ev = solver.eigenvalues();  // ascending
  for (std::size_t i = 0; i < d; ++i) {
    out.eigvals[i] = std::max(0.0, ev(static_cast<Eigen::Index>(d - 1 - i)));
  }
  out.k = retained_directions(out.eigvals, delta);
  out.value = static_cast<double>(out.k) / static_cast<double>(d);
  return out;
}

nlohmann::json saturation_to_json(const SaturationResult& s) {
  return {{"k", s.k}, {"d", s.d}, {"value", s.value}, {"delta", s.delta}, {"eigvals", s.eigvals}};
}

}  // namespace layerscope
