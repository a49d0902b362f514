#pragma once

// Reference computations used only by tests: full-matrix PCA through an SVD
// of the centred sample matrix, Gaussian instance generators, and labelled
// point clouds for probe checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "layerscope/rng.hpp"

namespace oracles {

struct GaussianInstance {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<float> x;  // n x d, row-major
};

inline Eigen::MatrixXd random_rotation(layerscope::Rng& rng, std::size_t d) {
  Eigen::MatrixXd g(d, d);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
}

/// Samples mean + R diag(sqrt(spectrum)) z with a random rotation R and mean.
inline GaussianInstance gaussian_instance(layerscope::Rng& rng, std::size_t n, const std::vector<double>& spectrum) {
  const std::size_t d = spectrum.size();
  const Eigen::MatrixXd r = random_rotation(rng, d);
  Eigen::VectorXd mean(d);
  for (std::size_t i = 0; i < d; ++i) mean[static_cast<Eigen::Index>(i)] = rng.uniform(-2.0, 2.0);
  GaussianInstance g{n, d, std::vector<float>(n * d)};
  Eigen::VectorXd z(d);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) z[static_cast<Eigen::Index>(i)] = rng.normal() * std::sqrt(spectrum[i]);
    const Eigen::VectorXd v = mean + r * z;
    for (std::size_t i = 0; i < d; ++i) g.x[s * d + i] = static_cast<float>(v[static_cast<Eigen::Index>(i)]);
  }
  return g;
}

/// Log-uniform spectrum in [lo, hi].
inline std::vector<double> random_spectrum(layerscope::Rng& rng, std::size_t d, double lo = 1e-2, double hi = 1e2) {
  std::vector<double> s(d);
  for (double& v : s) v = std::exp(rng.uniform(std::log(lo), std::log(hi)));
  return s;
}

/// Biased covariance spectrum of the raw samples, descending, from the
/// singular values of the centred sample matrix.
inline std::vector<double> pca_spectrum(const std::vector<float>& x, std::size_t n, std::size_t d) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < d; ++i) m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) = x[s * d + i];
  }
  m.rowwise() -= m.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  std::vector<double> eig;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    const double sv = svd.singularValues()[i];
    eig.push_back(sv * sv / static_cast<double>(n));
  }
  while (eig.size() < d) eig.push_back(0.0);
  std::sort(eig.rbegin(), eig.rend());
  return eig;
}

/// Smallest k whose leading eigenvalues reach delta of the total.
inline std::size_t pca_k(const std::vector<double>& eig_desc, double delta) {
  double total = 0.0;
  for (double v : eig_desc) total += v;
  if (total <= 0.0) return 1;
  double acc = 0.0;
  for (std::size_t k = 0; k < eig_desc.size(); ++k) {
    acc += eig_desc[k];
    if (acc >= delta * total) return k + 1;
  }
  return eig_desc.size();
}

struct Labelled {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;
  std::vector<int> y;
};

/// Well separated isotropic clusters, one per class.
inline Labelled blobs(layerscope::Rng& rng, std::size_t rows, std::size_t cols, int classes, double spread = 0.5) {
  std::vector<std::vector<double>> centres(static_cast<std::size_t>(classes), std::vector<double>(cols));
  for (auto& c : centres) {
    for (double& v : c) v = rng.uniform(-5.0, 5.0);
  }
  Labelled out{rows, cols, {}, {}};
  for (std::size_t r = 0; r < rows; ++r) {
    const int label = static_cast<int>(r % static_cast<std::size_t>(classes));
    out.y.push_back(label);
    for (std::size_t c = 0; c < cols; ++c) out.x.push_back(centres[static_cast<std::size_t>(label)][c] + spread * rng.normal());
  }
  return out;
}

}  // namespace oracles
