#include "layerscope/probes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "layerscope/error.hpp"
#include "layerscope/kernels.hpp"
#include "layerscope/rng.hpp"

namespace layerscope {

std::string_view feature_mode_name(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::Pooled4x4: return "pooled4x4";
    case FeatureMode::PerPosition: return "per_position";
    case FeatureMode::Vector: return "vector";
  }
  return "?";
}

std::vector<std::pair<int, int>> adaptive_bands(int extent, int bands) {
  if (extent < 1 || bands < 1) throw Error(ErrorCode::InvalidArgument, "pooling extent must be >= 1");
  std::vector<std::pair<int, int>> out;
  out.reserve(static_cast<std::size_t>(bands));
  if (extent < bands) {
    for (int i = 0; i < bands; ++i) {
      const int cell = i * extent / bands;
      out.emplace_back(cell, cell + 1);
    }
    return out;
  }
  const int base = extent / bands;
  const int larger = extent % bands;
  int begin = 0;
  for (int i = 0; i < bands; ++i) {
    const int size = base + (i < larger ? 1 : 0);
    out.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

std::vector<double> adaptive_avg_pool(std::span<const float> map, int channels, int height,
                                      int width, int out) {
  const auto rows = adaptive_bands(height, out);
  const auto cols = adaptive_bands(width, out);
  std::vector<double> pooled(static_cast<std::size_t>(channels * out * out));
  for (int c = 0; c < channels; ++c) {
    const float* plane = map.data() + static_cast<std::size_t>(c) * height * width;
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < out; ++j) {
        double acc = 0.0;
        for (int h = rows[i].first; h < rows[i].second; ++h) {
          for (int w = cols[j].first; w < cols[j].second; ++w) acc += plane[h * width + w];
        }
        const int cells = (rows[i].second - rows[i].first) * (cols[j].second - cols[j].first);
        pooled[static_cast<std::size_t>((c * out + i) * out + j)] = acc / cells;
      }
    }
  }
  return pooled;
}

ProbeFeatures extract_features(const TensorDump& dump, std::span<const int> labels, FeatureMode mode,
                               int pos_h, int pos_w) {
  ProbeFeatures f;
  f.layer_name = dump.layer_name;
  f.mode = mode;
  const std::size_t n = static_cast<std::size_t>(dump.samples());
  if (labels.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "layer '" + dump.layer_name + "' has " +
                                                  std::to_string(n) + " samples but " +
                                                  std::to_string(labels.size()) + " labels");
  }
  f.rows = n;
  f.y.assign(labels.begin(), labels.end());

  if (mode == FeatureMode::Vector) {
    if (dump.shape.size() != 2) {
      throw Error(ErrorCode::DimensionMismatch, "vector features need an N x C dump");
    }
    f.cols = static_cast<std::size_t>(dump.shape[1]);
    f.x.assign(dump.payload.begin(), dump.payload.end());
    return f;
  }

  if (dump.shape.size() != 4) {
    throw Error(ErrorCode::DimensionMismatch, "spatial features need an N x C x H x W dump");
  }
  const int c = static_cast<int>(dump.shape[1]);
  const int h = static_cast<int>(dump.shape[2]);
  const int w = static_cast<int>(dump.shape[3]);
  if (h < 1 || w < 1) throw Error(ErrorCode::InvalidArgument, "feature map is empty");
  const std::size_t per_sample = static_cast<std::size_t>(c) * h * w;

  if (mode == FeatureMode::Pooled4x4) {
    f.cols = static_cast<std::size_t>(16 * c);
    f.x.reserve(n * f.cols);
    for (std::size_t s = 0; s < n; ++s) {
      const auto pooled = adaptive_avg_pool(
          std::span<const float>(dump.payload.data() + s * per_sample, per_sample), c, h, w, 4);
      f.x.insert(f.x.end(), pooled.begin(), pooled.end());
    }
    return f;
  }

  if (pos_h < 0 || pos_h >= h || pos_w < 0 || pos_w >= w) {
    throw Error(ErrorCode::InvalidArgument, "position (" + std::to_string(pos_h) + ", " +
                                                std::to_string(pos_w) + ") outside a " +
                                                std::to_string(h) + "x" + std::to_string(w) + " map");
  }
  f.pos_h = pos_h;
  f.pos_w = pos_w;
  f.cols = static_cast<std::size_t>(c);
  f.x.resize(n * f.cols);
  for (std::size_t s = 0; s < n; ++s) {
    for (int ch = 0; ch < c; ++ch) {
      f.x[s * f.cols + static_cast<std::size_t>(ch)] =
          dump.payload[s * per_sample + (static_cast<std::size_t>(ch) * h + pos_h) * w + pos_w];
    }
  }
  return f;
}

int Probe::predict(std::span<const double> row) const {
  std::vector<double> z(features);
  for (std::size_t j = 0; j < features; ++j) z[j] = (row[j] - feature_mean[j]) * feature_scale[j];
  int best = 0;
  double best_logit = -INFINITY;
  for (std::size_t c = 0; c < classes; ++c) {
    const double logit = bias[c] + kernels::dot_f64(weights.data() + c * features, z.data(), features);
    if (logit > best_logit) {
      best_logit = logit;
      best = static_cast<int>(c);
    }
  }
  return best;
}

namespace {

double schedule(double lr, int epoch, int epochs) {
  // divide by 10 after one and two thirds of the passes
  const int first = (epochs + 2) / 3;
  const int second = (2 * epochs + 2) / 3;
  if (epoch >= second) return lr * 0.01;
  if (epoch >= first) return lr * 0.1;
  return lr;
}

}  // namespace

Probe train_probe(const ProbeFeatures& f, const ProbeConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "probe config needs epochs >= 1, batch >= 1, lr >= 0");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "train fraction must lie in (0, 1)");
  }
  if (f.cols == 0 || f.x.size() != f.rows * f.cols || f.y.size() != f.rows) {
    throw Error(ErrorCode::DimensionMismatch, "probe features are inconsistent");
  }
  for (double v : f.x) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::NonFinite, "layer '" + f.layer_name + "' has non-finite features");
    }
  }

  const std::size_t n = f.rows;
  const std::size_t dim = f.cols;
  if (n < 2) throw Error(ErrorCode::NotEnoughSamples, "probe needs at least 2 rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, 0x5071));
  split_rng.shuffle(std::span<std::size_t>(order));
  const std::size_t n_train =
      std::min(n - 1, std::max<std::size_t>(1, static_cast<std::size_t>(cfg.train_fraction * n)));
  std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  int max_label = -1;
  for (int label : f.y) {
    if (label < 0) throw Error(ErrorCode::InvalidArgument, "negative class label");
    max_label = std::max(max_label, label);
  }
  const std::size_t classes =
      cfg.num_classes > 0 ? static_cast<std::size_t>(cfg.num_classes) : static_cast<std::size_t>(max_label + 1);
  if (static_cast<std::size_t>(max_label) >= classes) {
    throw Error(ErrorCode::InvalidArgument, "label exceeds the configured class count");
  }
  {
    std::vector<char> present(classes, 0);
    for (std::size_t i : train) present[static_cast<std::size_t>(f.y[i])] = 1;
    if (std::count(present.begin(), present.end(), 1) < 2) {
      throw Error(ErrorCode::InvalidArgument,
                  "probe training rows of '" + f.layer_name + "' contain a single class");
    }
  }

  Probe p;
  p.classes = classes;
  p.features = dim;
  p.config = cfg;
  p.config.num_classes = static_cast<int>(classes);
  p.train_rows = train.size();
  p.test_rows = test.size();

  // standardize with train-split statistics
  p.feature_mean.assign(dim, 0.0);
  p.feature_scale.assign(dim, 1.0);
  for (std::size_t i : train) {
    for (std::size_t j = 0; j < dim; ++j) p.feature_mean[j] += f.x[i * dim + j];
  }
  for (double& m : p.feature_mean) m /= static_cast<double>(train.size());
  std::vector<double> var(dim, 0.0);
  for (std::size_t i : train) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double dv = f.x[i * dim + j] - p.feature_mean[j];
      var[j] += dv * dv;
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const double sd = std::sqrt(var[j] / static_cast<double>(train.size()));
    p.feature_scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  std::vector<double> z(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      z[i * dim + j] = (f.x[i * dim + j] - p.feature_mean[j]) * p.feature_scale[j];
    }
  }

  p.weights.assign(classes * dim, 0.0);
  p.bias.assign(classes, 0.0);
  std::vector<double> grad_w(classes * dim);
  std::vector<double> grad_b(classes);
  std::vector<double> prob(classes);

  Rng batch_rng(derive_seed(cfg.seed, 0xBA7C));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = schedule(cfg.lr, epoch, cfg.epochs);
    batch_rng.shuffle(std::span<std::size_t>(train));
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(cfg.batch));
      std::fill(grad_w.begin(), grad_w.end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t row = train[b];
        const double* zr = z.data() + row * dim;
        double top = -INFINITY;
        for (std::size_t c = 0; c < classes; ++c) {
          prob[c] = p.bias[c] + kernels::dot_f64(p.weights.data() + c * dim, zr, dim);
          top = std::max(top, prob[c]);
        }
        double total = 0.0;
        for (double& v : prob) {
          v = std::exp(v - top);
          total += v;
        }
        for (std::size_t c = 0; c < classes; ++c) {
          const double g = prob[c] / total - (static_cast<int>(c) == f.y[row] ? 1.0 : 0.0);
          grad_b[c] += g;
          kernels::axpy_f64(g, zr, grad_w.data() + c * dim, dim);
        }
      }
      const double step = lr / static_cast<double>(end - start);
      kernels::axpy_f64(-step, grad_w.data(), p.weights.data(), grad_w.size());
      kernels::axpy_f64(-step, grad_b.data(), p.bias.data(), classes);
    }
  }
  for (double v : p.weights) {
    if (!std::isfinite(v)) throw Error(ErrorCode::Divergence, "probe weights became non-finite");
  }

  std::size_t correct = 0;
  for (std::size_t i : test) {
    const double* zr = z.data() + i * dim;
    int best = 0;
    double best_logit = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      const double logit = p.bias[c] + kernels::dot_f64(p.weights.data() + c * dim, zr, dim);
      if (logit > best_logit) {
        best_logit = logit;
        best = static_cast<int>(c);
      }
    }
    if (best == f.y[i]) ++correct;
  }
  p.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  return p;
}

double relative_performance(double probe_accuracy, double model_accuracy) {
  if (!(model_accuracy > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "model accuracy must be > 0 for relative performance");
  }
  return probe_accuracy / model_accuracy;
}

double relative_performance(const Probe& p, double model_accuracy) {
  return relative_performance(p.accuracy, model_accuracy);
}

Heatmap position_heatmap(const TensorDump& dump, std::span<const int> labels,
                         const ProbeConfig& cfg) {
  if (dump.shape.size() != 4) {
    throw Error(ErrorCode::DimensionMismatch, "heatmaps need an N x C x H x W dump");
  }
  Heatmap hm;
  hm.layer_name = dump.layer_name;
  hm.height = static_cast<int>(dump.shape[2]);
  hm.width = static_cast<int>(dump.shape[3]);
  for (int h = 0; h < hm.height; ++h) {
    for (int w = 0; w < hm.width; ++w) {
      const auto f = extract_features(dump, labels, FeatureMode::PerPosition, h, w);
      hm.accuracy.push_back(train_probe(f, cfg).accuracy);
    }
  }
  return hm;
}

nlohmann::json probe_to_json(const Probe& p, FeatureMode mode, double model_accuracy) {
  nlohmann::json j;
  j["accuracy"] = p.accuracy;
  j["relative_accuracy"] =
      model_accuracy > 0.0 ? nlohmann::json(relative_performance(p, model_accuracy)) : nlohmann::json();
  j["mode"] = std::string(feature_mode_name(mode));
  j["features"] = p.features;
  j["train_rows"] = p.train_rows;
  j["test_rows"] = p.test_rows;
  j["epochs"] = p.config.epochs;
  j["seed"] = p.config.seed;
  return j;
}

}  // namespace layerscope
