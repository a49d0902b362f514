#pragma once

// Linear probes: multinomial logistic regression trained on frozen layer
// outputs to measure how linearly solvable the task is at that depth.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerscope/tensor_store.hpp"

namespace layerscope {

enum class FeatureMode { Pooled4x4, PerPosition, Vector };

std::string_view feature_mode_name(FeatureMode mode);

struct ProbeFeatures {
  std::string layer_name;
  FeatureMode mode = FeatureMode::Vector;
  int pos_h = -1;  // PerPosition only
  int pos_w = -1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;  // rows x cols, row-major
  std::vector<int> y;
};

/// [begin, end) cell ranges for adaptive average pooling of `extent` cells
/// into `bands` contiguous groups whose sizes differ by at most one, larger
/// groups first. When extent < bands, band i is the single cell
/// floor(i * extent / bands).
std::vector<std::pair<int, int>> adaptive_bands(int extent, int bands);

/// Adaptive average pooling of one C x H x W map to C x out x out, flattened.
std::vector<double> adaptive_avg_pool(std::span<const float> map, int channels, int height,
                                      int width, int out);

/// Features for one layer. `labels` holds one class id per sample.
ProbeFeatures extract_features(const TensorDump& dump, std::span<const int> labels, FeatureMode mode,
                               int pos_h = -1, int pos_w = -1);

struct ProbeConfig {
  int epochs = 30;
  double lr = 0.1;
  int batch = 64;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  int num_classes = 0;  // 0 infers max label + 1
};

struct Probe {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<double> weights;  // classes x features, applied to standardized inputs
  std::vector<double> bias;
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  ProbeConfig config;
  double accuracy = 0.0;  // held-out rows
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;

  int predict(std::span<const double> row) const;
};

Probe train_probe(const ProbeFeatures& f, const ProbeConfig& cfg = {});

double relative_performance(const Probe& p, double model_accuracy);
double relative_performance(double probe_accuracy, double model_accuracy);

/// One probe per (h, w) of a conv dump; returns H x W held-out accuracies, row-major.
struct Heatmap {
  std::string layer_name;
  int height = 0;
  int width = 0;
  std::vector<double> accuracy;
};
Heatmap position_heatmap(const TensorDump& dump, std::span<const int> labels,
                         const ProbeConfig& cfg);

nlohmann::json probe_to_json(const Probe& p, FeatureMode mode, double model_accuracy);

}  // namespace layerscope
