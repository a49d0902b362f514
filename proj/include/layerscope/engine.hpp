#pragma once

// Minimal deterministic CNN engine: forward/backward over an ArchGraph,
// seeded SGD training, activation capture into ACTD dumps, procedural toy
// datasets, and the gradient-support receptive-field oracle.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerscope/arch_graph.hpp"
#include "layerscope/tensor_store.hpp"

namespace layerscope::engine {

/// Dense N x C x H x W float tensor. Vectors use H = W = 1.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  float& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  float at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// Trainable state of one node. Unused members stay empty.
struct NodeParams {
  std::vector<float> weight;  // conv: out x in x k x k, dense: out x in
  std::vector<float> bias;
  std::vector<float> gamma;  // batch norm
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
};

struct NodeGrads {
  std::vector<float> weight, bias, gamma, beta;
};

enum class Mode { Train, Eval };

struct TrainConfig {
  int epochs = 30;
  int batch = 64;
  double lr = 0.1;
  double momentum = 0.0;
  bool hflip = false;
  int crop_pad = 0;
  std::uint64_t seed = 0;
  bool eval_each_epoch = true;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);

struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;
};

/// Where a conv block's output is read: the first ReLU reached through
/// BN/Add nodes, or the conv itself when no ReLU follows.
struct CapturePoint {
  std::string conv;  // conv node name, also the dump name
  int node = 0;      // node whose output is captured
};

/// One capture point per conv block in topological order. When several convs
/// share a point (projection shortcuts), the conv with the larger receptive
/// field keeps it.
std::vector<CapturePoint> capture_points(const ArchGraph& graph);

/// Per-node saved state needed by backward.
struct Tape {
  std::vector<Tensor> outputs;
  std::vector<Tensor> normalized;           // batch norm x-hat
  std::vector<std::vector<float>> inv_std;  // batch norm
  std::vector<std::vector<std::uint32_t>> argmax;  // max pool
};

struct ForwardResult {
  Tensor logits;  // N x classes x 1 x 1 (pre-softmax)
  Tensor probs;   // softmax output
  std::map<std::string, Tensor> captured;  // by node name
};

class Model {
 public:
  /// Seeded fan-in-scaled uniform init; BN gamma 1, beta 0.
  static Model init(ArchGraph graph, std::uint64_t seed);

  const ArchGraph& graph() const { return graph_; }
  std::vector<NodeParams>& params() { return params_; }
  const std::vector<NodeParams>& params() const { return params_; }
  std::uint64_t seed() const { return seed_; }

  /// Train mode uses batch statistics and updates BN running statistics.
  ForwardResult forward(const Tensor& input, Mode mode, const std::set<std::string>& capture = {},
                        Tape* tape = nullptr);
  ForwardResult forward(const Tensor& input, const std::set<std::string>& capture = {}) const;

  /// Parameter gradients for d(loss)/d(logits) = dlogits, using a Train-mode tape.
  std::vector<NodeGrads> backward(const Tape& tape, const Tensor& dlogits) const;

  /// Index of the node whose output is treated as logits.
  int logits_node() const { return logits_node_; }

  bool all_finite() const;

  void save(const std::filesystem::path& dir) const;
  static Model load(const std::filesystem::path& dir);

 private:
  ForwardResult run(const Tensor& input, Mode mode, const std::set<std::string>& capture,
                    Tape* tape, bool update_stats);

  ArchGraph graph_;
  std::vector<NodeParams> params_;
  std::uint64_t seed_ = 0;
  int logits_node_ = 0;
};

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. logits.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits);

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
};

struct TrainResult {
  std::vector<EpochStats> history;
  double test_accuracy = 0.0;
};

double lr_at(const TrainConfig& cfg, int epoch);

/// Cross-entropy SGD with step decay; throws Error(Divergence) on a non-finite loss.
TrainResult train(Model& model, const Dataset& train_set, const Dataset& test_set,
                  const TrainConfig& cfg);

double evaluate(const Model& model, const Dataset& data, int batch = 128);

/// Model input size implied by a dataset.
inline int input_size_of(const Dataset& d) { return d.images.h; }

// ---------------------------------------------------------------------------
// Toy data

enum class Placement { Center, Random };

struct ToySpec {
  std::vector<std::string> classes = {"disk", "square"};
  int object_size = 12;
  int canvas_size = 16;
  Placement placement = Placement::Random;
  int upsample_to = 0;  // 0 keeps canvas_size
  int n_train = 1000;
  int n_test = 500;
  double noise = 0.05;
  int channels = 1;
  std::uint64_t seed = 0;

  int image_size() const { return upsample_to > 0 ? upsample_to : canvas_size; }
};

std::vector<std::string> toy_shape_names();
std::vector<std::string> toy_preset_names();
ToySpec toy_preset(std::string_view name);
nlohmann::json toy_to_json(const ToySpec& spec);
ToySpec toy_from_json(const nlohmann::json& j);

/// Deterministic under spec.seed; train and test use independent streams.
Dataset generate_toy(const ToySpec& spec, Split split);

/// Images scaled to [0, 1], optionally nearest-resized to `size`.
Dataset dataset_from_idx(const IdxImages& images, const std::vector<std::uint8_t>& labels,
                         int channels, int size = 0);

// ---------------------------------------------------------------------------
// Capture

struct CaptureInfo {
  std::string architecture;
  std::uint64_t seed = 0;
  int threads = 1;
  Split split = Split::Test;
  // held-out accuracy to record when `data` is the training split
  std::optional<double> model_accuracy;
  nlohmann::json extra = nlohmann::json::object();
};

/// Write eval-mode activations of every capture point plus the GAP vector and
/// labels over `data`, then manifest.json. Refuses an existing manifest.
RunManifest capture_run(const Model& model, const Dataset& data, const std::filesystem::path& out_dir,
                        const CaptureInfo& info, int batch = 100);

// ---------------------------------------------------------------------------
// Receptive-field oracle

struct SupportWidth {
  int node = 0;
  long long width = 0;
  bool clipped = false;
};

/// Linearized backward pass (ReLU and BN as identity, max pooling as average
/// pooling, conv weights a positive constant) from the centre output position
/// of each spatial node; reports the bounding-box width of the nonzero input
/// gradient. Nodes after the global pooling are skipped.
std::vector<SupportWidth> empirical_rf(const ArchGraph& graph, int input_size,
                                       std::optional<std::vector<int>> nodes = std::nullopt);

// Parallelism cap taken from LAYERSCOPE_THREADS (default 1).
int configured_threads();

}  // namespace layerscope::engine
