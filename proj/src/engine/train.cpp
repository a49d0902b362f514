#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <string>

#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/rng.hpp"

namespace layerscope::engine {
namespace {

int argmax_row(const float* row, int classes) {
  return static_cast<int>(std::max_element(row, row + classes) - row);
}

// Copies samples `ids` into a batch tensor, applying flip/crop augmentation.
Tensor gather(const Dataset& data, std::span<const std::size_t> ids, const TrainConfig& cfg, Rng* rng) {
  const Tensor& src = data.images;
  Tensor out(static_cast<int>(ids.size()), src.c, src.h, src.w);
  const std::size_t plane = static_cast<std::size_t>(src.h) * src.w;
  for (std::size_t b = 0; b < ids.size(); ++b) {
    const float* in = src.data.data() + ids[b] * src.sample_size();
    float* dst = out.data.data() + b * out.sample_size();
    if (!rng || (!cfg.hflip && cfg.crop_pad == 0)) {
      std::copy(in, in + src.sample_size(), dst);
      continue;
    }
    const bool flip = cfg.hflip && rng->uniform() < 0.5;
    const int pad = cfg.crop_pad;
    const int dy = pad > 0 ? static_cast<int>(rng->below(2 * pad + 1)) - pad : 0;
    const int dx = pad > 0 ? static_cast<int>(rng->below(2 * pad + 1)) - pad : 0;
    // reflect padding then crop back to the original size
    const auto reflect = [](int i, int n) {
      if (n == 1) return 0;
      while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
      return i;
    };
    for (int c = 0; c < src.c; ++c) {
      for (int y = 0; y < src.h; ++y) {
        for (int x = 0; x < src.w; ++x) {
          const int sy = reflect(y + dy, src.h);
          int sx = reflect(x + dx, src.w);
          if (flip) sx = src.w - 1 - sx;
          dst[c * plane + y * src.w + x] = in[c * plane + sy * src.w + sx];
        }
      }
    }
  }
  return out;
}

void sgd_step(NodeParams& p, NodeParams& velocity, const NodeGrads& g, double lr, double momentum) {
  const auto update = [&](std::vector<float>& w, std::vector<float>& v, const std::vector<float>& d) {
    if (d.empty()) return;
    if (momentum == 0.0) {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<float>(lr) * d[i];
      return;
    }
    if (v.empty()) v.assign(w.size(), 0.0f);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = static_cast<float>(momentum) * v[i] + d[i];
      w[i] -= static_cast<float>(lr) * v[i];
    }
  };
  update(p.weight, velocity.weight, g.weight);
  update(p.bias, velocity.bias, g.bias);
  update(p.gamma, velocity.gamma, g.gamma);
  update(p.beta, velocity.beta, g.beta);
}

void check_dataset(const Dataset& d, const char* what) {
  if (d.labels.empty() || d.images.n != static_cast<int>(d.labels.size())) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " set is empty or mislabelled");
  }
}

}  // namespace

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch", cfg.batch},
          {"lr", cfg.lr},
          {"schedule", "divide by 10 after ceil(epochs/3) and ceil(2*epochs/3) epochs"},
          {"momentum", cfg.momentum},
          {"augment", {{"hflip", cfg.hflip}, {"crop_pad", cfg.crop_pad}}},
          {"seed", cfg.seed}};
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const int classes = static_cast<int>(logits.sample_size());
  if (static_cast<std::size_t>(logits.n) != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "label count does not match the batch");
  }
  if (dlogits) *dlogits = Tensor(logits.n, logits.c, logits.h, logits.w);
  double total = 0.0;
  for (int s = 0; s < logits.n; ++s) {
    const float* row = logits.data.data() + static_cast<std::size_t>(s) * classes;
    const float top = *std::max_element(row, row + classes);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += std::exp(static_cast<double>(row[c] - top));
    const int label = labels[static_cast<std::size_t>(s)];
    if (label < 0 || label >= classes) throw Error(ErrorCode::InvalidArgument, "label out of range");
    total += std::log(z) - static_cast<double>(row[label] - top);
    if (dlogits) {
      float* d = dlogits->data.data() + static_cast<std::size_t>(s) * classes;
      for (int c = 0; c < classes; ++c) {
        const double prob = std::exp(static_cast<double>(row[c] - top)) / z;
        d[c] = static_cast<float>((prob - (c == label ? 1.0 : 0.0)) / logits.n);
      }
    }
  }
  return total / logits.n;
}

double lr_at(const TrainConfig& cfg, int epoch) {
  const int first = (cfg.epochs + 2) / 3;
  const int second = (2 * cfg.epochs + 2) / 3;
  double lr = cfg.lr;
  if (epoch >= first) lr *= 0.1;
  if (epoch >= second) lr *= 0.1;
  return lr;
}

double evaluate(const Model& model, const Dataset& data, int batch) {
  check_dataset(data, "evaluation");
  batch = std::max(1, batch);
  const int classes = data.num_classes;
  std::size_t correct = 0;
  std::vector<std::size_t> ids;
  for (int first = 0; first < data.images.n; first += batch) {
    const int count = std::min(batch, data.images.n - first);
    ids.resize(static_cast<std::size_t>(count));
    std::iota(ids.begin(), ids.end(), static_cast<std::size_t>(first));
    const ForwardResult r = model.forward(gather(data, ids, {}, nullptr));
    const int width = static_cast<int>(r.logits.sample_size());
    for (int s = 0; s < count; ++s) {
      const int pred = argmax_row(r.logits.data.data() + static_cast<std::size_t>(s) * width,
                                  classes > 0 ? std::min(classes, width) : width);
      if (pred == data.labels[static_cast<std::size_t>(first + s)]) ++correct;
    }
  }
  return static_cast<double>(correct) / data.images.n;
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset& test_set, const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch < 1 || cfg.lr < 0.0 || !std::isfinite(cfg.lr)) {
    throw Error(ErrorCode::InvalidArgument, "training needs epochs >= 1, batch >= 1 and a finite lr >= 0");
  }
  check_dataset(train_set, "training");
  check_dataset(test_set, "test");
  const int classes = std::max(train_set.num_classes,
                               *std::max_element(train_set.labels.begin(), train_set.labels.end()) + 1);
  if (classes < 2) throw Error(ErrorCode::InvalidArgument, "training needs at least 2 classes");

  // lr 0 leaves the model exactly as initialized, BN running statistics included
  const std::vector<NodeParams> initial = cfg.lr == 0.0 ? model.params() : std::vector<NodeParams>{};

  TrainResult result;
  std::vector<NodeParams> velocity(model.params().size());
  const auto n = static_cast<std::size_t>(train_set.images.n);
  std::vector<std::size_t> order(n);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, 0x7000 + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    const double lr = lr_at(cfg, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t first = 0; first < n; first += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), n - first);
      const std::span<const std::size_t> ids(order.data() + first, count);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = train_set.labels[ids[i]];
      Tape tape;
      ForwardResult fr;
      try {
        fr = model.forward(gather(train_set, ids, cfg, &rng), Mode::Train, {}, &tape);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFinite) throw;
        throw Error(ErrorCode::Divergence, "training diverged in epoch " + std::to_string(epoch + 1) +
                                               " (non-finite activations); try a smaller --lr");
      }
      Tensor dlogits;
      const double loss = softmax_cross_entropy(fr.logits, labels, &dlogits);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::Divergence, "training diverged in epoch " + std::to_string(epoch + 1) +
                                               " (loss is not finite); try a smaller --lr");
      }
      loss_sum += loss * static_cast<double>(count);
      const int width = static_cast<int>(fr.logits.sample_size());
      for (std::size_t i = 0; i < count; ++i) {
        if (argmax_row(fr.logits.data.data() + i * width, width) == labels[i]) ++correct;
      }
      if (lr == 0.0) continue;
      const std::vector<NodeGrads> grads = model.backward(tape, dlogits);
      for (std::size_t id = 0; id < grads.size(); ++id) {
        sgd_step(model.params()[id], velocity[id], grads[id], lr, cfg.momentum);
      }
      if (!model.all_finite()) {
        throw Error(ErrorCode::Divergence, "training diverged in epoch " + std::to_string(epoch + 1) +
                                               " (non-finite parameters); try a smaller --lr");
      }
    }
    if (!initial.empty()) model.params() = initial;
    EpochStats stats;
    stats.epoch = epoch + 1;
    stats.lr = lr;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (cfg.eval_each_epoch || epoch + 1 == cfg.epochs) stats.test_accuracy = evaluate(model, test_set);
    result.history.push_back(stats);
  }
  result.test_accuracy = *result.history.back().test_accuracy;
  return result;
}

int configured_threads() {
  if (const char* env = std::getenv("LAYERSCOPE_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(std::min(v, 256L));
  }
  return 1;
}

}  // namespace layerscope::engine
