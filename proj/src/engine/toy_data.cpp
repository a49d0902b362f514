#include <algorithm>
#include <cmath>
#include <numeric>

#include "layerscope/engine.hpp"
#include "layerscope/error.hpp"
#include "layerscope/rng.hpp"

namespace layerscope::engine {
namespace {

// Shape membership on the object box, u and v in [-1, 1].
bool inside(std::string_view shape, double u, double v) {
  const double r2 = u * u + v * v;
  if (shape == "disk") return r2 <= 1.0;
  if (shape == "square") return std::abs(u) <= 0.9 && std::abs(v) <= 0.9;
  if (shape == "cross") return std::abs(u) <= 0.3 || std::abs(v) <= 0.3;
  if (shape == "ring") return r2 <= 1.0 && r2 >= 0.36;
  if (shape == "triangle") return v >= -0.9 && v <= 0.9 && std::abs(u) <= (0.9 - v) / 2.0;
  throw Error(ErrorCode::InvalidArgument, "unknown toy shape '" + std::string(shape) + "'");
}

void validate(const ToySpec& s) {
  if (s.classes.size() < 2) throw Error(ErrorCode::InvalidArgument, "toy data needs at least 2 classes");
  for (const auto& c : s.classes) inside(c, 0.0, 0.0);
  if (s.object_size < 1 || s.object_size > s.canvas_size) {
    throw Error(ErrorCode::InvalidArgument, "toy object_size must be in [1, canvas_size]");
  }
  if (s.upsample_to < 0 || s.n_train < 1 || s.n_test < 1 || s.channels < 1 || s.noise < 0.0) {
    throw Error(ErrorCode::InvalidArgument, "invalid toy spec");
  }
}

}  // namespace

std::vector<std::string> toy_shape_names() { return {"disk", "square", "cross", "ring", "triangle"}; }

std::vector<std::string> toy_preset_names() { return {"default", "tiny", "centered16", "canvas64"}; }

ToySpec toy_preset(std::string_view name) {
  ToySpec s;
  if (name == "default") return s;
  if (name == "tiny") {
    s.object_size = 6;
    s.canvas_size = 8;
    s.n_train = 200;
    s.n_test = 100;
    return s;
  }
  if (name == "centered16") {
    s.object_size = 16;
    s.canvas_size = 16;
    s.placement = Placement::Center;
    return s;
  }
  if (name == "canvas64") {
    s.object_size = 16;
    s.canvas_size = 64;
    return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown toy preset '" + std::string(name) + "'");
}

nlohmann::json toy_to_json(const ToySpec& s) {
  return {{"classes", s.classes},
          {"object_size", s.object_size},
          {"canvas_size", s.canvas_size},
          {"placement", s.placement == Placement::Center ? "center" : "random"},
          {"upsample_to", s.upsample_to > 0 ? nlohmann::json(s.upsample_to) : nlohmann::json(nullptr)},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"noise", s.noise},
          {"channels", s.channels},
          {"seed", s.seed}};
}

ToySpec toy_from_json(const nlohmann::json& j) {
  ToySpec s;
  try {
    if (j.contains("preset")) s = toy_preset(j.at("preset").get<std::string>());
    if (j.contains("classes")) s.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("object_size")) s.object_size = j.at("object_size").get<int>();
    if (j.contains("canvas_size")) s.canvas_size = j.at("canvas_size").get<int>();
    if (j.contains("placement")) {
      const auto p = j.at("placement").get<std::string>();
      if (p != "center" && p != "random") throw Error(ErrorCode::InvalidArgument, "placement must be center or random");
      s.placement = p == "center" ? Placement::Center : Placement::Random;
    }
    if (j.contains("upsample_to") && !j.at("upsample_to").is_null()) s.upsample_to = j.at("upsample_to").get<int>();
    if (j.contains("n_train")) s.n_train = j.at("n_train").get<int>();
    if (j.contains("n_test")) s.n_test = j.at("n_test").get<int>();
    if (j.contains("noise")) s.noise = j.at("noise").get<double>();
    if (j.contains("channels")) s.channels = j.at("channels").get<int>();
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("toy spec: ") + e.what());
  }
  validate(s);
  return s;
}

Dataset generate_toy(const ToySpec& spec, Split split) {
  validate(spec);
  const int count = split == Split::Train ? spec.n_train : spec.n_test;
  const int canvas = spec.canvas_size;
  const int size = spec.image_size();
  const int obj = spec.object_size;
  const auto classes = static_cast<int>(spec.classes.size());
  Rng rng(derive_seed(spec.seed, split == Split::Train ? 0x701 : 0x702));

  std::vector<int> labels(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  rng.shuffle(std::span<int>(labels));

  // rasterize each class once on the object box
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& shape : spec.classes) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(obj) * obj);
    for (int y = 0; y < obj; ++y) {
      for (int x = 0; x < obj; ++x) {
        const double u = (x + 0.5) / obj * 2.0 - 1.0;
        const double v = (y + 0.5) / obj * 2.0 - 1.0;
        m[static_cast<std::size_t>(y) * obj + x] = inside(shape, u, v) ? 1 : 0;
      }
    }
    masks.push_back(std::move(m));
  }

  Dataset d;
  d.num_classes = classes;
  d.labels = labels;
  d.images = Tensor(count, spec.channels, size, size);
  std::vector<float> base(static_cast<std::size_t>(canvas) * canvas);
  for (int i = 0; i < count; ++i) {
    std::fill(base.begin(), base.end(), 0.0f);
    const auto& mask = masks[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    int top = (canvas - obj) / 2;
    int left = top;
    if (spec.placement == Placement::Random) {
      top = static_cast<int>(rng.below(static_cast<std::uint64_t>(canvas - obj + 1)));
      left = static_cast<int>(rng.below(static_cast<std::uint64_t>(canvas - obj + 1)));
    }
    const double brightness = rng.uniform(0.7, 1.0);
    for (int y = 0; y < obj; ++y) {
      for (int x = 0; x < obj; ++x) {
        if (mask[static_cast<std::size_t>(y) * obj + x]) {
          base[static_cast<std::size_t>(top + y) * canvas + left + x] = static_cast<float>(brightness);
        }
      }
    }
    if (spec.noise > 0.0) {
      for (float& v : base) v += static_cast<float>(spec.noise * rng.normal());
    }
    for (int c = 0; c < spec.channels; ++c) {
      for (int y = 0; y < size; ++y) {
        const int sy = y * canvas / size;
        for (int x = 0; x < size; ++x) {
          d.images.at(i, c, y, x) = base[static_cast<std::size_t>(sy) * canvas + x * canvas / size];
        }
      }
    }
  }
  return d;
}

Dataset dataset_from_idx(const IdxImages& images, const std::vector<std::uint8_t>& labels, int channels,
                         int size) {
  if (images.count != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "IDX image and label counts differ");
  }
  if (channels < 1) throw Error(ErrorCode::InvalidArgument, "channels must be >= 1");
  const int rows = static_cast<int>(images.rows);
  const int cols = static_cast<int>(images.cols);
  const int h = size > 0 ? size : rows;
  const int w = size > 0 ? size : cols;
  Dataset d;
  d.images = Tensor(static_cast<int>(images.count), channels, h, w);
  d.labels.assign(labels.begin(), labels.end());
  d.num_classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  for (int i = 0; i < static_cast<int>(images.count); ++i) {
    const std::uint8_t* px = images.pixels.data() + static_cast<std::size_t>(i) * rows * cols;
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          d.images.at(i, c, y, x) = px[(y * rows / h) * cols + x * cols / w] / 255.0f;
        }
      }
    }
  }
  return d;
}

}  // namespace layerscope::engine
