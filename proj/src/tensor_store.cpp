#include "layerscope/tensor_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "layerscope/error.hpp"

namespace layerscope {
namespace {

constexpr char kMagic[4] = {'A', 'C', 'T', 'D'};
constexpr char kMetaMagic[4] = {'M', 'E', 'T', 'A'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::string& buf, T v) {
  v = byteswap_if_big(v);
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& v) {
  char raw[sizeof(T)];
  if (!in.read(raw, sizeof(T))) return false;
  std::memcpy(&v, raw, sizeof(T));
  v = byteswap_if_big(v);
  return true;
}

void read_floats(std::istream& in, float* out, std::uint64_t count, const std::string& what) {
  const auto bytes = static_cast<std::streamsize>(count * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(out), bytes)) {
    throw Error(ErrorCode::Truncated, what + ": payload is truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (std::uint64_t i = 0; i < count; ++i) out[i] = byteswap_if_big(out[i]);
  }
}

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

DumpInfo parse_header(std::istream& in, const std::string& what) {
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::Truncated, what + ": file too short for header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw Error(ErrorCode::BadMagic, what + ": bad magic");
  std::uint32_t version = 0, dtype = 0, ndim = 0;
  if (!get(in, version) || !get(in, dtype) || !get(in, ndim)) {
    throw Error(ErrorCode::Truncated, what + ": header is truncated");
  }
  if (version != kVersion) {
    throw Error(ErrorCode::VersionMismatch,
                what + ": version " + std::to_string(version) + " is not supported");
  }
  if (dtype != static_cast<std::uint32_t>(DType::F32)) {
    throw Error(ErrorCode::InvalidArgument, what + ": unknown dtype code " + std::to_string(dtype));
  }
  if (ndim == 0 || ndim > 8) {
    throw Error(ErrorCode::InvalidArgument, what + ": invalid ndim " + std::to_string(ndim));
  }
  DumpInfo info{DType::F32, {}, 0};
  info.shape.resize(ndim);
  for (auto& d : info.shape) {
    if (!get(in, d)) throw Error(ErrorCode::Truncated, what + ": header is truncated");
  }
  info.payload_offset = actd_header_size(ndim);
  return info;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
  return in;
}

}  // namespace

std::string_view split_name(Split split) { return split == Split::Train ? "train" : "test"; }

std::uint64_t TensorDump::numel() const { return product(shape); }

std::uint64_t TensorDump::sample_size() const {
  std::uint64_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

std::size_t actd_header_size(std::size_t ndim) { return 16 + 8 * ndim; }

DumpWriter::DumpWriter(const std::filesystem::path& path, std::vector<std::uint64_t> shape,
                       std::string layer_name, Split split)
    : path_(path), expected_(product(shape)), layer_name_(std::move(layer_name)), split_(split) {
  if (shape.empty()) throw Error(ErrorCode::InvalidArgument, "dump shape must have >= 1 dimension");
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  std::string header;
  header.append(kMagic, 4);
  put<std::uint32_t>(header, kVersion);
  put<std::uint32_t>(header, static_cast<std::uint32_t>(DType::F32));
  put<std::uint32_t>(header, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint64_t>(header, d);
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
}

void DumpWriter::append(std::span<const float> values) {
  if (written_ + values.size() > expected_) {
    throw Error(ErrorCode::InvalidArgument, "more values appended than the dump shape holds");
  }
  if constexpr (std::endian::native == std::endian::little) {
    out_.write(reinterpret_cast<const char*>(values.data()),
               static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    std::string buf;
    for (float v : values) put<float>(buf, v);
    out_.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  written_ += values.size();
}

void DumpWriter::finish() {
  if (written_ != expected_) {
    throw Error(ErrorCode::Truncated, "dump '" + path_.string() + "' received " +
                                          std::to_string(written_) + " of " +
                                          std::to_string(expected_) + " values");
  }
  std::string trailer;
  trailer.append(kMetaMagic, 4);
  put<std::uint32_t>(trailer, static_cast<std::uint32_t>(split_));
  put<std::uint32_t>(trailer, static_cast<std::uint32_t>(layer_name_.size()));
  trailer += layer_name_;
  out_.write(trailer.data(), static_cast<std::streamsize>(trailer.size()));
  out_.close();
  if (!out_) throw Error(ErrorCode::Io, "write to '" + path_.string() + "' failed");
}

void write_dump(const TensorDump& t, const std::filesystem::path& path) {
  if (t.shape.empty()) throw Error(ErrorCode::InvalidArgument, "dump shape must have >= 1 dimension");
  if (t.numel() != t.payload.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "payload holds " + std::to_string(t.payload.size()) + " values, shape needs " +
                    std::to_string(t.numel()));
  }
  DumpWriter writer(path, t.shape, t.layer_name, t.split);
  writer.append(t.payload);
  writer.finish();
}

DumpInfo read_dump_info(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_header(in, path.string());
}

TensorDump read_dump(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string what = path.string();
  const DumpInfo info = parse_header(in, what);
  TensorDump t;
  t.dtype = info.dtype;
  t.shape = info.shape;
  t.payload.resize(product(info.shape));
  read_floats(in, t.payload.data(), t.payload.size(), what);

  char meta[4];
  if (in.read(meta, 4)) {
    if (std::memcmp(meta, kMetaMagic, 4) != 0) {
      throw Error(ErrorCode::BadMagic, what + ": unexpected bytes after payload");
    }
    std::uint32_t split = 0, len = 0;
    if (!get(in, split) || !get(in, len) || split > 1) {
      throw Error(ErrorCode::Truncated, what + ": metadata trailer is malformed");
    }
    t.split = static_cast<Split>(split);
    t.layer_name.resize(len);
    if (len && !in.read(t.layer_name.data(), len)) {
      throw Error(ErrorCode::Truncated, what + ": metadata trailer is truncated");
    }
  }
  return t;
}

BatchStream::BatchStream(const std::filesystem::path& path, std::uint64_t batch)
    : path_(path), in_(open_in(path)), batch_(batch) {
  info_ = parse_header(in_, path_.string());
  if (batch_ == 0) throw Error(ErrorCode::InvalidArgument, "batch size must be >= 1");
  for (std::size_t i = 1; i < info_.shape.size(); ++i) sample_size_ *= info_.shape[i];
}

std::optional<Block> BatchStream::next() {
  const std::uint64_t total = info_.shape.front();
  if (cursor_ >= total) return std::nullopt;
  Block b;
  b.first = cursor_;
  b.count = std::min(batch_, total - cursor_);
  b.values.resize(b.count * sample_size_);
  read_floats(in_, b.values.data(), b.values.size(), path_.string());
  cursor_ += b.count;
  return b;
}

BatchStream stream_batches(const std::filesystem::path& path, std::uint64_t batch) {
  return BatchStream(path, batch);
}

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["architecture"] = architecture;
  j["arch_hash"] = arch_hash;
  j["input_size"] = input_size;
  j["labels_file"] = labels_file;
  j["model_accuracy"] = model_accuracy;
  j["seed"] = seed;
  j["threads"] = threads;
  j["kernel_isa"] = kernel_isa;
  j["num_classes"] = num_classes;
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_json.push_back({{"name", l.name},
                           {"file", l.file},
                           {"shape", l.shape},
                           {"kind", l.kind},
                           {"source_conv", l.source_conv}});
  }
  j["layers"] = layers_json;
  j["extra"] = extra;
  return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.architecture = j.at("architecture").get<std::string>();
    m.arch_hash = j.at("arch_hash").get<std::string>();
    m.input_size = j.at("input_size").get<int>();
    m.labels_file = j.at("labels_file").get<std::string>();
    m.model_accuracy = j.at("model_accuracy").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.threads = j.value("threads", 1);
    m.kernel_isa = j.value("kernel_isa", std::string("scalar"));
    m.num_classes = j.value("num_classes", 0);
    for (const auto& l : j.at("layers")) {
      m.layers.push_back({l.at("name").get<std::string>(), l.at("file").get<std::string>(),
                          l.at("shape").get<std::vector<std::uint64_t>>(),
                          l.at("kind").get<std::string>(), l.value("source_conv", std::string())});
    }
    m.extra = j.value("extra", nlohmann::json::object());
    if (m.model_accuracy < 0.0 || m.model_accuracy > 1.0) {
      throw Error(ErrorCode::Validation, "manifest model_accuracy outside [0, 1]");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, std::string("malformed manifest: ") + e.what());
  }
}

void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << m.to_json().dump(2) << '\n';
}

RunManifest read_manifest(const std::filesystem::path& run_dir) {
  const auto path = run_dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot read '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Validation, "manifest is not valid JSON: " + std::string(e.what()));
  }
  return RunManifest::from_json(j);
}

void verify_manifest(const RunManifest& m, const std::filesystem::path& run_dir) {
  std::optional<std::uint64_t> samples;
  auto check = [&](const std::string& file, const std::vector<std::uint64_t>* expected) {
    const auto path = run_dir / file;
    if (!std::filesystem::exists(path)) {
      throw Error(ErrorCode::Io, "manifest lists missing file '" + file + "'");
    }
    const DumpInfo info = read_dump_info(path);
    if (expected && info.shape != *expected) {
      throw Error(ErrorCode::ShapeMismatch, "dump '" + file + "' does not match its manifest shape");
    }
    if (samples && info.shape.front() != *samples) {
      throw Error(ErrorCode::ShapeMismatch, "dump '" + file + "' has a different sample count");
    }
    samples = info.shape.front();
  };
  for (const auto& l : m.layers) check(l.file, &l.shape);
  if (!m.labels_file.empty()) check(m.labels_file, nullptr);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::Truncated, what + ": truncated");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string what = path.string();
  if (read_be32(in, what) != 0x00000803) throw Error(ErrorCode::BadMagic, what + ": not an IDX image file");
  IdxImages img;
  img.count = read_be32(in, what);
  img.rows = read_be32(in, what);
  img.cols = read_be32(in, what);
  img.pixels.resize(std::size_t{img.count} * img.rows * img.cols);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size()))) {
    throw Error(ErrorCode::Truncated, what + ": pixel data is truncated");
  }
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  const std::string what = path.string();
  if (read_be32(in, what) != 0x00000801) throw Error(ErrorCode::BadMagic, what + ": not an IDX label file");
  std::vector<std::uint8_t> labels(read_be32(in, what));
  if (!in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()))) {
    throw Error(ErrorCode::Truncated, what + ": label data is truncated");
  }
  return labels;
}

}  // namespace layerscope
