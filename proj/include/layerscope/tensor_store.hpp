#pragma once

// ACTD activation dumps and the run manifest.
//
// ACTD layout (little-endian):
//   "ACTD"            4 bytes magic
//   version  u32      = 1
//   dtype    u32      0 = f32
//   ndim     u32      >= 1
//   dims     u64 x ndim
//   payload  f32 x prod(dims), row-major
//   trailer  optional: "META", split u32 (0 train, 1 test), name_len u32, name bytes
//
// The header is 16 + 8 * ndim bytes. Readers that only need the tensor can
// stop after the payload.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace layerscope {

enum class DType : std::uint32_t { F32 = 0 };
enum class Split : std::uint32_t { Train = 0, Test = 1 };

std::string_view split_name(Split split);

struct TensorDump {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> shape;
  std::vector<float> payload;
  std::string layer_name;
  Split split = Split::Test;

  std::uint64_t numel() const;
  /// Number of samples (leading dimension).
  std::uint64_t samples() const { return shape.empty() ? 0 : shape.front(); }
  /// Values per sample.
  std::uint64_t sample_size() const;

  bool operator==(const TensorDump&) const = default;
};

std::size_t actd_header_size(std::size_t ndim);

void write_dump(const TensorDump& t, const std::filesystem::path& path);
TensorDump read_dump(const std::filesystem::path& path);

/// Incremental writer for dumps whose shape is known up front.
class DumpWriter {
 public:
  DumpWriter(const std::filesystem::path& path, std::vector<std::uint64_t> shape,
             std::string layer_name, Split split);
  void append(std::span<const float> values);
  /// Writes the trailer; throws Error(Truncated) when fewer values than the shape needs were added.
  void finish();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t expected_ = 0;
  std::uint64_t written_ = 0;
  std::string layer_name_;
  Split split_;
};

/// Header-only view of a dump file.
struct DumpInfo {
  DType dtype;
  std::vector<std::uint64_t> shape;
  std::uint64_t payload_offset;
};
DumpInfo read_dump_info(const std::filesystem::path& path);

struct Block {
  std::vector<float> values;  // count * sample_size values
  std::uint64_t first = 0;    // index of the first sample in the block
  std::uint64_t count = 0;
};

/// Reads a dump file in consecutive sample blocks without loading the whole payload.
class BatchStream {
 public:
  BatchStream(const std::filesystem::path& path, std::uint64_t batch);

  const std::vector<std::uint64_t>& shape() const { return info_.shape; }
  std::uint64_t sample_size() const { return sample_size_; }

  /// Next block; nullopt once all samples were returned.
  std::optional<Block> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  DumpInfo info_;
  std::uint64_t batch_;
  std::uint64_t sample_size_ = 1;
  std::uint64_t cursor_ = 0;
};

BatchStream stream_batches(const std::filesystem::path& path, std::uint64_t batch);

struct ManifestLayer {
  std::string name;
  std::string file;  // relative to the run directory
  std::vector<std::uint64_t> shape;
  std::string kind;  // "conv" (N,C,H,W) or "vector" (N,C)
  std::string source_conv;  // conv node whose block this capture closes, if any
};

struct RunManifest {
  std::string architecture;
  std::string arch_hash;
  int input_size = 0;
  std::vector<ManifestLayer> layers;
  std::string labels_file;
  double model_accuracy = 0.0;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string kernel_isa;
  int num_classes = 0;
  nlohmann::json extra = nlohmann::json::object();  // toy spec, training config, history

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

void write_manifest(const RunManifest& m, const std::filesystem::path& run_dir);
RunManifest read_manifest(const std::filesystem::path& run_dir);

/// Check every listed dump exists and its header shape matches the manifest.
void verify_manifest(const RunManifest& m, const std::filesystem::path& run_dir);

// IDX (MNIST) files.
struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

}  // namespace layerscope
