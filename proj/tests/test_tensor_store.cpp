#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "layerscope/error.hpp"
#include "layerscope/rng.hpp"
#include "layerscope/tensor_store.hpp"
#include "test_support.hpp"

using namespace layerscope;
namespace fs = std::filesystem;
using test_support::code_of;
using test_support::TempDir;

namespace {

TensorDump random_dump(Rng& rng, std::vector<std::uint64_t> shape) {
  TensorDump t;
  t.shape = std::move(shape);
  t.payload.resize(t.numel());
  for (float& v : t.payload) v = static_cast<float>(rng.normal() * 10.0);
  t.layer_name = "layer" + std::to_string(rng.below(100));
  t.split = rng.below(2) ? Split::Train : Split::Test;
  return t;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

}  // namespace

TEST(Actd, RoundTripRandomTensors) {
  TempDir dir;
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<std::uint64_t> shape;
    const auto ndim = 1 + rng.below(4);
    for (std::uint64_t d = 0; d < ndim; ++d) shape.push_back(1 + rng.below(6));
    const TensorDump t = random_dump(rng, shape);
    write_dump(t, dir / "t.actd");
    EXPECT_EQ(read_dump(dir / "t.actd"), t);
  }
}

TEST(Actd, SpecialValuesSurviveBitExact) {
  TempDir dir;
  TensorDump t;
  t.shape = {6};
  t.payload = {0.0f, -0.0f, std::numeric_limits<float>::infinity(), std::numeric_limits<float>::denorm_min(),
               std::numeric_limits<float>::quiet_NaN(), 1e-30f};
  write_dump(t, dir / "s.actd");
  const TensorDump back = read_dump(dir / "s.actd");
  ASSERT_EQ(back.payload.size(), 6u);
  EXPECT_EQ(std::memcmp(back.payload.data(), t.payload.data(), 6 * sizeof(float)), 0);
}

TEST(Actd, HeaderLayout) {
  EXPECT_EQ(actd_header_size(1), 24u);
  EXPECT_EQ(actd_header_size(4), 48u);
  TempDir dir;
  Rng rng(1);
  const TensorDump t = random_dump(rng, {2, 3, 4, 4});
  write_dump(t, dir / "h.actd");
  const auto b = bytes_of(dir / "h.actd");
  ASSERT_GE(b.size(), 48u + 96u * 4u);
  EXPECT_EQ(std::string(b.data(), 4), "ACTD");
  std::uint32_t version, dtype, ndim;
  std::memcpy(&version, b.data() + 4, 4);
  std::memcpy(&dtype, b.data() + 8, 4);
  std::memcpy(&ndim, b.data() + 12, 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(dtype, 0u);
  EXPECT_EQ(ndim, 4u);
  std::uint64_t d2;
  std::memcpy(&d2, b.data() + 16 + 8, 8);
  EXPECT_EQ(d2, 3u);
  float first;
  std::memcpy(&first, b.data() + 48, 4);
  EXPECT_EQ(first, t.payload[0]);
  EXPECT_EQ(read_dump_info(dir / "h.actd").payload_offset, 48u);
}

TEST(Actd, EmptyShapeRejected) {
  TempDir dir;
  TensorDump t;
  EXPECT_EQ(code_of([&] { write_dump(t, dir / "e.actd"); }), ErrorCode::InvalidArgument);
}

TEST(Actd, PayloadSizeMismatchRejected) {
  TempDir dir;
  TensorDump t;
  t.shape = {2, 2};
  t.payload = {1.0f, 2.0f, 3.0f};
  EXPECT_EQ(code_of([&] { write_dump(t, dir / "m.actd"); }), ErrorCode::InvalidArgument);
}

TEST(Actd, CorruptedFilesRejected) {
  TempDir dir;
  Rng rng(2);
  write_dump(random_dump(rng, {3, 5}), dir / "ok.actd");
  const auto good = bytes_of(dir / "ok.actd");

  auto bad = good;
  bad[0] = 'X';
  write_bytes(dir / "magic.actd", bad);
  EXPECT_EQ(code_of([&] { read_dump(dir / "magic.actd"); }), ErrorCode::BadMagic);

  bad = good;
  bad[4] = 2;
  write_bytes(dir / "version.actd", bad);
  EXPECT_EQ(code_of([&] { read_dump(dir / "version.actd"); }), ErrorCode::VersionMismatch);

  bad.assign(good.begin(), good.begin() + 40);
  write_bytes(dir / "short.actd", bad);
  EXPECT_EQ(code_of([&] { read_dump(dir / "short.actd"); }), ErrorCode::Truncated);

  bad.assign(good.begin(), good.begin() + 10);
  write_bytes(dir / "header.actd", bad);
  EXPECT_EQ(code_of([&] { read_dump(dir / "header.actd"); }), ErrorCode::Truncated);

  EXPECT_EQ(code_of([&] { read_dump(dir / "absent.actd"); }), ErrorCode::Io);
}

TEST(Actd, WriterMatchesWholeFileWrite) {
  TempDir dir;
  Rng rng(3);
  const TensorDump t = random_dump(rng, {7, 2, 3});
  write_dump(t, dir / "whole.actd");
  DumpWriter w(dir / "parts.actd", t.shape, t.layer_name, t.split);
  const std::span<const float> all(t.payload);
  w.append(all.subspan(0, 10));
  w.append(all.subspan(10));
  w.finish();
  EXPECT_EQ(bytes_of(dir / "whole.actd"), bytes_of(dir / "parts.actd"));
}

TEST(Actd, WriterDetectsShortPayload) {
  TempDir dir;
  DumpWriter w(dir / "short.actd", {4, 2}, "x", Split::Test);
  std::vector<float> v(5, 1.0f);
  w.append(v);
  EXPECT_EQ(code_of([&] { w.finish(); }), ErrorCode::Truncated);
}

TEST(Stream, BlocksPartitionSamples) {
  TempDir dir;
  Rng rng(4);
  const TensorDump t = random_dump(rng, {10, 3, 2, 2});
  write_dump(t, dir / "s.actd");
  BatchStream stream(dir / "s.actd", 4);
  std::vector<std::uint64_t> counts, firsts;
  std::vector<float> joined;
  while (auto b = stream.next()) {
    counts.push_back(b->count);
    firsts.push_back(b->first);
    joined.insert(joined.end(), b->values.begin(), b->values.end());
  }
  EXPECT_EQ(counts, (std::vector<std::uint64_t>{4, 4, 2}));
  EXPECT_EQ(firsts, (std::vector<std::uint64_t>{0, 4, 8}));
  EXPECT_EQ(std::memcmp(joined.data(), t.payload.data(), joined.size() * sizeof(float)), 0);
  EXPECT_EQ(joined.size(), t.payload.size());
}

TEST(Stream, SingleSampleOneBlock) {
  TempDir dir;
  Rng rng(6);
  write_dump(random_dump(rng, {1, 8}), dir / "one.actd");
  auto stream = stream_batches(dir / "one.actd", 64);
  auto b = stream.next();
  ASSERT_TRUE(b);
  EXPECT_EQ(b->count, 1u);
  EXPECT_FALSE(stream.next());
}

TEST(Stream, ZeroBatchRejected) {
  TempDir dir;
  Rng rng(7);
  write_dump(random_dump(rng, {3, 2}), dir / "z.actd");
  EXPECT_EQ(code_of([&] { BatchStream(dir / "z.actd", 0); }), ErrorCode::InvalidArgument);
}

TEST(Manifest, JsonRoundTripAndVerify) {
  TempDir dir;
  Rng rng(8);
  fs::create_directories(dir / "dumps");
  write_dump(random_dump(rng, {5, 4, 3, 3}), dir / "dumps/conv1.actd");
  TensorDump labels;
  labels.shape = {5};
  labels.payload = {0, 1, 0, 1, 1};
  write_dump(labels, dir / "dumps/labels.actd");

  RunManifest m;
  m.architecture = "net";
  m.arch_hash = "0123456789abcdef";
  m.input_size = 16;
  m.layers = {{"conv1", "dumps/conv1.actd", {5, 4, 3, 3}, "conv", "conv1"}};
  m.labels_file = "dumps/labels.actd";
  m.model_accuracy = 0.8;
  m.seed = 42;
  m.num_classes = 2;
  write_manifest(m, dir.path());
  const RunManifest back = read_manifest(dir.path());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_NO_THROW(verify_manifest(back, dir.path()));

  m.layers[0].shape = {5, 4, 2, 2};
  EXPECT_EQ(code_of([&] { verify_manifest(m, dir.path()); }), ErrorCode::ShapeMismatch);
  m.layers[0].file = "dumps/none.actd";
  EXPECT_EQ(code_of([&] { verify_manifest(m, dir.path()); }), ErrorCode::Io);

  nlohmann::json j = back.to_json();
  j["model_accuracy"] = 1.5;
  EXPECT_EQ(code_of([&] { RunManifest::from_json(j); }), ErrorCode::Validation);
}

TEST(Idx, ReadsImagesAndLabels) {
  TempDir dir;
  auto be32 = [](std::vector<char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<char>((v >> s) & 0xff));
  };
  std::vector<char> img;
  be32(img, 0x803);
  be32(img, 2);
  be32(img, 2);
  be32(img, 3);
  for (int i = 0; i < 12; ++i) img.push_back(static_cast<char>(i * 20));
  write_bytes(dir / "img.idx", img);
  std::vector<char> lab;
  be32(lab, 0x801);
  be32(lab, 2);
  lab.push_back(7);
  lab.push_back(3);
  write_bytes(dir / "lab.idx", lab);

  const IdxImages images = read_idx_images(dir / "img.idx");
  EXPECT_EQ(images.count, 2u);
  EXPECT_EQ(images.rows, 2u);
  EXPECT_EQ(images.cols, 3u);
  ASSERT_EQ(images.pixels.size(), 12u);
  EXPECT_EQ(images.pixels[11], 220);
  EXPECT_EQ(read_idx_labels(dir / "lab.idx"), (std::vector<std::uint8_t>{7, 3}));

  EXPECT_EQ(code_of([&] { read_idx_images(dir / "lab.idx"); }), ErrorCode::BadMagic);
  img.resize(img.size() - 1);
  write_bytes(dir / "short.idx", img);
  EXPECT_EQ(code_of([&] { read_idx_images(dir / "short.idx"); }), ErrorCode::Truncated);
}
