// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "wa/data.hpp"

using namespace wa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("wa_data_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

std::vector<uint8_t> idx_image_fixture() {
  // Two 2x2 images, pixel bytes 10,20,30,40 and 50,60,70,80.
  return {0x00, 0x00, 0x08, 0x03, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00,
          0x00, 0x02, 0x00, 0x00, 0x00, 0x02, 10,   20,   30,   40,
          50,   60,   70,   80};
}

}  // namespace

TEST_CASE("parse_idx decodes a hand-built fixture byte-for-byte") {
  TempDir dir;
  write_bytes(dir.file("imgs"), idx_image_fixture());
  IdxData<double> d = parse_idx<double>(dir.file("imgs"));
  CHECK(d.magic == kIdxImagesMagic);
  CHECK(d.dims == std::vector<Index>{2, 2, 2});
  CHECK(d.images.shape() == Shape{2, 2, 2});
  const int bytes[] = {10, 20, 30, 40, 50, 60, 70, 80};
  for (Index i = 0; i < 8; ++i) CHECK(d.images[i] == double(bytes[i]) / 255.0);

  write_bytes(dir.file("labels"), {0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00,
                                   0x03, 7, 0, 9});
  IdxData<double> l = parse_idx<double>(dir.file("labels"));
  CHECK(l.magic == kIdxLabelsMagic);
  CHECK(l.labels == std::vector<int>{7, 0, 9});
}

TEST_CASE("parse_idx rejects bad magic, empty and truncated files") {
  TempDir dir;
  write_bytes(dir.file("bad_magic"), {0x00, 0x00, 0x08, 0x05, 0x00, 0x00, 0x00,
                                      0x01, 1});
  CHECK_THROWS_WITH_AS(parse_idx<double>(dir.file("bad_magic")),
                       doctest::Contains("magic"), std::invalid_argument);

  write_bytes(dir.file("empty"), {});
  CHECK_THROWS_AS(parse_idx<double>(dir.file("empty")), std::invalid_argument);

  // Fuzz: every truncation of a valid file is a clean error, never a crash.
  const std::vector<uint8_t> good = idx_image_fixture();
  for (size_t len = 0; len < good.size(); ++len) {
    write_bytes(dir.file("trunc"),
                std::vector<uint8_t>(good.begin(), good.begin() + long(len)));
    CHECK_THROWS_AS(parse_idx<double>(dir.file("trunc")), std::invalid_argument);
  }
  // One byte too many is also a length error.
  std::vector<uint8_t> fat = good;
  fat.push_back(0);
  write_bytes(dir.file("fat"), fat);
  CHECK_THROWS_AS(parse_idx<double>(dir.file("fat")), std::invalid_argument);
}

TEST_CASE("IDX write / parse round-trip") {
  TempDir dir;
  Tensor<double> images({3, 4, 5});
  Rng rng(1);
  for (Index i = 0; i < images.size(); ++i)
    images[i] = double(rng.below(256)) / 255.0;
  write_idx_images(dir.file("im"), images);
  IdxData<double> back = parse_idx<double>(dir.file("im"));
  CHECK(back.images == images);

  std::vector<int> labels = {3, 1, 4};
  write_idx_labels(dir.file("lb"), labels);
  CHECK(parse_idx<double>(dir.file("lb")).labels == labels);
}

TEST_CASE("parse_cifar10_bin decodes a synthetic record exactly") {
  TempDir dir;
  std::vector<uint8_t> rec(3073);
  rec[0] = 7;  // label
  for (size_t i = 0; i < 3072; ++i) rec[1 + i] = uint8_t((i * 13) % 256);
  write_bytes(dir.file("batch.bin"), rec);
  Dataset<double> ds = parse_cifar10_bin<double>({dir.file("batch.bin")});
  CHECK(ds.count() == 1);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
  for (Index i = 0; i < 3072; ++i)
    CHECK(ds.images[i] == double((i * 13) % 256) / 255.0);

  // Two files concatenate.
  write_bytes(dir.file("b2.bin"), rec);
  CHECK(parse_cifar10_bin<double>({dir.file("batch.bin"), dir.file("b2.bin")})
            .count() == 2);
}

TEST_CASE("parse_cifar10_bin error paths") {
  TempDir dir;
  write_bytes(dir.file("empty.bin"), {});
  CHECK_THROWS_WITH_AS(parse_cifar10_bin<double>({dir.file("empty.bin")}),
                       doctest::Contains("empty"), std::invalid_argument);

  write_bytes(dir.file("short.bin"), std::vector<uint8_t>(3072, 0));
  CHECK_THROWS_WITH_AS(parse_cifar10_bin<double>({dir.file("short.bin")}),
                       doctest::Contains("3073"), std::invalid_argument);

  std::vector<uint8_t> bad(3073, 0);
  bad[0] = 10;
  write_bytes(dir.file("badlabel.bin"), bad);
  CHECK_THROWS_WITH_AS(parse_cifar10_bin<double>({dir.file("badlabel.bin")}),
                       doctest::Contains("label"), std::invalid_argument);
}

TEST_CASE("augmentation: no-op config, involution, centered crop") {
  Rng rng(3);
  Tensor<double> batch({2, 1, 8, 8});
  for (Index i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
  Tensor<double> original = batch;

  AugmentConfig noop{0.0, 0};
  Rng arng(5);
  augment(batch, noop, arng);
  CHECK(batch == original);

  // Flipping twice restores the image.
  flip_horizontal(batch, 0);
  flip_horizontal(batch, 0);
  CHECK(batch == original);

  // Pad 4 then crop at the centered offset recovers the image exactly.
  pad_crop(batch, 1, Index(4), Index(4), Index(4));
  CHECK(batch == original);

  // Off-center crop moves content.
  pad_crop(batch, 1, Index(4), Index(0), Index(0));
  CHECK_FALSE(batch == original);
}

TEST_CASE("augmentation preserves shape and label pairing") {
  Rng rng(7);
  Tensor<double> batch({6, 1, 8, 8});
  for (Index i = 0; i < batch.size(); ++i) batch[i] = rng.uniform();
  std::vector<int> labels = {0, 1, 2, 3, 4, 5};
  AugmentConfig cfg{0.5, 2};
  Rng arng(9);
  augment(batch, cfg, arng);
  CHECK(batch.shape() == Shape{6, 1, 8, 8});
  CHECK(labels == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("synthetic_gaussian: moments, determinism, shape echo") {
  Tensor<double> x = synthetic_gaussian<double>(128, {16, 8, 8}, 11);
  CHECK(x.shape() == Shape{128, 16, 8, 8});

  double mean = 0;
  for (Index i = 0; i < x.size(); ++i) mean += x[i];
  mean /= double(x.size());
  const double se = 1.0 / std::sqrt(double(x.size()));
  CHECK(std::abs(mean) < 3 * se);

  double var = 0;
  for (Index i = 0; i < x.size(); ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= double(x.size());
  CHECK(std::abs(var - 1.0) < 3 * std::sqrt(2.0) * se);

  CHECK(x == synthetic_gaussian<double>(128, {16, 8, 8}, 11));
  CHECK_FALSE(x == synthetic_gaussian<double>(128, {16, 8, 8}, 12));
}

TEST_CASE("synthetic digits and the MNIST-layout loader") {
  TempDir dir;
  ensure_digits_idx<double>(dir.file("digits"), 600, 200, 42);
  auto [train, test] = load_idx_dir<double>(dir.file("digits"), 500, 100);
  CHECK(train.count() == 500);
  CHECK(test.count() == 100);
  CHECK(train.images.shape() == Shape{500, 1, 28, 28});
  for (int l : train.labels) {
    CHECK(l >= 0);
    CHECK(l <= 9);
  }
  // All ten classes present in 500 draws.
  std::vector<int> seen(10, 0);
  for (int l : train.labels) seen[size_t(l)] = 1;
  for (int s : seen) CHECK(s == 1);

  // Standardization: train split is zero-mean unit-std per channel.
  auto [mean, sd] = channel_stats(train.images);
  CHECK(std::abs(mean[0]) < 1e-9);
  CHECK(sd[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(train.channel_mean == test.channel_mean);  // constants shared
  CHECK(train.meta.contains("channel_mean"));

  // Idempotent: a second ensure call leaves the files alone.
  auto before = fs::last_write_time(fs::path(dir.file("digits")) /
                                    "train-images-idx3-ubyte");
  ensure_digits_idx<double>(dir.file("digits"), 600, 200, 42);
  auto after = fs::last_write_time(fs::path(dir.file("digits")) /
                                   "train-images-idx3-ubyte");
  CHECK(before == after);
}

TEST_CASE("deterministic subset takes the first records") {
  TempDir dir;
  ensure_digits_idx<double>(dir.file("d"), 300, 100, 7);
  auto [a_train, a_test] = load_idx_dir<double>(dir.file("d"), 200, 50);
  auto [b_train, b_test] = load_idx_dir<double>(dir.file("d"), 200, 50);
  CHECK(a_train.images == b_train.images);
  CHECK(a_train.labels == b_train.labels);

  auto [full_train, full_test] = load_idx_dir<double>(dir.file("d"), 0, 0);
  CHECK(full_train.count() == 300);
  for (Index i = 0; i < 200; ++i)
    CHECK(a_train.labels[size_t(i)] == full_train.labels[size_t(i)]);
}
