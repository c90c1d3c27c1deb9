// Copyright (c) 2026 WeightAlign contributors
// Licensed under the Apache License, Version 2.0.

/**
 * @file data.hpp
 * @brief Dataset ingestion: IDX files, CIFAR-10 binaries, synthetic data,
 *        and the flip/pad-crop augmentation pipeline.
 *
 * Decoders read the whole file up front and bounds-check every access, so a
 * truncated file is a clean error. Pixels are scaled to [0,1] at decode time
 * and standardized per channel with constants computed from the training
 * split; the constants travel in Dataset metadata.
 */

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "wa/rng.hpp"
#include "wa/tensor.hpp"

namespace wa {

template <typename S>
struct Dataset {
  Tensor<S> images;  // N,C,H,W, standardized
  std::vector<int> labels;
  std::string split;
  std::vector<double> channel_mean, channel_std;
  nlohmann::json meta;

  Index count() const { return images.rank() == 4 ? images.extent(0) : 0; }
};

struct AugmentConfig {
  double flip_prob = 0.5;
  Index pad = 0;  // zero padding before the random crop back to input size

  bool operator==(const AugmentConfig&) const = default;
};

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

template <typename S>
struct IdxData {
  uint32_t magic = 0;
  std::vector<Index> dims;
  Tensor<S> images;         // magic 0x803: [N,H,W] scaled to [0,1]
  std::vector<int> labels;  // magic 0x801
};

namespace detail {
inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '" + path + "'");
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in),
                              std::istreambuf_iterator<char>());
}

inline uint32_t be32(const std::vector<uint8_t>& b, size_t at) {
  return (uint32_t(b[at]) << 24) | (uint32_t(b[at + 1]) << 16) |
         (uint32_t(b[at + 2]) << 8) | uint32_t(b[at + 3]);
}
}  // namespace detail

/// Decode one IDX file (big-endian header, unsigned-byte payload).
template <typename S>
IdxData<S> parse_idx(const std::string& path) {
  const std::vector<uint8_t> raw = detail::read_file(path);
  if (raw.size() < 4) fail("IDX file '" + path + "' truncated before magic");
  IdxData<S> out;
  out.magic = detail::be32(raw, 0);
  size_t ndims;
  if (out.magic == kIdxImagesMagic)
    ndims = 3;
  else if (out.magic == kIdxLabelsMagic)
    ndims = 1;
  else {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", out.magic);
    fail("IDX file '" + path + "' has unsupported magic " + buf);
  }
  if (raw.size() < 4 + 4 * ndims)
    fail("IDX file '" + path + "' truncated in dimension header");
  size_t total = 1;
  for (size_t d = 0; d < ndims; ++d) {
    const uint32_t e = detail::be32(raw, 4 + 4 * d);
    out.dims.push_back(Index(e));
    total *= e;
  }
  const size_t payload = 4 + 4 * ndims;
  if (raw.size() != payload + total)
    fail("IDX file '" + path + "' payload length " +
         std::to_string(raw.size() - payload) + " does not match header (" +
         std::to_string(total) + " expected)");

  if (out.magic == kIdxImagesMagic) {
    out.images = Tensor<S>(Shape(out.dims.begin(), out.dims.end()));
    for (size_t i = 0; i < total; ++i)
      out.images[Index(i)] = S(raw[payload + i]) / S(255);
  } else {
    out.labels.reserve(total);
    for (size_t i = 0; i < total; ++i) out.labels.push_back(int(raw[payload + i]));
  }
  return out;
}

/// Write [N,H,W] values in [0,1] as an IDX image file (quantized to bytes).
template <typename S>
void write_idx_images(const std::string& path, const Tensor<S>& images) {
  if (images.rank() != 3) fail("write_idx_images expects [N,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '" + path + "'");
  auto be = [&](uint32_t v) {
    const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8),
                          uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be(kIdxImagesMagic);
  for (Index d = 0; d < 3; ++d) be(uint32_t(images.extent(d)));
  for (Index i = 0; i < images.size(); ++i) {
    const double v = std::clamp(double(images[i]), 0.0, 1.0);
    const uint8_t b = uint8_t(std::lround(v * 255.0));
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

inline void write_idx_labels(const std::string& path,
                             const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write '" + path + "'");
  auto be = [&](uint32_t v) {
    const uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8),
                          uint8_t(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be(kIdxLabelsMagic);
  be(uint32_t(labels.size()));
  for (int l : labels) {
    const uint8_t b = uint8_t(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-channel mean/std of an [N,C,H,W] tensor (std floor 1e-8).
template <typename S>
std::pair<std::vector<double>, std::vector<double>> channel_stats(
    const Tensor<S>& images) {
  const Shape4 s = Shape4::of(images);
  std::vector<double> mean(s.c), std(s.c);
  const Index per = s.h * s.w;
  for (Index c = 0; c < s.c; ++c) {
    double acc = 0;
    for (Index n = 0; n < s.n; ++n)
      acc += double(typename Tensor<S>::ConstArrayMap(
                        images.data() + (n * s.c + c) * per, per)
                        .sum());
    mean[c] = acc / double(s.n * per);
    double sq = 0;
    for (Index n = 0; n < s.n; ++n)
      sq += double((typename Tensor<S>::ConstArrayMap(
                        images.data() + (n * s.c + c) * per, per) -
                    S(mean[c]))
                       .square()
                       .sum());
    std[c] = std::max(std::sqrt(sq / double(s.n * per)), 1e-8);
  }
  return {std::move(mean), std::move(std)};
}

template <typename S>
void standardize(Dataset<S>& ds, const std::vector<double>& mean,
                 const std::vector<double>& std) {
  const Shape4 s = Shape4::of(ds.images);
  if (Index(mean.size()) != s.c || Index(std.size()) != s.c)
    fail("standardization constants do not match channel count");
  const Index per = s.h * s.w;
  for (Index n = 0; n < s.n; ++n)
    for (Index c = 0; c < s.c; ++c) {
      typename Tensor<S>::ArrayMap m(ds.images.data() + (n * s.c + c) * per, per);
      m = (m - S(mean[c])) / S(std[c]);
    }
  ds.channel_mean = mean;
  ds.channel_std = std;
  ds.meta["channel_mean"] = mean;
  ds.meta["channel_std"] = std;
}

// ---------------------------------------------------------------------------
// Loaders
// ---------------------------------------------------------------------------

/// Deterministic subset: the first `count` records.
template <typename S>
Dataset<S> subset_dataset(const Dataset<S>& ds, Index count) {
  if (count <= 0 || count >= ds.count()) return ds;
  const Shape4 s = Shape4::of(ds.images);
  Dataset<S> out;
  out.images = Tensor<S>({count, s.c, s.h, s.w});
  std::copy_n(ds.images.data(), count * s.c * s.h * s.w, out.images.data());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  out.split = ds.split;
  out.channel_mean = ds.channel_mean;
  out.channel_std = ds.channel_std;
  out.meta = ds.meta;
  out.meta["subset"] = count;
  return out;
}

/**
 * Load an MNIST-layout directory of IDX files (train-images-idx3-ubyte,
 * train-labels-idx1-ubyte, t10k-...). Standardization constants come from
 * the (subset of the) training split and are applied to both splits.
 */
template <typename S>
std::pair<Dataset<S>, Dataset<S>> load_idx_dir(const std::string& dir,
                                               Index train_subset = 0,
                                               Index test_subset = 0) {
  auto load_split = [&](const std::string& istem, const std::string& lstem,
                        const std::string& split) {
    IdxData<S> im = parse_idx<S>(dir + "/" + istem);
    IdxData<S> lb = parse_idx<S>(dir + "/" + lstem);
    if (im.magic != kIdxImagesMagic) fail(istem + " is not an IDX image file");
    if (lb.magic != kIdxLabelsMagic) fail(lstem + " is not an IDX label file");
    if (im.dims[0] != Index(lb.labels.size()))
      fail("image/label count mismatch in " + dir);
    Dataset<S> ds;
    ds.images = im.images.reshaped({im.dims[0], 1, im.dims[1], im.dims[2]});
    ds.labels = std::move(lb.labels);
    ds.split = split;
    ds.meta["source"] = dir;
    ds.meta["split"] = split;
    return ds;
  };
  Dataset<S> train = load_split("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "train");
  Dataset<S> test = load_split("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", "test");
  train = subset_dataset(train, train_subset);
  test = subset_dataset(test, test_subset);
  auto [mean, std] = channel_stats(train.images);
  standardize(train, mean, std);
  standardize(test, mean, std);
  return {std::move(train), std::move(test)};
}

/// Decode CIFAR-10 binary batch files (3073-byte records, planar RGB 32x32).
template <typename S>
Dataset<S> parse_cifar10_bin(const std::vector<std::string>& paths,
                             const std::string& split = "train") {
  constexpr size_t kRecord = 3073;
  std::vector<uint8_t> all;
  for (const std::string& p : paths) {
    std::vector<uint8_t> raw = detail::read_file(p);
    if (raw.size() % kRecord != 0)
      fail("CIFAR-10 file '" + p + "' length " + std::to_string(raw.size()) +
           " is not a multiple of 3073");
    all.insert(all.end(), raw.begin(), raw.end());
  }
  const Index n = Index(all.size() / kRecord);
  if (n == 0) fail("CIFAR-10 split is empty");
  Dataset<S> ds;
  ds.images = Tensor<S>({n, 3, 32, 32});
  ds.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    const size_t base = size_t(i) * kRecord;
    const int label = all[base];
    if (label > 9)
      fail("CIFAR-10 record " + std::to_string(i) + " has label " +
           std::to_string(label) + " > 9");
    ds.labels[i] = label;
    for (size_t j = 0; j < 3072; ++j)
      ds.images[i * 3072 + Index(j)] = S(all[base + 1 + j]) / S(255);
  }
  ds.split = split;
  ds.meta["records"] = n;
  return ds;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Mirror one image horizontally, in place.
template <typename S>
void flip_horizontal(Tensor<S>& images, Index n) {
  const Shape4 s = Shape4::of(images);
  for (Index c = 0; c < s.c; ++c)
    for (Index h = 0; h < s.h; ++h)
      for (Index w = 0; w < s.w / 2; ++w)
        std::swap(images(n, c, h, w), images(n, c, h, s.w - 1 - w));
}

/// Zero-pad one image by `pad` and crop back at offset (oy, ox) in [0, 2*pad].
template <typename S>
void pad_crop(Tensor<S>& images, Index n, Index pad, Index oy, Index ox) {
  const Shape4 s = Shape4::of(images);
  Tensor<S> src({s.c, s.h, s.w});
  std::copy_n(images.data() + n * s.c * s.h * s.w, s.c * s.h * s.w, src.data());
  for (Index c = 0; c < s.c; ++c)
    for (Index h = 0; h < s.h; ++h)
      for (Index w = 0; w < s.w; ++w) {
        const Index sy = h + oy - pad, sx = w + ox - pad;
        images(n, c, h, w) = (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w)
                                 ? S(0)
                                 : src[(c * s.h + sy) * s.w + sx];
      }
}

/// Per-image random horizontal flip and pad-then-random-crop; labels keep
/// their pairing (images transform in place).
template <typename S>
void augment(Tensor<S>& images, const AugmentConfig& cfg, Rng& rng) {
  const Shape4 s = Shape4::of(images);
  for (Index n = 0; n < s.n; ++n) {
    if (cfg.flip_prob > 0 && rng.bernoulli(cfg.flip_prob)) flip_horizontal(images, n);
    if (cfg.pad > 0) {
      const Index oy = Index(rng.below(uint64_t(2 * cfg.pad + 1)));
      const Index ox = Index(rng.below(uint64_t(2 * cfg.pad + 1)));
      pad_crop(images, n, cfg.pad, oy, ox);
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// i.i.d. standard normal batch.
template <typename S>
Tensor<S> synthetic_gaussian(Index n, Shape chw, uint64_t seed) {
  Shape shape{n};
  shape.insert(shape.end(), chw.begin(), chw.end());
  Tensor<S> out(std::move(shape));
  Rng rng(seed, /*stream=*/0x9au);
  for (Index i = 0; i < out.size(); ++i) out[i] = S(rng.normal());
  return out;
}

namespace detail {
// 7x5 digit glyphs, one string per row, '#' marks ink.
inline const char* const kGlyphs[10][7] = {
    {"#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####"},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {"#####", "....#", "....#", "#####", "#....", "#....", "#####"},
    {"#####", "....#", "....#", ".####", "....#", "....#", "#####"},
    {"#...#", "#...#", "#...#", "#####", "....#", "....#", "....#"},
    {"#####", "#....", "#....", "#####", "....#", "....#", "#####"},
    {"#####", "#....", "#....", "#####", "#...#", "#...#", "#####"},
    {"#####", "....#", "...#.", "..#..", "..#..", ".#...", ".#..."},
    {"#####", "#...#", "#...#", "#####", "#...#", "#...#", "#####"},
    {"#####", "#...#", "#...#", "#####", "....#", "....#", "#####"}};

template <typename S>
void render_glyph(Tensor<S>& images, Index n, int digit, Index oy, Index ox,
                  double intensity, Index cell) {
  const Shape s3 = images.shape();  // [N,H,W]
  const Index h = s3[1], w = s3[2];
  for (Index gy = 0; gy < 7; ++gy)
    for (Index gx = 0; gx < 5; ++gx) {
      if (kGlyphs[digit][gy][gx] != '#') continue;
      for (Index py = 0; py < cell; ++py)
        for (Index px = 0; px < cell; ++px) {
          const Index y = oy + gy * cell + py, x = ox + gx * cell + px;
          if (y < 0 || y >= h || x < 0 || x >= w) continue;
          S& px_ref = images[(n * h + y) * w + x];
          px_ref = S(std::min(1.0, double(px_ref) + intensity));
        }
    }
}
}  // namespace detail

/**
 * Deterministic 10-class digit-glyph images, 28x28, raw [0,1] (no
 * standardization). Jittered position and intensity, pixel noise and an
 * occasional faint distractor glyph keep the task non-trivial.
 */
template <typename S>
std::pair<Tensor<S>, std::vector<int>> synthetic_digits(Index count,
                                                        uint64_t seed) {
  Tensor<S> images({count, 28, 28});
  std::vector<int> labels(count);
  Rng rng(seed, /*stream=*/0xd1u);
  for (Index i = 0; i < count; ++i) {
    const int digit = int(rng.below(10));
    labels[i] = digit;
    const Index cell = 2 + Index(rng.below(2));                 // glyph 14x10 or 21x15
    const Index gh = 7 * cell, gw = 5 * cell;
    const Index oy = Index(rng.below(uint64_t(28 - gh + 1)));
    const Index ox = Index(rng.below(uint64_t(28 - gw + 1)));
    const double intensity = rng.uniform(0.55, 1.0);
    detail::render_glyph(images, i, digit, oy, ox, intensity, cell);
    if (rng.bernoulli(0.15)) {  // faint distractor glyph
      const int other = int(rng.below(10));
      const Index dy = Index(rng.below(uint64_t(28 - 14 + 1)));
      const Index dx = Index(rng.below(uint64_t(28 - 10 + 1)));
      detail::render_glyph(images, i, other, dy, dx, 0.3 * intensity, 2);
    }
    for (Index p = 0; p < 28 * 28; ++p) {
      S& v = images[i * 28 * 28 + p];
      v = S(std::clamp(double(v) + rng.normal(0.0, 0.18), 0.0, 1.0));
    }
  }
  return {std::move(images), std::move(labels)};
}

/// Write the digit-glyph dataset as MNIST-layout IDX files if absent.
template <typename S>
void ensure_digits_idx(const std::string& dir, Index train_count,
                       Index test_count, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string files[4] = {
      dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte",
      dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte"};
  bool all_present = true;
  for (const std::string& f : files) all_present = all_present && fs::exists(f);
  if (all_present) return;
  auto [train_im, train_lb] = synthetic_digits<S>(train_count, seed);
  auto [test_im, test_lb] = synthetic_digits<S>(test_count, seed + 1);
  write_idx_images(files[0], train_im);
  write_idx_labels(files[1], train_lb);
  write_idx_images(files[2], test_im);
  write_idx_labels(files[3], test_lb);
}

}  // namespace wa
