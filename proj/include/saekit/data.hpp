/*
 * Copyright 2026 The saekit authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "saekit/tensor.hpp"

namespace saekit {

/// Labeled image set; pixels are reals in [0,1] before normalization.
struct Dataset {
  TensorF images;  // [N, 3, H, W]
  std::vector<int32_t> labels;
  int32_t class_count = 0;
  std::string name;

  int64_t size() const { return images.extent(0); }
};

namespace detail {

// CIFAR-10 binary record: 1 label byte + 3072 channel-planar pixel bytes.
inline constexpr int64_t kCifarRecord = 3073;

inline int64_t cifar_records(const std::filesystem::path& file) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(file, ec);
  if (ec) throw FormatError("cifar10: missing file '" + file.string() + "'");
  const int64_t sz = static_cast<int64_t>(size);
  if (sz % kCifarRecord != 0)
    throw FormatError("cifar10: truncated record in '" + file.string() +
                      "' at byte offset " +
                      std::to_string(sz - sz % kCifarRecord));
  return sz / kCifarRecord;
}

inline void load_cifar_file(const std::filesystem::path& file, int64_t count,
                            TensorF& images, std::vector<int32_t>& labels,
                            int64_t first_record) {
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw FormatError("cifar10: missing file '" + file.string() + "'");
  std::vector<unsigned char> record(kCifarRecord);
  for (int64_t r = 0; r < count; ++r) {
    if (!is.read(reinterpret_cast<char*>(record.data()), kCifarRecord)) {
      const int64_t got = is.gcount();
      throw FormatError("cifar10: truncated record in '" + file.string() +
                        "' at byte offset " + std::to_string(r * kCifarRecord + got));
    }
    const int32_t label = record[0];
    if (label > 9)
      throw FormatError("cifar10: label " + std::to_string(label) + " > 9 in '" +
                        file.string() + "' at byte offset " +
                        std::to_string(r * kCifarRecord));
    labels[static_cast<size_t>(first_record + r)] = label;
    float* dst = images.data() + (first_record + r) * 3072;
    for (int64_t i = 0; i < 3072; ++i)
      dst[i] = static_cast<float>(record[static_cast<size_t>(1 + i)]) / 255.0f;
  }
}

}  // namespace detail

/// Loads the standard CIFAR-10 binary batches (data_batch_1..5.bin +
/// test_batch.bin, 3073-byte records) in stored order, pixels scaled to
/// [0,1]. Record counts come from the file sizes; the stock files carry
/// 10,000 each.
inline std::pair<Dataset, Dataset> load_cifar10(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);

  std::vector<fs::path> train_files;
  for (int i = 0; i < 5; ++i)
    train_files.push_back(dir / ("data_batch_" + std::to_string(i + 1) + ".bin"));
  const fs::path test_file = dir / "test_batch.bin";

  int64_t train_n = 0;
  std::vector<int64_t> counts;
  for (const auto& f : train_files) {
    counts.push_back(detail::cifar_records(f));
    train_n += counts.back();
  }
  const int64_t test_n = detail::cifar_records(test_file);

  Dataset train, test;
  train.images = TensorF({train_n, 3, 32, 32});
  train.labels.resize(static_cast<size_t>(train_n));
  train.class_count = 10;
  train.name = "cifar10-train";
  int64_t first = 0;
  for (size_t i = 0; i < train_files.size(); ++i) {
    detail::load_cifar_file(train_files[i], counts[i], train.images,
                            train.labels, first);
    first += counts[i];
  }
  test.images = TensorF({test_n, 3, 32, 32});
  test.labels.resize(static_cast<size_t>(test_n));
  test.class_count = 10;
  test.name = "cifar10-test";
  detail::load_cifar_file(test_file, test_n, test.images, test.labels, 0);
  return {std::move(train), std::move(test)};
}

/// Bilinear resize with half-pixel centers (align_corners = false).
/// Constant images stay constant; the identity target is exact.
inline TensorF resize_bilinear(const TensorF& images, int64_t target_h,
                               int64_t target_w) {
  if (images.rank() != 4)
    throw ShapeError("resize_bilinear: expected [N,C,H,W], got " +
                     shape_str(images.shape()));
  if (target_h < 1 || target_w < 1)
    throw ContractError("resize_bilinear: target must be >= 1x1");
  const int64_t n = images.extent(0), c = images.extent(1);
  const int64_t h = images.extent(2), w = images.extent(3);
  TensorF out({n, c, target_h, target_w});
  const double sy = static_cast<double>(h) / static_cast<double>(target_h);
  const double sx = static_cast<double>(w) / static_cast<double>(target_w);
  for (int64_t p = 0; p < n * c; ++p) {
    const float* src = images.data() + p * h * w;
    float* dst = out.data() + p * target_h * target_w;
    for (int64_t oy = 0; oy < target_h; ++oy) {
      double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
      if (fy < 0) fy = 0;
      if (fy > static_cast<double>(h - 1)) fy = static_cast<double>(h - 1);
      const int64_t y0 = static_cast<int64_t>(fy);
      const int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (int64_t ox = 0; ox < target_w; ++ox) {
        double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
        if (fx < 0) fx = 0;
        if (fx > static_cast<double>(w - 1)) fx = static_cast<double>(w - 1);
        const int64_t x0 = static_cast<int64_t>(fx);
        const int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = (1.0 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
        const double bot = (1.0 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
        dst[oy * target_w + ox] = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

/// Per-channel (x - mean) / std.
inline TensorF normalize(const TensorF& images, const std::array<float, 3>& mean,
                         const std::array<float, 3>& stddev) {
  if (images.rank() != 4 || images.extent(1) != 3)
    throw ShapeError("normalize: expected [N,3,H,W], got " +
                     shape_str(images.shape()));
  for (float s : stddev)
    if (s == 0.0f) throw ConfigError("normalize: zero std");
  TensorF out(images.shape());
  const int64_t n = images.extent(0);
  const int64_t hw = images.extent(2) * images.extent(3);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ch = 0; ch < 3; ++ch) {
      const float* src = images.data() + (i * 3 + ch) * hw;
      float* dst = out.data() + (i * 3 + ch) * hw;
      const float m = mean[static_cast<size_t>(ch)];
      const float inv = 1.0f / stddev[static_cast<size_t>(ch)];
      for (int64_t j = 0; j < hw; ++j) dst[j] = (src[j] - m) * inv;
    }
  return out;
}

/// Synthetic separable dataset. Class c gets a deterministic base pattern:
/// well-separated per-channel means plus a seed-derived, zero-spatial-mean
/// texture, so GAP features equal the class means exactly on the noiseless
/// variant. Per-sample Gaussian noise (sigma) is added on top.
inline Dataset synthetic_blobs(int32_t classes, int64_t per_class, int64_t hw,
                               uint64_t seed, float sigma = 0.05f) {
  if (classes < 2) throw ConfigError("synthetic_blobs: classes must be >= 2");
  if (per_class < 1 || hw < 1)
    throw ConfigError("synthetic_blobs: per_class and hw must be >= 1");
  const int64_t n = static_cast<int64_t>(classes) * per_class;
  Dataset ds;
  ds.images = TensorF({n, 3, hw, hw});
  ds.labels.resize(static_cast<size_t>(n));
  ds.class_count = classes;
  ds.name = "blobs";

  // class channel means: distinct corners for <= 3 classes, a circle in
  // channel space beyond that
  auto channel_mean = [&](int32_t c, int64_t ch) -> double {
    if (classes <= 3) return c % 3 == ch ? 0.75 : 0.3;
    const double phase =
        6.283185307179586 * (static_cast<double>(c) / classes +
                             static_cast<double>(ch) / 3.0);
    return 0.5 + 0.22 * std::cos(phase);
  };

  const int64_t plane = hw * hw;
  std::vector<float> base(static_cast<size_t>(classes * 3 * plane));
  for (int32_t c = 0; c < classes; ++c) {
    Rng rng(seed_for(seed, "blob-base-" + std::to_string(c)));
    for (int64_t ch = 0; ch < 3; ++ch) {
      float* dst = base.data() + (c * 3 + ch) * plane;
      double acc = 0;
      for (int64_t j = 0; j < plane; ++j) {
        dst[j] = static_cast<float>(rng.uniform(-0.08, 0.08));
        acc += dst[j];
      }
      const float mu = static_cast<float>(channel_mean(c, ch));
      const float shift = static_cast<float>(acc / static_cast<double>(plane));
      for (int64_t j = 0; j < plane; ++j) dst[j] += mu - shift;
    }
  }

  Rng noise(seed_for(seed, "blob-noise"));
  int64_t i = 0;
  for (int32_t c = 0; c < classes; ++c)
    for (int64_t s = 0; s < per_class; ++s, ++i) {
      ds.labels[static_cast<size_t>(i)] = c;
      const float* src = base.data() + c * 3 * plane;
      float* dst = ds.images.data() + i * 3 * plane;
      for (int64_t j = 0; j < 3 * plane; ++j) {
        float v = src[j] + sigma * static_cast<float>(noise.normal());
        dst[j] = std::min(1.0f, std::max(0.0f, v));
      }
    }
  return ds;
}

// Generic dataset directory: images.f32le = magic "SAEDATA1" + N,C,H,W as
// u64 little-endian + float32 pixels; labels.u32le = raw u32 labels.
inline constexpr char kDataMagic[] = {'S', 'A', 'E', 'D', 'A', 'T', 'A', '1'};

inline void save_dataset_dir(const Dataset& ds, const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  {
    std::ofstream os(fs::path(directory) / "images.f32le", std::ios::binary);
    if (!os) throw FormatError("dataset: cannot write images.f32le");
    os.write(kDataMagic, sizeof(kDataMagic));
    const uint64_t dims[4] = {static_cast<uint64_t>(ds.images.extent(0)),
                              static_cast<uint64_t>(ds.images.extent(1)),
                              static_cast<uint64_t>(ds.images.extent(2)),
                              static_cast<uint64_t>(ds.images.extent(3))};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    os.write(reinterpret_cast<const char*>(ds.images.data()),
             static_cast<std::streamsize>(ds.images.size() * 4));
  }
  {
    std::ofstream os(fs::path(directory) / "labels.u32le", std::ios::binary);
    if (!os) throw FormatError("dataset: cannot write labels.u32le");
    for (int32_t l : ds.labels) {
      const uint32_t v = static_cast<uint32_t>(l);
      os.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
}

inline Dataset load_dataset_dir(const std::string& directory) {
  namespace fs = std::filesystem;
  Dataset ds;
  ds.name = directory;
  const fs::path images_file = fs::path(directory) / "images.f32le";
  std::ifstream is(images_file, std::ios::binary);
  if (!is) throw FormatError("dataset: missing '" + images_file.string() + "'");
  char magic[sizeof(kDataMagic)];
  if (!is.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kDataMagic, sizeof(magic)) != 0)
    throw FormatError("dataset '" + images_file.string() + "': bad magic");
  uint64_t dims[4];
  if (!is.read(reinterpret_cast<char*>(dims), sizeof(dims)))
    throw FormatError("dataset: truncated header in '" + images_file.string() + "'");
  ds.images = TensorF({static_cast<int64_t>(dims[0]), static_cast<int64_t>(dims[1]),
                       static_cast<int64_t>(dims[2]), static_cast<int64_t>(dims[3])});
  if (!is.read(reinterpret_cast<char*>(ds.images.data()),
               static_cast<std::streamsize>(ds.images.size() * 4)))
    throw FormatError("dataset: truncated pixels in '" + images_file.string() + "'");

  const fs::path labels_file = fs::path(directory) / "labels.u32le";
  std::ifstream ls(labels_file, std::ios::binary);
  if (!ls) throw FormatError("dataset: missing '" + labels_file.string() + "'");
  ds.labels.resize(static_cast<size_t>(dims[0]));
  for (auto& l : ds.labels) {
    uint32_t v = 0;
    if (!ls.read(reinterpret_cast<char*>(&v), 4))
      throw FormatError("dataset: truncated '" + labels_file.string() + "'");
    l = static_cast<int32_t>(v);
  }
  int32_t max_label = 0;
  for (int32_t l : ds.labels) max_label = std::max(max_label, l);
  ds.class_count = max_label + 1;
  return ds;
}

}  // namespace saekit
