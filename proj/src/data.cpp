/* Copyright 2026 The CTT Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "ctt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "ctt/rng.hpp"

namespace ctt {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": header truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void check_payload(const std::filesystem::path& path, std::size_t have, std::size_t header, std::size_t need) {
  if (have - header != need) {
    throw FormatError(path.string() + ": payload holds " + std::to_string(have - header) +
                      " bytes but the header declares " + std::to_string(need));
  }
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.split = split;
  out.source = source;
  Shape shape = images.shape();
  shape[0] = indices.size();
  if (indices.empty()) return out;
  const std::size_t stride = shape_size(image_shape());
  std::vector<float> values(indices.size() * stride);
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw std::out_of_range("subset index " + std::to_string(indices[i]) + " out of range");
    std::memcpy(values.data() + i * stride, images.data() + indices[i] * stride, stride * sizeof(float));
    out.labels.push_back(labels[indices[i]]);
  }
  out.images = Tensor(std::move(shape), std::move(values));
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);

  const std::uint32_t image_magic = read_be32(image_bytes, 0, images_path);
  if (image_magic != kImageMagic) {
    throw FormatError(images_path.string() + ": bad magic " + std::to_string(image_magic) + ", expected 0x00000803");
  }
  const std::uint32_t label_magic = read_be32(label_bytes, 0, labels_path);
  if (label_magic != kLabelMagic) {
    throw FormatError(labels_path.string() + ": bad magic " + std::to_string(label_magic) + ", expected 0x00000801");
  }
  const std::size_t count = read_be32(image_bytes, 4, images_path);
  const std::size_t rows = read_be32(image_bytes, 8, images_path);
  const std::size_t cols = read_be32(image_bytes, 12, images_path);
  const std::size_t label_count = read_be32(label_bytes, 4, labels_path);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(images_path.string() + ": empty dimension in header");
  check_payload(images_path, image_bytes.size(), 16, count * rows * cols);
  check_payload(labels_path, label_bytes.size(), 8, label_count);
  if (label_count != count) {
    throw FormatError("image/label count mismatch: " + std::to_string(count) + " images vs " +
                      std::to_string(label_count) + " labels");
  }

  Dataset data;
  data.source = images_path.string();
  std::vector<float> pixels(count * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(image_bytes[16 + i]) / 255.0f;
  data.images = Tensor({count, 1, rows, cols}, std::move(pixels));
  data.labels.resize(count);
  std::uint32_t max_label = 0;
  for (std::size_t i = 0; i < count; ++i) {
    data.labels[i] = label_bytes[8 + i];
    max_label = std::max(max_label, data.labels[i]);
  }
  data.num_classes = std::max<std::size_t>(10, max_label + 1);
  return data;
}

std::optional<std::filesystem::path> resolve_data_dir(const std::string& dir) {
  if (!dir.empty()) return std::filesystem::path(dir);
  if (const char* env = std::getenv("CTT_DATA_DIR"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env);
  }
  return std::nullopt;
}

Dataset load_split(const std::filesystem::path& dir, bool train, const IdxFiles& files) {
  Dataset d = train ? load_idx(dir / files.train_images, dir / files.train_labels)
                    : load_idx(dir / files.test_images, dir / files.test_labels);
  d.split = train ? "train" : "test";
  return d;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : data_(data), batch_size_(batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (shuffle) {
    Rng rng(seed);
    order_ = rng.permutation(data.size());
  } else {
    order_.resize(data.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  }
}

std::size_t BatchIterator::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

Batch BatchIterator::next() {
  if (done()) throw std::out_of_range("batch iterator exhausted");
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_), order_.begin() + static_cast<std::ptrdiff_t>(end));
  Dataset part = data_.subset(b.indices);
  b.images = std::move(part.images);
  b.labels = std::move(part.labels);
  cursor_ = end;
  return b;
}

BatchIterator make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  return BatchIterator(data, batch_size, seed, shuffle);
}

Dataset synthetic_fixture(FixtureKind kind, std::size_t n, std::uint64_t seed, std::size_t height,
                          std::size_t width) {
  if (n == 0) throw std::invalid_argument("synthetic_fixture: n must be >= 1");
  Rng rng(seed);
  const std::size_t pixels = height * width;
  std::vector<float> values(n * pixels);
  std::vector<std::uint32_t> labels(n);
  Dataset d;
  d.split = "train";
  switch (kind) {
    case FixtureKind::separable: {
      // Class 0 is bright on the left half, class 1 on the right half.
      d.source = "fixture:separable";
      for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<std::uint32_t>(i % 2);
        for (std::size_t y = 0; y < height; ++y) {
          for (std::size_t x = 0; x < width; ++x) {
            const bool left = x < width / 2;
            const double mean = (left == (labels[i] == 0)) ? 0.7 : 0.3;
            const double v = mean + 0.1 * rng.normal();
            values[i * pixels + y * width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
          }
        }
      }
      break;
    }
    case FixtureKind::constant: {
      d.source = "fixture:constant";
      std::vector<float> image(pixels);
      for (float& v : image) v = static_cast<float>(rng.uniform());
      for (std::size_t i = 0; i < n; ++i) {
        std::copy(image.begin(), image.end(), values.begin() + static_cast<std::ptrdiff_t>(i * pixels));
        labels[i] = 0;
      }
      break;
    }
    case FixtureKind::corner: {
      d.source = "fixture:corner";
      for (std::size_t i = 0; i < n; ++i) {
        const float v = (i % 2 == 0) ? 0.0f : 1.0f;
        std::fill(values.begin() + static_cast<std::ptrdiff_t>(i * pixels),
                  values.begin() + static_cast<std::ptrdiff_t>((i + 1) * pixels), v);
        labels[i] = static_cast<std::uint32_t>(i % 2);
      }
      break;
    }
  }
  d.images = Tensor({n, 1, height, width}, std::move(values));
  d.labels = std::move(labels);
  d.num_classes = 2;
  return d;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  const Shape s = data.image_shape();
  if (s.size() != 3 || s[0] != 1) throw DimensionError("write_idx: expects single-channel [N,1,H,W] images");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img || !lab) throw FormatError("cannot write " + images_path.string() + " / " + labels_path.string());
  put_be32(img, kImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(s[1]));
  put_be32(img, static_cast<std::uint32_t>(s[2]));
  for (float v : data.images.values()) {
    const auto b = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    img.put(static_cast<char>(b));
  }
  put_be32(lab, kLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (std::uint32_t l : data.labels) lab.put(static_cast<char>(l));
}

}  // namespace ctt
