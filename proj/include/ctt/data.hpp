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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctt/tensor.hpp"

namespace ctt {

class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Images are [N,C,H,W] with every pixel in [0,1]; labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 10;
  std::string split;   // "train" / "test" / fixture name
  std::string source;  // file path or fixture description

  std::size_t size() const { return labels.size(); }
  Shape image_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }
  Tensor image(std::size_t i) const { return images.slice(i); }

  // Copy of the samples at `indices`, in that order.
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

// Parses an IDX3 image file and its IDX1 label file (big-endian headers,
// unsigned-byte payload scaled by 1/255).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct IdxFiles {
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string test_images = "t10k-images-idx3-ubyte";
  std::string test_labels = "t10k-labels-idx1-ubyte";
};

// Resolves `dir`, falling back to $CTT_DATA_DIR. Returns nullopt if neither is set.
std::optional<std::filesystem::path> resolve_data_dir(const std::string& dir);

Dataset load_split(const std::filesystem::path& dir, bool train, const IdxFiles& files = {});

struct Batch {
  Tensor images;  // [B,C,H,W]
  std::vector<std::uint32_t> labels;
  std::vector<std::size_t> indices;  // dataset row of each sample
};

// One epoch of batches covering every sample exactly once. The final batch
// may be short.
class BatchIterator {
 public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  bool done() const { return cursor_ >= order_.size(); }
  Batch next();
  std::size_t batch_count() const;

 private:
  const Dataset& data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

BatchIterator make_batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, bool shuffle);

enum class FixtureKind { separable, constant, corner };

// Small deterministic datasets for oracle tests:
//  separable: two Gaussian blobs (labels 0/1) around distinct mean images
//  constant:  n identical images
//  corner:    alternating all-0 / all-1 images
Dataset synthetic_fixture(FixtureKind kind, std::size_t n, std::uint64_t seed, std::size_t height = 28,
                          std::size_t width = 28);

// Writes an IDX pair; used by tests and by tools that export subsets.
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

}  // namespace ctt
