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

// CTTM container: "CTTM", u32 LE version, u64 LE header length, JSON header,
// then raw LE float32 blobs in manifest order.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ctt/data.hpp"
#include "ctt/model.hpp"
#include "ctt/taboo.hpp"

namespace ctt {

inline constexpr std::uint32_t kContainerVersion = 1;

class TruncatedFileError : public FormatError {
 public:
  TruncatedFileError(const std::string& what, std::uint64_t expected, std::uint64_t actual)
      : FormatError(what), expected_(expected), actual_(actual) {}
  std::uint64_t expected() const { return expected_; }
  std::uint64_t actual() const { return actual_; }

 private:
  std::uint64_t expected_;
  std::uint64_t actual_;
};

struct BlobFile {
  nlohmann::json meta = nlohmann::json::object();  // everything in the header except the manifest
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_blob_file(const std::filesystem::path& path, const BlobFile& file);
BlobFile read_blob_file(const std::filesystem::path& path);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TabooKey& key);
TabooKey taboo_key_from_json(const nlohmann::json& j);

struct Checkpoint {
  Network net;
  std::optional<TabooKey> key;
  nlohmann::json info = nlohmann::json::object();  // free-form provenance
};

void save_checkpoint(const std::filesystem::path& path, const Network& net, const TabooKey* key = nullptr,
                     const nlohmann::json& info = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ctt
