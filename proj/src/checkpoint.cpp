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

#include "ctt/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ctt {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'T', 'M'};

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

void put_floats(std::string& out, const Tensor& t) {
  for (float f : t.values()) put_le(out, std::bit_cast<std::uint32_t>(f));
}

std::string path_str(const std::filesystem::path& p) { return p.string(); }

const char* kind_name(LayerKind k) { return layer_kind_name(k); }

LayerKind kind_from(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::relu, LayerKind::maxpool, LayerKind::fc}) {
    if (s == layer_kind_name(k)) return k;
  }
  throw FormatError("unknown layer kind '" + s + "'");
}

}  // namespace

const Tensor& BlobFile::get(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw FormatError("no tensor named '" + name + "' in file");
}

bool BlobFile::has(const std::string& name) const {
  for (const auto& entry : tensors) {
    if (entry.first == name) return true;
  }
  return false;
}

void write_blob_file(const std::filesystem::path& path, const BlobFile& file) {
  nlohmann::json header = file.meta;
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : file.tensors) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(t.size()) * 4;
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  header["tensors"] = manifest;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& entry : file.tensors) put_floats(out, entry.second);

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path_str(path) + " for writing");
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("write failed for " + path_str(path));
}

BlobFile read_blob_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path_str(path));
  const std::string raw((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::string where = path_str(path) + ": ";

  if (raw.size() < 16) {
    throw TruncatedFileError(where + "file holds " + std::to_string(raw.size()) + " bytes, preamble needs 16", 16,
                             raw.size());
  }
  if (std::memcmp(raw.data(), kMagic, 4) != 0) throw FormatError(where + "bad magic, expected CTTM");
  const auto version = get_le<std::uint32_t>(p + 4);
  if (version != kContainerVersion) {
    throw FormatError(where + "unsupported version " + std::to_string(version) + " (reader supports " +
                      std::to_string(kContainerVersion) + ")");
  }
  const auto header_len = get_le<std::uint64_t>(p + 8);
  if (raw.size() - 16 < header_len) {
    throw TruncatedFileError(where + "header needs " + std::to_string(header_len) + " bytes, file has " +
                                 std::to_string(raw.size() - 16),
                             16 + header_len, raw.size());
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + "unreadable header: " + e.what());
  }
  if (!header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError(where + "header has no tensor manifest");
  }

  BlobFile file;
  const std::uint64_t data_start = 16 + header_len;
  const std::uint64_t available = raw.size() - data_start;
  std::uint64_t expected = 0;
  for (const auto& entry : header["tensors"]) {
    const Shape shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::uint64_t>();
    const auto bytes = entry.at("bytes").get<std::uint64_t>();
    const std::string name = entry.at("name").get<std::string>();
    if (offset != expected || bytes != shape_size(shape) * 4) {
      throw FormatError(where + "manifest entry '" + name + "' disagrees with its shape " + shape_string(shape) +
                        " or position (offset " + std::to_string(offset) + ", bytes " + std::to_string(bytes) + ")");
    }
    expected += bytes;
  }
  if (available < expected) {
    throw TruncatedFileError(where + "truncated: manifest expects " + std::to_string(expected) +
                                 " bytes of tensor data, found " + std::to_string(available),
                             expected, available);
  }
  if (available > expected) {
    throw FormatError(where + "manifest describes " + std::to_string(expected) + " bytes of tensor data but file holds " +
                      std::to_string(available));
  }
  for (const auto& entry : header["tensors"]) {
    Tensor t(entry.at("shape").get<Shape>());
    const unsigned char* src = p + data_start + entry.at("offset").get<std::uint64_t>();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_le<std::uint32_t>(src + 4 * i));
    file.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  header.erase("tensors");
  file.meta = std::move(header);
  return file;
}

nlohmann::json to_json(const ModelSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", kind_name(l.kind)},
                      {"in", l.in_size},
                      {"out", l.out_size},
                      {"kernel", l.kernel},
                      {"stride", l.stride},
                      {"padding", l.padding}});
  }
  return {{"name", spec.name}, {"input_shape", spec.input_shape}, {"layers", layers}};
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.name = j.at("name").get<std::string>();
    spec.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& l : j.at("layers")) {
      LayerSpec ls;
      ls.kind = kind_from(l.at("kind").get<std::string>());
      ls.in_size = l.at("in").get<std::size_t>();
      ls.out_size = l.at("out").get<std::size_t>();
      ls.kernel = l.at("kernel").get<std::size_t>();
      ls.stride = l.at("stride").get<std::size_t>();
      ls.padding = l.at("padding").get<std::size_t>();
      spec.layers.push_back(ls);
    }
    spec.output_shapes();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model spec: ") + e.what());
  }
}

nlohmann::json to_json(const TabooKey& key) {
  return {{"masks", key.masks}, {"thresholds", key.thresholds}, {"beta", key.density}, {"seed", key.seed}};
}

TabooKey taboo_key_from_json(const nlohmann::json& j) {
  try {
    TabooKey key;
    key.masks = j.at("masks").get<std::vector<std::vector<std::uint32_t>>>();
    key.thresholds = j.at("thresholds").get<std::vector<float>>();
    key.density = j.at("beta").get<double>();
    key.seed = j.at("seed").get<std::uint64_t>();
    return key;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed taboo key: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const TabooKey* key,
                     const nlohmann::json& info) {
  net.params.check(net.spec);
  BlobFile file;
  file.meta["kind"] = "model";
  file.meta["spec"] = to_json(net.spec);
  file.meta["param_seed"] = net.params.seed;
  file.meta["info"] = info;
  if (key != nullptr) {
    key->check(net.spec);
    file.meta["key"] = to_json(*key);
  }
  for (std::size_t l = 0; l < net.spec.layers.size(); ++l) {
    if (!net.spec.layers[l].has_parameters()) continue;
    file.tensors.emplace_back("layer" + std::to_string(l) + ".weight", net.params.weights[l]);
    file.tensors.emplace_back("layer" + std::to_string(l) + ".bias", net.params.biases[l]);
  }
  write_blob_file(path, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const BlobFile file = read_blob_file(path);
  if (file.meta.value("kind", "") != "model") {
    throw FormatError(path_str(path) + ": not a model checkpoint");
  }
  Checkpoint ck;
  ck.net.spec = model_spec_from_json(file.meta.at("spec"));
  ck.net.params.seed = file.meta.value("param_seed", std::uint64_t{0});
  const std::size_t n = ck.net.spec.layers.size();
  ck.net.params.weights.assign(n, Tensor());
  ck.net.params.biases.assign(n, Tensor());
  for (std::size_t l = 0; l < n; ++l) {
    if (!ck.net.spec.layers[l].has_parameters()) continue;
    ck.net.params.weights[l] = file.get("layer" + std::to_string(l) + ".weight");
    ck.net.params.biases[l] = file.get("layer" + std::to_string(l) + ".bias");
  }
  try {
    ck.net.params.check(ck.net.spec);
  } catch (const std::exception& e) {
    throw FormatError(path_str(path) + ": parameters disagree with model spec: " + e.what());
  }
  if (file.meta.contains("key")) {
    ck.key = taboo_key_from_json(file.meta["key"]);
    ck.key->check(ck.net.spec);
  }
  if (file.meta.contains("info")) ck.info = file.meta["info"];
  return ck;
}

}  // namespace ctt
