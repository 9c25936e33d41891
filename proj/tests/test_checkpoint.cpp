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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "ctt/checkpoint.hpp"
#include "reference.hpp"

using namespace ctt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ctt_ckpt_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST_CASE("model and key survive a round trip bit for bit") {
  TempDir tmp;
  const Network net = ref::random_network(ModelSpec::lenet5(), 3);
  const TabooKey key = generate_key(net.spec, 0.01, 5, 0.25f);
  save_checkpoint(tmp.path / "m.ckpt", net, &key, {{"note", "test"}});
  const Checkpoint c = load_checkpoint(tmp.path / "m.ckpt");
  CHECK(c.net.spec == net.spec);
  CHECK(c.net.params == net.params);
  REQUIRE(c.key.has_value());
  CHECK(*c.key == key);
  CHECK(c.info["note"] == "test");

  Rng rng(1);
  const Tensor x = ref::random_input({1, 28, 28}, rng);
  CHECK(predict_logits(c.net, x) == predict_logits(net, x));
}

TEST_CASE("checkpoint without a key") {
  TempDir tmp;
  const Network net = ref::random_network(ModelSpec::tiny(), 4);
  save_checkpoint(tmp.path / "t.ckpt", net);
  const Checkpoint c = load_checkpoint(tmp.path / "t.ckpt");
  CHECK_FALSE(c.key.has_value());
  CHECK(c.net.params == net.params);
}

TEST_CASE("blob file keeps names, shapes and metadata") {
  TempDir tmp;
  BlobFile f;
  f.meta["kind"] = "test";
  f.tensors.emplace_back("a", Tensor({2, 3}, std::vector<float>{1, 2, 3, 4, 5, -6.5f}));
  f.tensors.emplace_back("b", Tensor({1}, std::vector<float>{1e-30f}));
  write_blob_file(tmp.path / "f.bin", f);
  const BlobFile r = read_blob_file(tmp.path / "f.bin");
  CHECK(r.meta["kind"] == "test");
  CHECK(r.get("a") == f.tensors[0].second);
  CHECK(r.get("b") == f.tensors[1].second);
  CHECK(r.has("a"));
  CHECK_FALSE(r.has("c"));
  CHECK_THROWS(r.get("c"));
}

TEST_CASE("bad magic and version are rejected") {
  TempDir tmp;
  const Network net = ref::random_network(ModelSpec::tiny(), 4);
  save_checkpoint(tmp.path / "t.ckpt", net);
  std::string bytes = slurp(tmp.path / "t.ckpt");

  std::string bad = bytes;
  bad[0] = 'X';
  dump(tmp.path / "bad", bad);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "bad"), FormatError);

  bad = bytes;
  bad[4] = 9;
  dump(tmp.path / "bad", bad);
  try {
    load_checkpoint(tmp.path / "bad");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
  CHECK_THROWS_WITH(load_checkpoint(tmp.path / "missing"), doctest::Contains("missing"));
}

TEST_CASE("truncated files report expected and actual byte counts") {
  TempDir tmp;
  const Network net = ref::random_network(ModelSpec::tiny(), 4);
  save_checkpoint(tmp.path / "t.ckpt", net);
  const std::string bytes = slurp(tmp.path / "t.ckpt");
  const std::size_t params = net.params.count() * sizeof(float);

  dump(tmp.path / "cut", bytes.substr(0, bytes.size() - 10));
  try {
    load_checkpoint(tmp.path / "cut");
    FAIL("expected TruncatedFileError");
  } catch (const TruncatedFileError& e) {
    CHECK(e.expected() == params);
    CHECK(e.actual() == params - 10);
  }

  dump(tmp.path / "cut", bytes.substr(0, 10));
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "cut"), TruncatedFileError);

  dump(tmp.path / "long", bytes + "xx");
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "long"), FormatError);
}

TEST_CASE("a manifest that disagrees with the model is rejected") {
  TempDir tmp;
  const Network net = ref::random_network(ModelSpec::tiny(), 4);
  save_checkpoint(tmp.path / "t.ckpt", net);
  BlobFile f = read_blob_file(tmp.path / "t.ckpt");
  f.tensors[0].second = Tensor({3});
  write_blob_file(tmp.path / "t2.ckpt", f);
  CHECK_THROWS(load_checkpoint(tmp.path / "t2.ckpt"));

  f = read_blob_file(tmp.path / "t.ckpt");
  f.meta["kind"] = "adversarial";
  write_blob_file(tmp.path / "t3.ckpt", f);
  CHECK_THROWS_AS(load_checkpoint(tmp.path / "t3.ckpt"), FormatError);
}

TEST_CASE("spec and key json helpers") {
  const ModelSpec spec = ModelSpec::lenet5();
  CHECK(model_spec_from_json(to_json(spec)) == spec);
  const TabooKey key = generate_key(spec, 0.05, 8);
  CHECK(taboo_key_from_json(to_json(key)) == key);
}
