/*
 * Copyright 2026 The paenet-cpp Authors
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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "paenet/io.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace paenet;

namespace {

PaenetConfig tiny_config(std::uint64_t seed = 3) {
  PaenetConfig c;
  c.input_depth = 8;
  c.stages = {{4, 2}, {4, 4}};
  c.depth2d = 2;
  c.base_channels = 4;
  c.seed = seed;
  return c;
}

MetricsReport two_sample_report() {
  MetricValues a, b;
  a.v = {0.8, 0.6, 0.9, 0.7, 0.75};
  b.v = {0.9, 0.8, 0.95, 0.85, 0.95};
  return MetricsReport({a, b});
}

}  // namespace

TEST_CASE("sha256") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("atomic file writes") {
  test::TempDir dir("io-files");
  const auto p = dir.path() / "x.bin";
  write_file_atomic(p, std::string("hello\0world", 11));
  CHECK(read_file(p) == std::string("hello\0world", 11));
  write_file_atomic(p, "second");
  CHECK(read_file(p) == "second");
  CHECK_FALSE(fs::exists(dir.path() / "x.bin.tmp"));
  CHECK_THROWS_AS(read_file(dir.path() / "missing"), DataError);
  CHECK_THROWS_AS(write_file_atomic(dir.path() / "no" / "such" / "dir", "x"), DataError);
}

TEST_CASE("volume container") {
  SUBCASE("1.0 encodes as 00 00 80 3F") {
    const std::string bytes = encode_volume(Tensor<float>(Shape{1, 1, 1, 1}, 1.0f), {"oct"});
    const std::string tail = bytes.substr(bytes.size() - 4);
    CHECK(tail == std::string("\x00\x00\x80\x3F", 4));
    CHECK(bytes.rfind("RVV1\n", 0) == 0);
  }
  SUBCASE("round trips") {
    test::TempDir dir("io-volume");
    SplitMix64 rng(4);
    auto v = oracle::random_tensor<float>(Shape{2, 5, 6, 7}, rng);
    v[3] = -0.0f;
    v[4] = std::numeric_limits<float>::denorm_min();
    v[5] = std::numeric_limits<float>::max();
    save_volume(dir.path() / "v.rvv", v);
    const auto f = load_volume(dir.path() / "v.rvv");
    CHECK(f.channels == std::vector<std::string>{"oct", "octa"});
    CHECK(f.data.shape() == v.shape());
    for (std::size_t i = 0; i < v.size(); ++i)
      REQUIRE(std::bit_cast<std::uint32_t>(f.data[i]) == std::bit_cast<std::uint32_t>(v[i]));
    // load then save reproduces the file byte for byte.
    save_volume(dir.path() / "w.rvv", f.data, f.channels);
    CHECK(read_file(dir.path() / "w.rvv") == read_file(dir.path() / "v.rvv"));
  }
  SUBCASE("malformed input") {
    const std::string good = encode_volume(Tensor<float>(Shape{2, 2, 3, 4}, 0.5f), {"oct", "octa"});
    CHECK_NOTHROW(decode_volume(good));
    CHECK_THROWS_AS(decode_volume("RVV2" + good.substr(4)), DataError);
    CHECK_THROWS_AS(decode_volume(good.substr(0, good.size() - 1)), DataError);
    CHECK_THROWS_AS(decode_volume(good + "x"), DataError);
    std::string dims = good;
    dims.replace(dims.find("dims 2 3 4"), 10, "dims 2 3 5");
    CHECK_THROWS_AS(decode_volume(dims), DataError);
    std::string zero = good;
    zero.replace(zero.find("dims 2 3 4"), 10, "dims 0 3 4");
    CHECK_THROWS_AS(decode_volume(zero), DataError);
    std::string dtype = good;
    dtype.replace(dtype.find("f32le"), 5, "f64le");
    CHECK_THROWS_AS(decode_volume(dtype), DataError);
    CHECK_THROWS_AS(decode_volume(""), DataError);
    CHECK_THROWS_AS(encode_volume(Tensor<float>(Shape{2, 2, 2, 2}), {"oct"}), ContractError);
  }
}

TEST_CASE("weights round trip") {
  test::TempDir dir("io-weights");
  Paenet net = build_paenet(tiny_config());
  // Move off the initial values so the check is not trivially satisfied by a rebuild.
  SplitMix64 rng(12);
  for (auto& e : net.params().entries())
    for (auto& v : e.value.data()) v += static_cast<float>(rng.uniform(-0.1, 0.1));
  SplitMix64 xr(1);
  const auto x = oracle::random_tensor<float>(Shape{2, 8, 8, 8}, xr, 0.0, 1.0);
  const auto before = paenet_forward(net, x);

  save_weights(dir.path() / "m.paew", net);
  const Paenet loaded = load_weights(dir.path() / "m.paew");
  CHECK(loaded.config() == net.config());
  CHECK(loaded.params() == net.params());
  CHECK(paenet_forward(loaded, x) == before);
  CHECK(encode_weights(loaded) == read_file(dir.path() / "m.paew"));

  // The entry table lists the manifest in order.
  const std::string bytes = read_file(dir.path() / "m.paew");
  const auto manifest = net.manifest();
  const std::string entries_line = "entries " + std::to_string(manifest.size()) + "\n";
  CHECK(bytes.find(entries_line) != std::string::npos);
  std::size_t pos = bytes.find(entries_line) + entries_line.size();
  std::size_t offset = 0;
  for (const auto& m : manifest) {
    const std::size_t end = bytes.find('\n', pos);
    std::string expect = m.name + (m.trainable ? " t " : " f ") + std::to_string(offset) + " " + std::to_string(m.shape.size());
    for (auto d : m.shape) expect += " " + std::to_string(d);
    CHECK(bytes.substr(pos, end - pos) == expect);
    offset += 4 * numel(m.shape);
    pos = end + 1;
  }
  CHECK(bytes.substr(pos, 4) == "end\n");
  CHECK(bytes.size() - pos - 4 == offset);

  Paenet same = build_paenet(tiny_config(99));
  load_weights_into(dir.path() / "m.paew", same);
  CHECK(same.params() == net.params());

  PaenetConfig wider = tiny_config();
  wider.base_channels = 6;
  Paenet other = build_paenet(wider);
  CHECK_THROWS_AS(load_weights_into(dir.path() / "m.paew", other), DataError);
  PaenetConfig no_psa = tiny_config();
  no_psa.toggles.psa = false;
  Paenet ablated = build_paenet(no_psa);
  CHECK_THROWS_AS(load_weights_into(dir.path() / "m.paew", ablated), DataError);

  // A shape edit in the table is caught.
  std::string edited = bytes;
  const auto first = manifest.front();
  const std::string row = first.name + " t 0 " + std::to_string(first.shape.size()) + " " + std::to_string(first.shape[0]);
  const std::size_t at = edited.find(row);
  REQUIRE(at != std::string::npos);
  edited.replace(at, row.size(), first.name + " t 0 " + std::to_string(first.shape.size()) + " " +
                                     std::to_string(first.shape[0] + 1));
  write_file_atomic(dir.path() / "bad.paew", edited);
  CHECK_THROWS_AS(load_weights(dir.path() / "bad.paew"), DataError);
  write_file_atomic(dir.path() / "trunc.paew", bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(load_weights(dir.path() / "trunc.paew"), DataError);
  write_file_atomic(dir.path() / "magic.paew", "PAEW2" + bytes.substr(5));
  CHECK_THROWS_AS(load_weights(dir.path() / "magic.paew"), DataError);
}

TEST_CASE("checkpoint round trip") {
  test::TempDir dir("io-ckpt");
  Paenet net = build_paenet(tiny_config());
  TrainConfig cfg;
  cfg.patch = {8, 8, 8};
  cfg.max_iters = 10;
  cfg.seed = 77;
  TrainState state = initial_train_state(cfg);
  state.iteration = 4;
  state.rng_state = 0x123456789abcdefULL;
  state.adam.step = 4;
  SplitMix64 rng(3);
  for (const auto& e : net.params().entries()) {
    if (!e.trainable) continue;
    state.adam.m.push_back(oracle::random_tensor<float>(e.value.shape(), rng));
    state.adam.v.push_back(oracle::random_tensor<float>(e.value.shape(), rng, 0.0, 1.0));
  }
  save_checkpoint(dir.path() / "c.paew", net, cfg, state);
  const Checkpoint c = load_checkpoint(dir.path() / "c.paew");
  CHECK(c.net.params() == net.params());
  CHECK(c.net.config() == net.config());
  CHECK(c.train == cfg);
  CHECK(c.state == state);

  TrainState fresh = initial_train_state(cfg);
  save_checkpoint(dir.path() / "f.paew", net, cfg, fresh);
  CHECK(load_checkpoint(dir.path() / "f.paew").state == fresh);

  save_weights(dir.path() / "w.paew", net);
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "w.paew"), DataError);
  // Checkpoints are also valid weight files for the parameters they hold.
  Paenet into = build_paenet(tiny_config(5));
  load_weights_into(dir.path() / "c.paew", into);
  CHECK(into.params() == net.params());
}

TEST_CASE("config json") {
  PaenetConfig c = tiny_config(42);
  c.toggles.qam = false;
  CHECK(config_from_json(config_to_json(c)) == c);
  TrainConfig t;
  t.batch = 3;
  t.patch = {16, 16, 64};
  t.checkpoint_every = 50;
  CHECK(train_config_from_json(train_config_to_json(t)) == t);

  CHECK(config_from_json(R"({"input_depth": 128})") == PaenetConfig::with_depth(128));
  CHECK(config_from_json("{}") == PaenetConfig{});
  CHECK_THROWS_AS(config_from_json("{"), DataError);
  CHECK_THROWS_AS(config_from_json(R"({"stages": [{"channels": "x"}]})"), DataError);
  CHECK_THROWS_AS(train_config_from_json(R"({"loss": "dice"})"), DataError);

  test::TempDir dir("io-config");
  write_file_atomic(dir.path() / "run.json", R"({"network": {"toggles": {"psa": false}}, "train": {"max_iters": 100}})");
  const RunConfig r = load_run_config(dir.path() / "run.json");
  CHECK_FALSE(r.network.toggles.psa);
  CHECK(r.network.toggles.apm);
  CHECK(r.train.max_iters == 100);
  CHECK(r.train.lr0 == 3e-4);
  write_file_atomic(dir.path() / "bad.json", "[1, 2]");
  CHECK_THROWS_AS(load_run_config(dir.path() / "bad.json"), DataError);
}

TEST_CASE("P5 images") {
  Tensor<float> map(Shape{2, 3}, std::vector<float>{0.0f, 0.5f, 1.0f, 0.25f, 0.001f, 0.999f});
  const std::string bytes = encode_prob_pgm(map);
  CHECK(bytes.rfind("P5\n3 2\n255\n", 0) == 0);
  const auto img = decode_pgm(bytes);
  CHECK(img.shape() == Shape{2, 3});
  CHECK(img[0] == 0);
  CHECK(img[1] == 128);
  CHECK(img[2] == 255);
  CHECK(img[3] == 64);
  CHECK(img[4] == 0);
  CHECK(img[5] == 255);
  CHECK_THROWS_AS(encode_prob_pgm(Tensor<float>(Shape{1, 1}, 1.5f)), ContractError);

  test::TempDir dir("io-p5");
  BinaryMask m(Shape{4, 5});
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 3 == 0;
  write_mask(dir.path() / "m.pgm", m);
  CHECK(read_mask(dir.path() / "m.pgm") == m);
  write_prob_map(dir.path() / "p.pgm", map);
  const auto back = read_prob_map(dir.path() / "p.pgm");
  CHECK(back.at({0, 1}) == 128.0f / 255.0f);
  CHECK(back.at({0, 2}) == 1.0f);

  // Header comments and arbitrary whitespace are accepted.
  CHECK(decode_pgm("P5 # c\n2\t1 255\n\x01\x02").shape() == Shape{1, 2});
  CHECK_THROWS_AS(decode_pgm("P2\n1 1\n255\n1"), DataError);
  CHECK_THROWS_AS(decode_pgm("P5\n2 2\n255\nabc"), DataError);
  CHECK_THROWS_AS(decode_pgm("P5\n1 1\n65535\nab"), DataError);
  write_file_atomic(dir.path() / "grey.pgm", encode_prob_pgm(Tensor<float>(Shape{1, 1}, 0.5f)));
  CHECK_THROWS_AS(read_mask(dir.path() / "grey.pgm"), DataError);
}

TEST_CASE("report") {
  const MetricsReport report = two_sample_report();
  const std::string text = encode_report(report, {{"s0", "s1"}, 0.5, "toy"});
  const auto j = nlohmann::ordered_json::parse(text);
  std::vector<std::string> order;
  for (const auto& [k, v] : j.at("metrics").items()) order.push_back(k);
  CHECK(order == std::vector<std::string>{"dice", "jac", "bacc", "pre", "rec"});
  CHECK(j["metrics"]["dice"]["mean"].get<double>() == doctest::Approx(0.85).epsilon(1e-12));
  CHECK(j["metrics"]["dice"]["sd"].get<double>() == doctest::Approx(0.0707).epsilon(1e-3));
  CHECK(j["metrics"]["dice"]["values"] == nlohmann::json::array({0.8, 0.9}));
  CHECK(j["samples"] == 2);
  CHECK(j["labels"] == nlohmann::json::array({"s0", "s1"}));
  CHECK(encode_report(report, {{"s0", "s1"}, 0.5, "toy"}) == text);

  const MetricsReport back = decode_report(text);
  CHECK(encode_report(back, {{"s0", "s1"}, 0.5, "toy"}) == text);

  std::string tampered = text;
  tampered.replace(tampered.find("0.85"), 4, "0.86");
  CHECK_THROWS_AS(decode_report(tampered), DataError);
  auto reordered = j;
  reordered["metrics"] = nlohmann::ordered_json::object();
  for (const char* k : {"jac", "dice", "bacc", "pre", "rec"}) reordered["metrics"][k] = j["metrics"][k];
  CHECK_THROWS_AS(decode_report(reordered.dump()), DataError);
  CHECK_THROWS_AS(decode_report("not json"), DataError);
  CHECK_THROWS_AS(encode_report(report, {{"only-one"}, 0.5, ""}), ContractError);
  CHECK_THROWS_AS(MetricsReport(std::vector<MetricValues>{}), ContractError);
}

TEST_CASE("dataset hash verification") {
  test::TempDir dir("io-dataset");
  SynthSpec spec;
  spec.dims = {8, 8, 8};
  const auto entries = gen_dataset(spec, SplitCounts{2, 1, 1}, dir.path());
  CHECK(load_split(dir.path(), "train").size() == 2);
  std::string bytes = read_file(dir.path() / entries[0].volume);
  bytes[bytes.size() - 1] ^= 1;
  write_file_atomic(dir.path() / entries[0].volume, bytes);
  CHECK_THROWS_AS(load_split(dir.path(), "train"), DataError);
  CHECK_THROWS_AS(load_split(dir.path(), "nope"), DataError);
  CHECK_THROWS_AS(read_dataset_manifest(dir.path() / "missing"), DataError);
}
