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

#include "paenet/io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

namespace paenet {

using json = nlohmann::ordered_json;

// --- files ---------------------------------------------------------------------

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw DataError("error reading " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("error writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw DataError("cannot move " + tmp.string() + " into place: " + ec.message());
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw DataError("sha256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

namespace {

// --- little-endian reals ---------------------------------------------------------

void append_f32(std::string& out, std::span<const float> values) {
  const std::size_t base = out.size();
  out.resize(base + 4 * values.size());
  char* p = out.data() + base;
  for (float v : values) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    for (int b = 0; b < 4; ++b) *p++ = static_cast<char>((u >> (8 * b)) & 0xFF);
  }
}

void read_f32(std::string_view bytes, std::span<float> out) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (float& v : out) {
    const std::uint32_t u = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                            std::uint32_t(p[3]) << 24;
    v = std::bit_cast<float>(u);
    p += 4;
  }
}

// --- line-oriented headers ---------------------------------------------------------

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string line() {
    const std::size_t end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) throw DataError(what_ + ": truncated header");
    std::string s(bytes_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return s;
  }

  /// "key rest" with the key checked.
  std::string field(std::string_view key) {
    const std::string s = line();
    if (s.size() <= key.size() || s.compare(0, key.size(), key) != 0 || s[key.size()] != ' ')
      throw DataError(what_ + ": expected header field '" + std::string(key) + "'");
    return s.substr(key.size() + 1);
  }

  std::string_view rest() const { return bytes_.substr(pos_); }

 private:
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::string> split_words(const std::string& s, char sep = ' ') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

std::size_t parse_extent(const std::string& s, const std::string& what) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    throw DataError(what + ": bad integer '" + s + "'");
  }
  if (pos != s.size()) throw DataError(what + ": bad integer '" + s + "'");
  return static_cast<std::size_t>(v);
}

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(what + ": invalid JSON (" + e.what() + ")");
  }
}

template <typename F>
auto json_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace

// --- volumes -------------------------------------------------------------------

std::string encode_volume(const Tensor<float>& data, const std::vector<std::string>& channels) {
  require(data.rank() == 4, "encode_volume: data must be (C,L,W,H)");
  require(channels.size() == data.extent(0), "encode_volume: one channel name per channel");
  std::string out = "RVV1\n";
  out += "dims " + std::to_string(data.extent(1)) + " " + std::to_string(data.extent(2)) + " " +
         std::to_string(data.extent(3)) + "\n";
  out += "channels ";
  for (std::size_t c = 0; c < channels.size(); ++c) {
    require(!channels[c].empty() && channels[c].find_first_of(", \n") == std::string::npos,
            "encode_volume: invalid channel name");
    out += (c ? "," : "") + channels[c];
  }
  out += "\ndtype f32le\naxes C,L,W,H\nend\n";
  append_f32(out, data.data());
  return out;
}

VolumeFile decode_volume(std::string_view bytes) {
  HeaderReader h(bytes, "volume");
  if (h.line() != "RVV1") throw DataError("volume: bad magic (expected RVV1)");
  const auto dims = split_words(h.field("dims"));
  if (dims.size() != 3) throw DataError("volume: dims needs three extents");
  VolumeFile f;
  f.channels = split_words(h.field("channels"), ',');
  if (f.channels.empty()) throw DataError("volume: no channels");
  if (h.field("dtype") != "f32le") throw DataError("volume: unsupported dtype");
  if (h.field("axes") != "C,L,W,H") throw DataError("volume: unsupported axis order");
  if (h.line() != "end") throw DataError("volume: missing header terminator");
  Shape shape{f.channels.size()};
  for (const auto& d : dims) {
    const std::size_t e = parse_extent(d, "volume");
    if (e == 0) throw DataError("volume: zero extent");
    shape.push_back(e);
  }
  const std::size_t n = numel(shape);
  const std::string_view payload = h.rest();
  if (payload.size() != 4 * n)
    throw DataError("volume: payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                    std::to_string(4 * n));
  f.data = Tensor<float>(shape);
  read_f32(payload, f.data.data());
  return f;
}

void save_volume(const fs::path& path, const Tensor<float>& data, const std::vector<std::string>& channels) {
  write_file_atomic(path, encode_volume(data, channels));
}

VolumeFile load_volume(const fs::path& path) {
  return decode_volume(read_file(path));
}

// --- configs -------------------------------------------------------------------

namespace {

json config_json(const PaenetConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back({{"channels", s.channels}, {"group_factor", s.group_factor}});
  return {{"input_channels", c.input_channels},
          {"input_depth", c.input_depth},
          {"stages", stages},
          {"toggles", {{"apm", c.toggles.apm}, {"qam", c.toggles.qam}, {"ffm", c.toggles.ffm}, {"psa", c.toggles.psa}}},
          {"depth2d", c.depth2d},
          {"base_channels", c.base_channels},
          {"seed", c.seed}};
}

PaenetConfig config_of(const json& j) {
  return json_guard("network config", [&] {
    PaenetConfig c;
    if (j.contains("input_depth") && !j.contains("stages")) c = PaenetConfig::with_depth(j.at("input_depth"));
    c.input_channels = j.value("input_channels", c.input_channels);
    c.input_depth = j.value("input_depth", c.input_depth);
    if (j.contains("stages")) {
      c.stages.clear();
      for (const auto& s : j.at("stages")) c.stages.push_back({s.at("channels"), s.at("group_factor")});
    }
    if (j.contains("toggles")) {
      const auto& t = j.at("toggles");
      c.toggles.apm = t.value("apm", c.toggles.apm);
      c.toggles.qam = t.value("qam", c.toggles.qam);
      c.toggles.ffm = t.value("ffm", c.toggles.ffm);
      c.toggles.psa = t.value("psa", c.toggles.psa);
    }
    c.depth2d = j.value("depth2d", c.depth2d);
    c.base_channels = j.value("base_channels", c.base_channels);
    c.seed = j.value("seed", c.seed);
    return c;
  });
}

json train_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"power", c.power},
          {"batch", c.batch},
          {"max_iters", c.max_iters},
          {"patch", c.patch},
          {"loss", "bce"},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_of(const json& j) {
  return json_guard("train config", [&] {
    TrainConfig c;
    c.lr0 = j.value("lr0", c.lr0);
    c.power = j.value("power", c.power);
    c.batch = j.value("batch", c.batch);
    c.max_iters = j.value("max_iters", c.max_iters);
    if (j.contains("patch")) c.patch = j.at("patch").get<Dims3>();
    if (j.value("loss", std::string("bce")) != "bce") throw DataError("train config: unknown loss");
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    return c;
  });
}

}  // namespace

std::string config_to_json(const PaenetConfig& c) {
  return config_json(c).dump();
}

PaenetConfig config_from_json(std::string_view text) {
  return config_of(parse_json(text, "network config"));
}

std::string train_config_to_json(const TrainConfig& c) {
  return train_json(c).dump();
}

TrainConfig train_config_from_json(std::string_view text) {
  return train_of(parse_json(text, "train config"));
}

RunConfig load_run_config(const fs::path& path) {
  const json j = parse_json(read_file(path), path.string());
  if (!j.is_object()) throw DataError(path.string() + ": expected a JSON object");
  RunConfig r;
  if (j.contains("network")) r.network = config_of(j.at("network"));
  if (j.contains("train")) r.train = train_of(j.at("train"));
  return r;
}

// --- tensor archive --------------------------------------------------------------

namespace {

struct ArchiveEntry {
  std::string name;
  bool trainable = true;
  Tensor<float> value;
};

struct Archive {
  json header;
  std::vector<ArchiveEntry> entries;
};

std::string encode_archive(const json& header, const std::vector<const ArchiveEntry*>& entries) {
  std::string out = "PAEW1\nheader " + header.dump() + "\nentries " + std::to_string(entries.size()) + "\n";
  std::size_t offset = 0;
  for (const auto* e : entries) {
    require(!e->name.empty() && e->name.find_first_of(" \n") == std::string::npos, "archive: invalid entry name");
    out += e->name + (e->trainable ? " t " : " f ") + std::to_string(offset) + " " + std::to_string(e->value.rank());
    for (std::size_t d : e->value.shape()) out += " " + std::to_string(d);
    out += "\n";
    offset += 4 * e->value.size();
  }
  out += "end\n";
  for (const auto* e : entries) append_f32(out, e->value.data());
  return out;
}

Archive decode_archive(std::string_view bytes, const std::string& what) {
  HeaderReader h(bytes, what);
  if (h.line() != "PAEW1") throw DataError(what + ": bad magic (expected PAEW1)");
  Archive a;
  a.header = parse_json(h.field("header"), what);
  const std::size_t n = parse_extent(h.field("entries"), what);
  std::vector<std::pair<std::size_t, Shape>> layout;
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = split_words(h.line());
    if (w.size() < 4) throw DataError(what + ": malformed entry line");
    const std::size_t offset = parse_extent(w[2], what);
    const std::size_t rank = parse_extent(w[3], what);
    if (w[1] != "t" && w[1] != "f") throw DataError(what + ": malformed trainable flag");
    if (rank < 1 || rank > kMaxRank || w.size() != 4 + rank) throw DataError(what + ": malformed shape");
    Shape shape;
    for (std::size_t r = 0; r < rank; ++r) {
      shape.push_back(parse_extent(w[4 + r], what));
      if (shape.back() == 0) throw DataError(what + ": zero extent");
    }
    if (offset != expected_offset) throw DataError(what + ": entry offsets are not contiguous");
    expected_offset += 4 * numel(shape);
    a.entries.push_back({w[0], w[1] == "t", {}});
    layout.emplace_back(offset, std::move(shape));
  }
  if (h.line() != "end") throw DataError(what + ": missing header terminator");
  const std::string_view payload = h.rest();
  if (payload.size() != expected_offset)
    throw DataError(what + ": payload has " + std::to_string(payload.size()) + " bytes, table implies " +
                    std::to_string(expected_offset));
  for (std::size_t i = 0; i < n; ++i) {
    a.entries[i].value = Tensor<float>(layout[i].second);
    read_f32(payload.substr(layout[i].first), a.entries[i].value.data());
  }
  return a;
}

std::vector<const ArchiveEntry*> views(const std::vector<ArchiveEntry>& entries) {
  std::vector<const ArchiveEntry*> v;
  for (const auto& e : entries) v.push_back(&e);
  return v;
}

std::vector<ArchiveEntry> param_entries(const Paenet& net) {
  std::vector<ArchiveEntry> out;
  for (const auto& e : net.params().entries()) out.push_back({e.name, e.trainable, e.value});
  return out;
}

/// Copies the leading parameter entries of an archive into `net`, checking the
/// manifest; returns the number of entries consumed.
std::size_t restore_params(const Archive& a, Paenet& net, const std::string& what) {
  auto& entries = net.params().entries();
  if (a.entries.size() < entries.size())
    throw DataError(what + ": has " + std::to_string(a.entries.size()) + " entries, network needs " +
                    std::to_string(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& src = a.entries[i];
    if (src.name != entries[i].name || src.value.shape() != entries[i].value.shape() ||
        src.trainable != entries[i].trainable)
      throw DataError(what + ": entry " + std::to_string(i) + " is '" + src.name + "' " + to_string(src.value.shape()) +
                      ", network expects '" + entries[i].name + "' " + to_string(entries[i].value.shape()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i].value = a.entries[i].value;
  return entries.size();
}

PaenetConfig echoed_config(const Archive& a, const std::string& what) {
  if (!a.header.contains("config")) throw DataError(what + ": no config echo");
  PaenetConfig c = config_of(a.header.at("config"));
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw DataError(what + ": invalid config echo (" + e.what() + ")");
  }
  return c;
}

}  // namespace

std::string encode_weights(const Paenet& net) {
  json header;
  header["kind"] = "weights";
  header["config"] = config_json(net.config());
  const auto entries = param_entries(net);
  return encode_archive(header, views(entries));
}

void save_weights(const fs::path& path, const Paenet& net) {
  write_file_atomic(path, encode_weights(net));
}

Paenet load_weights(const fs::path& path) {
  const Archive a = decode_archive(read_file(path), path.string());
  Paenet net(echoed_config(a, path.string()));
  if (restore_params(a, net, path.string()) != a.entries.size())
    throw DataError(path.string() + ": trailing entries after the parameters");
  return net;
}

void load_weights_into(const fs::path& path, Paenet& net) {
  const Archive a = decode_archive(read_file(path), path.string());
  // The init seed does not affect the architecture.
  PaenetConfig stored = echoed_config(a, path.string());
  stored.seed = net.config().seed;
  if (!(stored == net.config()))
    throw DataError(path.string() + ": stored config " + config_json(stored).dump() + " does not match the network");
  restore_params(a, net, path.string());
}

void save_checkpoint(const fs::path& path, const Paenet& net, const TrainConfig& cfg, const TrainState& state) {
  json header;
  header["kind"] = "checkpoint";
  header["config"] = config_json(net.config());
  header["train"] = train_json(cfg);
  header["state"] = {{"iteration", state.iteration},
                     {"rng_state", state.rng_state},
                     {"adam_step", state.adam.step},
                     {"beta1", state.adam.beta1},
                     {"beta2", state.adam.beta2},
                     {"eps", state.adam.eps},
                     {"moments", !state.adam.m.empty()}};
  std::vector<ArchiveEntry> entries = param_entries(net);
  std::size_t k = 0;
  for (const auto& e : net.params().entries()) {
    if (!e.trainable || state.adam.m.empty()) continue;
    entries.push_back({"adam.m:" + e.name, false, state.adam.m.at(k)});
    entries.push_back({"adam.v:" + e.name, false, state.adam.v.at(k)});
    ++k;
  }
  write_file_atomic(path, encode_archive(header, views(entries)));
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string what = path.string();
  const Archive a = decode_archive(read_file(path), what);
  if (a.header.value("kind", std::string()) != "checkpoint") throw DataError(what + ": not a checkpoint");
  Checkpoint c{Paenet(echoed_config(a, what)), train_of(a.header.at("train")), {}};
  std::size_t next = restore_params(a, c.net, what);
  json_guard(what, [&] {
    const auto& s = a.header.at("state");
    c.state.iteration = s.at("iteration");
    c.state.rng_state = s.at("rng_state");
    c.state.adam.step = s.at("adam_step");
    c.state.adam.beta1 = s.at("beta1");
    c.state.adam.beta2 = s.at("beta2");
    c.state.adam.eps = s.at("eps");
    if (s.at("moments").get<bool>()) {
      for (const auto& e : c.net.params().entries()) {
        if (!e.trainable) continue;
        if (next + 2 > a.entries.size() || a.entries[next].name != "adam.m:" + e.name ||
            a.entries[next + 1].name != "adam.v:" + e.name || a.entries[next].value.shape() != e.value.shape() ||
            a.entries[next + 1].value.shape() != e.value.shape())
          throw DataError(what + ": optimizer moments do not match parameter '" + e.name + "'");
        c.state.adam.m.push_back(a.entries[next].value);
        c.state.adam.v.push_back(a.entries[next + 1].value);
        next += 2;
      }
    }
    return 0;
  });
  if (next != a.entries.size()) throw DataError(what + ": unexpected trailing entries");
  return c;
}

// --- images ----------------------------------------------------------------------

namespace {

std::string pgm_header(std::size_t rows, std::size_t cols) {
  return "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
}

}  // namespace

std::string encode_prob_pgm(const Tensor<float>& map) {
  require(map.rank() == 2, "encode_prob_pgm: map must be (L,W)");
  std::string out = pgm_header(map.extent(0), map.extent(1));
  for (float v : map.data()) {
    require(v >= 0.0f && v <= 1.0f, "encode_prob_pgm: value outside [0,1]");
    out += static_cast<char>(static_cast<unsigned char>(std::floor(static_cast<double>(v) * 255.0 + 0.5)));
  }
  return out;
}

std::string encode_mask_pgm(const BinaryMask& mask) {
  require(mask.rank() == 2, "encode_mask_pgm: mask must be (L,W)");
  std::string out = pgm_header(mask.extent(0), mask.extent(1));
  for (auto v : mask.data()) out += static_cast<char>(v ? 255 : 0);
  return out;
}

Tensor<std::uint8_t> decode_pgm(std::string_view bytes) {
  // Header: magic, width, height, maxval separated by whitespace and comments,
  // then exactly one whitespace byte.
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw DataError("image: truncated header");
    return std::string(bytes.substr(start, pos - start));
  };
  if (token() != "P5") throw DataError("image: not a binary PGM (P5)");
  const std::size_t cols = parse_extent(token(), "image");
  const std::size_t rows = parse_extent(token(), "image");
  const std::size_t maxval = parse_extent(token(), "image");
  if (rows == 0 || cols == 0) throw DataError("image: zero extent");
  if (maxval != 255) throw DataError("image: only 8-bit PGM (maxval 255) is supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw DataError("image: truncated");
  ++pos;
  if (bytes.size() - pos != rows * cols)
    throw DataError("image: pixel data has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                    std::to_string(rows * cols));
  Tensor<std::uint8_t> img(Shape{rows, cols});
  std::memcpy(img.ptr(), bytes.data() + pos, rows * cols);
  return img;
}

void write_prob_map(const fs::path& path, const Tensor<float>& map) {
  write_file_atomic(path, encode_prob_pgm(map));
}

void write_mask(const fs::path& path, const BinaryMask& mask) {
  write_file_atomic(path, encode_mask_pgm(mask));
}

BinaryMask read_mask(const fs::path& path) {
  BinaryMask m = decode_pgm(read_file(path));
  for (auto& v : m.data()) {
    if (v != 0 && v != 255) throw DataError(path.string() + ": mask pixels must be 0 or 255");
    v = v ? 1 : 0;
  }
  return m;
}

Tensor<float> read_prob_map(const fs::path& path) {
  const auto img = decode_pgm(read_file(path));
  Tensor<float> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<float>(img[i]) / 255.0f;
  return out;
}

// --- reports ---------------------------------------------------------------------

std::string encode_report(const MetricsReport& report, const ReportInfo& info) {
  require(info.labels.empty() || info.labels.size() == report.sample_count(), "report: one label per sample");
  json j;
  j["format"] = "paenet-report-1";
  if (!info.tag.empty()) j["tag"] = info.tag;
  j["threshold"] = info.threshold;
  j["samples"] = report.sample_count();
  if (!info.labels.empty()) j["labels"] = info.labels;
  json metrics = json::object();
  for (std::size_t k = 0; k < kMetricCount; ++k) {
    const auto& s = report.summary(static_cast<Metric>(k));
    metrics[std::string(kMetricNames[k])] = {{"mean", s.stats.mean}, {"sd", s.stats.sd}, {"values", s.values}};
  }
  j["metrics"] = metrics;
  return j.dump(2) + "\n";
}

void write_report(const fs::path& path, const MetricsReport& report, const ReportInfo& info) {
  write_file_atomic(path, encode_report(report, info));
}

MetricsReport decode_report(std::string_view text) {
  const json j = parse_json(text, "report");
  return json_guard("report", [&] {
    if (j.at("format") != "paenet-report-1") throw DataError("report: unknown format");
    const std::size_t n = j.at("samples");
    const auto& metrics = j.at("metrics");
    if (metrics.size() != kMetricCount) throw DataError("report: expected five metrics");
    std::vector<MetricValues> samples(n);
    std::size_t k = 0;
    for (const auto& [key, m] : metrics.items()) {
      if (key != kMetricNames[k]) throw DataError("report: metric order differs at '" + key + "'");
      const auto values = m.at("values").get<std::vector<double>>();
      if (values.size() != n) throw DataError("report: metric '" + key + "' has the wrong sample count");
      for (std::size_t i = 0; i < n; ++i) {
        if (!(values[i] >= 0.0 && values[i] <= 1.0)) throw DataError("report: metric value outside [0,1]");
        samples[i].v[k] = values[i];
      }
      ++k;
    }
    MetricsReport report(std::move(samples));
    k = 0;
    for (const auto& [key, m] : metrics.items()) {
      const auto& s = report.summary(static_cast<Metric>(k++));
      if (std::abs(s.stats.mean - m.at("mean").get<double>()) > 1e-12 ||
          std::abs(s.stats.sd - m.at("sd").get<double>()) > 1e-12)
        throw DataError("report: stored statistics of '" + key + "' disagree with the values");
    }
    return report;
  });
}

// --- datasets --------------------------------------------------------------------

std::vector<DatasetEntry> read_dataset_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  const json j = parse_json(read_file(path), path.string());
  return json_guard(path.string(), [&] {
    if (j.at("format") != "paenet-dataset-1") throw DataError(path.string() + ": unknown dataset format");
    std::vector<DatasetEntry> out;
    for (const auto& s : j.at("samples"))
      out.push_back({s.at("split"), s.at("index"), s.at("volume"), s.at("mask"), s.at("sha256")});
    return out;
  });
}

std::vector<LoadedSample> load_split(const fs::path& root, std::string_view split) {
  std::vector<LoadedSample> out;
  for (const auto& e : read_dataset_manifest(root)) {
    if (e.split != split) continue;
    const std::string bytes = read_file(root / e.volume);
    if (sha256_hex(bytes) != e.sha256) throw DataError((root / e.volume).string() + ": hash does not match manifest");
    VolumeFile v = decode_volume(bytes);
    BinaryMask gt = read_mask(root / e.mask);
    if (gt.shape() != Shape{v.data.extent(1), v.data.extent(2)})
      throw DataError((root / e.mask).string() + ": mask does not match its volume");
    out.push_back({e, {std::move(v.data), std::move(gt)}});
  }
  if (out.empty()) throw DataError(root.string() + ": no samples in split '" + std::string(split) + "'");
  return out;
}

}  // namespace paenet
