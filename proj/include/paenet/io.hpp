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

// On-disk formats. All reals are IEEE-754 binary32 little-endian, all
// multi-axis payloads row-major. Writers go through a temporary file and a
// rename, so readers never observe a partial file. Malformed input raises
// DataError.
//
//   RVV1   volume container: text header (dims, channels, dtype, axes), then
//          C*L*W*H reals in (C, L, W, H) order.
//   PAEW1  tensor archive: text header with a one-line JSON document and an
//          ordered (name, trainable, byte offset, shape) table, then the
//          concatenated reals. Used for weights and training checkpoints.
//   P5     8-bit binary PGM for probability maps and masks.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "paenet/metrics.hpp"
#include "paenet/synth.hpp"
#include "paenet/train.hpp"

namespace paenet {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);
void write_file_atomic(const fs::path& path, std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

// --- volumes -------------------------------------------------------------------

struct VolumeFile {
  std::vector<std::string> channels;
  Tensor<float> data;  // (C, L, W, H)
};

std::string encode_volume(const Tensor<float>& data, const std::vector<std::string>& channels);
VolumeFile decode_volume(std::string_view bytes);
void save_volume(const fs::path& path, const Tensor<float>& data,
                 const std::vector<std::string>& channels = {"oct", "octa"});
VolumeFile load_volume(const fs::path& path);

// --- configs -------------------------------------------------------------------

std::string config_to_json(const PaenetConfig& c);
PaenetConfig config_from_json(std::string_view text);
std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(std::string_view text);

/// Run file with optional "network" and "train" objects; missing fields keep
/// their defaults.
struct RunConfig {
  PaenetConfig network;
  TrainConfig train;
};
RunConfig load_run_config(const fs::path& path);

// --- weights and checkpoints ----------------------------------------------------

std::string encode_weights(const Paenet& net);
void save_weights(const fs::path& path, const Paenet& net);
/// Rebuilds the network from the stored config echo.
Paenet load_weights(const fs::path& path);
/// Loads into an existing network; a differing config or manifest is a DataError.
void load_weights_into(const fs::path& path, Paenet& net);

void save_checkpoint(const fs::path& path, const Paenet& net, const TrainConfig& cfg, const TrainState& state);
struct Checkpoint {
  Paenet net;
  TrainConfig train;
  TrainState state;
};
Checkpoint load_checkpoint(const fs::path& path);

// --- images ----------------------------------------------------------------------

/// Values in [0,1] scaled by 255 with round-half-up; rows are L, columns W.
std::string encode_prob_pgm(const Tensor<float>& map);
std::string encode_mask_pgm(const BinaryMask& mask);
/// Raw 8-bit pixels as an (rows, cols) tensor.
Tensor<std::uint8_t> decode_pgm(std::string_view bytes);

void write_prob_map(const fs::path& path, const Tensor<float>& map);
void write_mask(const fs::path& path, const BinaryMask& mask);
/// Pixels must be 0 or 255.
BinaryMask read_mask(const fs::path& path);
/// Pixels divided by 255.
Tensor<float> read_prob_map(const fs::path& path);

// --- reports ---------------------------------------------------------------------

struct ReportInfo {
  std::vector<std::string> labels;  // one per sample, may be empty
  double threshold = kDefaultThreshold;
  std::string tag;
};

/// JSON with metrics in the order dice, jac, bacc, pre, rec; each has mean,
/// sd and the per-sample values.
std::string encode_report(const MetricsReport& report, const ReportInfo& info = {});
void write_report(const fs::path& path, const MetricsReport& report, const ReportInfo& info = {});
/// Parses and validates a report (field order, ranges, consistent stats).
MetricsReport decode_report(std::string_view text);

// --- datasets --------------------------------------------------------------------

std::vector<DatasetEntry> read_dataset_manifest(const fs::path& root);

struct LoadedSample {
  DatasetEntry entry;
  TrainSample sample;
};
/// Every sample of `split`, volumes checked against their recorded hashes.
std::vector<LoadedSample> load_split(const fs::path& root, std::string_view split);

}  // namespace paenet
