// Copyright 2026 The SasMamba Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Keypoint JSON files, dataset directories and binary checkpoints.
//
// Checkpoint layout (all integers little-endian):
//   "SASM" | u32 version | u64 manifest length | manifest JSON | f32 payload
// The manifest holds the model config, one {name, shape, offset} entry per
// tensor (offset in payload bytes), payload_bytes and a CRC-32 of the payload.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sasmamba/model.hpp"
#include "sasmamba/training.hpp"

namespace sasmamba {

struct KeypointFile {
  double fps = 50.0;
  Tensor<float> frames;                     // [T, V, dims], dims 2 or 3
  std::optional<Tensor<float>> confidence;  // [T, V]

  Index num_joints() const { return frames.dim(1); }
  Index dims() const { return frames.dim(2); }
};

KeypointFile ParseKeypoints(const std::string& text, const std::string& source = "<string>");
std::string SerializeKeypoints(const KeypointFile& file);
KeypointFile ReadKeypoints(const std::string& path);
void WriteKeypoints(const std::string& path, const KeypointFile& file);

/// Writes through a sibling temporary file and renames it into place, so a
/// failed write never leaves a partial file at `path`.
void WriteFileAtomic(const std::string& path, const std::string& bytes);
std::string ReadFileBytes(const std::string& path);

/// DIR/manifest.json plus <name>_2d.json and <name>_3d.json per sequence.
void WriteDataset(const std::string& dir, const SyntheticDataset& ds, double fps = 50.0);
std::vector<Sample> ReadDataset(const std::string& dir);

inline constexpr char kCheckpointMagic[4] = {'S', 'A', 'S', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string SerializeCheckpoint(const Model<float>& model);

struct CheckpointContents {
  Model<float> model;
  bool checksum_ok = true;
  std::uint32_t stored_crc = 0;
  std::uint32_t actual_crc = 0;
};

/// Structural decode: bad magic is a format error, a newer version a version
/// error, truncation or a tensor list that disagrees with the config a
/// corruption error. A checksum mismatch is only reported.
CheckpointContents DecodeCheckpoint(const std::string& bytes);

/// DecodeCheckpoint plus a corruption error on checksum mismatch.
Model<float> DeserializeCheckpoint(const std::string& bytes);

void SaveCheckpoint(const Model<float>& model, const std::string& path);
Model<float> LoadCheckpoint(const std::string& path);

}  // namespace sasmamba
