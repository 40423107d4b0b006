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

#include "sasmamba/io.hpp"

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

namespace sasmamba {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void FormatError(const std::string& source, const std::string& msg) {
  Fail(ErrorKind::kFormat, source + ": " + msg);
}

json ParseJson(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    Fail(ErrorKind::kParse, source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                                ": malformed JSON (" + e.what() + ")");
  }
}

float FiniteValue(const json& x, const std::string& source, const std::string& field) {
  if (!x.is_number()) FormatError(source, field + ": expected a number");
  const double d = x.get<double>();
  if (!std::isfinite(d)) FormatError(source, field + ": value is not finite");
  return static_cast<float>(d);
}

const json& RequireArray(const json& x, std::size_t size, const std::string& source,
                         const std::string& field) {
  if (!x.is_array()) FormatError(source, field + ": expected an array");
  if (x.size() != size) {
    FormatError(source, field + ": expected " + std::to_string(size) + " entries, got " +
                            std::to_string(x.size()));
  }
  return x;
}

std::uint32_t Crc32(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

template <typename U>
void PutLe(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U GetLe(const std::string& in, std::size_t pos) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return value;
}

}  // namespace

KeypointFile ParseKeypoints(const std::string& text, const std::string& source) {
  const json j = ParseJson(text, source);
  if (!j.is_object()) FormatError(source, "top level must be an object");
  for (const char* key : {"version", "fps", "num_joints", "dims", "frames"}) {
    if (!j.contains(key)) FormatError(source, std::string("missing field '") + key + "'");
  }
  if (!j["version"].is_number_integer() || j["version"].get<int>() != 1) {
    FormatError(source, "version: only version 1 is supported");
  }
  KeypointFile file;
  file.fps = FiniteValue(j["fps"], source, "fps");
  if (!(file.fps > 0)) FormatError(source, "fps: must be positive");
  if (!j["num_joints"].is_number_integer() || j["num_joints"].get<Index>() < 1) {
    FormatError(source, "num_joints: must be a positive integer");
  }
  if (!j["dims"].is_number_integer()) FormatError(source, "dims: must be 2 or 3");
  const Index joints = j["num_joints"].get<Index>();
  const Index dims = j["dims"].get<Index>();
  if (dims != 2 && dims != 3) FormatError(source, "dims: must be 2 or 3, got " + std::to_string(dims));
  const json& frames = j["frames"];
  if (!frames.is_array() || frames.empty()) FormatError(source, "frames: expected a nonempty array");
  const Index count = static_cast<Index>(frames.size());
  file.frames = Tensor<float>({count, joints, dims});
  for (Index t = 0; t < count; ++t) {
    const std::string ft = "frames[" + std::to_string(t) + "]";
    RequireArray(frames[t], static_cast<std::size_t>(joints), source, ft);
    for (Index v = 0; v < joints; ++v) {
      const std::string fv = ft + "[" + std::to_string(v) + "]";
      RequireArray(frames[t][v], static_cast<std::size_t>(dims), source, fv);
      for (Index a = 0; a < dims; ++a) {
        file.frames.at(t, v, a) = FiniteValue(frames[t][v][a], source, fv);
      }
    }
  }
  if (j.contains("confidence") && !j["confidence"].is_null()) {
    const json& conf = j["confidence"];
    RequireArray(conf, static_cast<std::size_t>(count), source, "confidence");
    Tensor<float> c({count, joints});
    for (Index t = 0; t < count; ++t) {
      const std::string ft = "confidence[" + std::to_string(t) + "]";
      RequireArray(conf[t], static_cast<std::size_t>(joints), source, ft);
      for (Index v = 0; v < joints; ++v) c.at(t, v) = FiniteValue(conf[t][v], source, ft);
    }
    file.confidence = std::move(c);
  }
  return file;
}

std::string SerializeKeypoints(const KeypointFile& file) {
  const Tensor<float>& f = file.frames;
  if (f.rank() != 3 || (f.dim(2) != 2 && f.dim(2) != 3)) {
    Fail(ErrorKind::kFormat, "keypoint frames must be T x V x 2 or T x V x 3, got " +
                                 ShapeString(f.shape()));
  }
  if (!f.AllFinite()) Fail(ErrorKind::kValue, "keypoint frames contain non-finite values");
  ordered_json j;
  j["version"] = 1;
  j["fps"] = file.fps;
  j["num_joints"] = f.dim(1);
  j["dims"] = f.dim(2);
  ordered_json frames = ordered_json::array();
  for (Index t = 0; t < f.dim(0); ++t) {
    ordered_json frame = ordered_json::array();
    for (Index v = 0; v < f.dim(1); ++v) {
      ordered_json point = ordered_json::array();
      for (Index a = 0; a < f.dim(2); ++a) point.push_back(f.at(t, v, a));
      frame.push_back(std::move(point));
    }
    frames.push_back(std::move(frame));
  }
  j["frames"] = std::move(frames);
  if (file.confidence) {
    const Tensor<float>& c = *file.confidence;
    if (c.shape() != Shape{f.dim(0), f.dim(1)}) {
      Fail(ErrorKind::kFormat, "confidence must be T x V, got " + ShapeString(c.shape()));
    }
    ordered_json conf = ordered_json::array();
    for (Index t = 0; t < c.dim(0); ++t) {
      ordered_json row = ordered_json::array();
      for (Index v = 0; v < c.dim(1); ++v) row.push_back(c.at(t, v));
      conf.push_back(std::move(row));
    }
    j["confidence"] = std::move(conf);
  }
  return j.dump() + "\n";
}

KeypointFile ReadKeypoints(const std::string& path) {
  return ParseKeypoints(ReadFileBytes(path), path);
}

void WriteKeypoints(const std::string& path, const KeypointFile& file) {
  WriteFileAtomic(path, SerializeKeypoints(file));
}

void WriteFileAtomic(const std::string& path, const std::string& bytes) {
  const fs::path target(path);
  const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) Fail(ErrorKind::kIo, "cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      Fail(ErrorKind::kIo, "write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    Fail(ErrorKind::kIo, "cannot move output into place at '" + path + "'");
  }
}

std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Fail(ErrorKind::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void WriteDataset(const std::string& dir, const SyntheticDataset& ds, double fps) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) Fail(ErrorKind::kIo, "cannot create directory '" + dir + "'");
  ordered_json manifest;
  manifest["version"] = 1;
  manifest["seed"] = ds.seed;
  manifest["fps"] = fps;
  ordered_json seqs = ordered_json::array();
  for (const Sample& s : ds.samples) {
    const std::string kp_name = s.name + "_2d.json";
    const std::string pose_name = s.name + "_3d.json";
    WriteKeypoints((fs::path(dir) / kp_name).string(), KeypointFile{fps, s.keypoints, {}});
    WriteKeypoints((fs::path(dir) / pose_name).string(), KeypointFile{fps, s.pose, {}});
    ordered_json e;
    e["name"] = s.name;
    e["keypoints"] = kp_name;
    e["pose"] = pose_name;
    e["camera"] = {{"focal", s.camera.focal},
                   {"principal", s.camera.principal},
                   {"translation", s.camera.translation}};
    seqs.push_back(std::move(e));
  }
  manifest["sequences"] = std::move(seqs);
  WriteFileAtomic((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::vector<Sample> ReadDataset(const std::string& dir) {
  const std::string path = (fs::path(dir) / "manifest.json").string();
  const json manifest = ParseJson(ReadFileBytes(path), path);
  std::vector<Sample> out;
  try {
    for (const auto& e : manifest.at("sequences")) {
      Sample s;
      s.name = e.at("name").get<std::string>();
      s.keypoints = ReadKeypoints((fs::path(dir) / e.at("keypoints").get<std::string>()).string()).frames;
      s.pose = ReadKeypoints((fs::path(dir) / e.at("pose").get<std::string>()).string()).frames;
      if (e.contains("camera")) {
        const auto& c = e["camera"];
        s.camera.focal = c.at("focal").get<double>();
        s.camera.principal = c.at("principal").get<std::array<double, 2>>();
        s.camera.translation = c.at("translation").get<std::array<double, 3>>();
      }
      if (s.keypoints.dim(2) != 2 || s.pose.dim(2) != 3 ||
          s.keypoints.dim(0) != s.pose.dim(0) || s.keypoints.dim(1) != s.pose.dim(1)) {
        FormatError(path, "sequence '" + s.name + "' has inconsistent 2D/3D shapes " +
                              ShapeString(s.keypoints.shape()) + " and " +
                              ShapeString(s.pose.shape()));
      }
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    FormatError(path, std::string("bad dataset manifest: ") + e.what());
  }
  if (out.empty()) FormatError(path, "dataset lists no sequences");
  return out;
}

std::string SerializeCheckpoint(const Model<float>& model) {
  std::string payload;
  ordered_json tensors = ordered_json::array();
  VisitModel(model, [&](const std::string& name, const Tensor<float>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    payload.reserve(payload.size() + static_cast<std::size_t>(t.size()) * 4);
    for (Index i = 0; i < t.size(); ++i) PutLe(payload, std::bit_cast<std::uint32_t>(t[i]));
  });
  ordered_json manifest;
  manifest["config"] = ConfigToJson(model.config);
  manifest["tensors"] = std::move(tensors);
  manifest["payload_bytes"] = payload.size();
  manifest["crc32"] = Crc32(payload.data(), payload.size());
  const std::string text = manifest.dump();

  std::string out(kCheckpointMagic, 4);
  PutLe<std::uint32_t>(out, kCheckpointVersion);
  PutLe<std::uint64_t>(out, text.size());
  out += text;
  out += payload;
  return out;
}

CheckpointContents DecodeCheckpoint(const std::string& bytes) {
  auto corrupt = [](const std::string& msg) { Fail(ErrorKind::kCorruption, "checkpoint: " + msg); };
  if (bytes.size() < 4 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    Fail(ErrorKind::kFormat, "checkpoint: bad magic, expected \"SASM\"");
  }
  if (bytes.size() < 16) corrupt("truncated header");
  const auto version = GetLe<std::uint32_t>(bytes, 4);
  if (version > kCheckpointVersion) {
    Fail(ErrorKind::kVersion, "checkpoint: format version " + std::to_string(version) +
                                  " is newer than supported version " +
                                  std::to_string(kCheckpointVersion));
  }
  if (version == 0) Fail(ErrorKind::kFormat, "checkpoint: invalid format version 0");
  const auto manifest_len = GetLe<std::uint64_t>(bytes, 8);
  if (manifest_len > bytes.size() - 16) corrupt("truncated manifest");
  const std::size_t payload_pos = 16 + static_cast<std::size_t>(manifest_len);

  CheckpointContents out;
  std::vector<std::pair<std::string, Shape>> listed;
  std::vector<std::size_t> offsets;
  std::size_t payload_bytes = 0;
  try {
    const json manifest = json::parse(bytes.begin() + 16, bytes.begin() + payload_pos);
    out.model.config = ConfigFromJson(manifest.at("config"));
    for (const auto& t : manifest.at("tensors")) {
      listed.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>());
      offsets.push_back(t.at("offset").get<std::size_t>());
    }
    payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    out.stored_crc = manifest.at("crc32").get<std::uint32_t>();
  } catch (const json::exception& e) {
    corrupt(std::string("unreadable manifest (") + e.what() + ")");
  }

  const std::vector<TensorSpec> specs = ParamSpecs(out.model.config);
  if (listed.size() != specs.size()) {
    corrupt("manifest lists " + std::to_string(listed.size()) + " tensors, config implies " +
            std::to_string(specs.size()));
  }
  std::size_t expected_bytes = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (listed[i].first != specs[i].name || listed[i].second != specs[i].shape) {
      corrupt("tensor " + std::to_string(i) + " is " + listed[i].first + " " +
              ShapeString(listed[i].second) + ", expected " + specs[i].name + " " +
              ShapeString(specs[i].shape));
    }
    if (offsets[i] != expected_bytes) corrupt("tensor '" + specs[i].name + "' has a bad offset");
    expected_bytes += static_cast<std::size_t>(NumElements(specs[i].shape)) * 4;
  }
  if (payload_bytes != expected_bytes) {
    corrupt("payload_bytes " + std::to_string(payload_bytes) + " disagrees with the " +
            std::to_string(expected_bytes / 4) + " parameters implied by the config");
  }
  if (bytes.size() - payload_pos != payload_bytes) {
    corrupt("payload is " + std::to_string(bytes.size() - payload_pos) + " bytes, expected " +
            std::to_string(payload_bytes));
  }
  out.actual_crc = Crc32(bytes.data() + payload_pos, payload_bytes);
  out.checksum_ok = out.actual_crc == out.stored_crc;

  // Shapes come from the config; every element is overwritten below.
  Model<float>& m = out.model;
  m = InitModel<float>(m.config, 0);
  std::size_t pos = payload_pos;
  VisitModel(m, [&](const std::string&, Tensor<float>& t) {
    for (Index i = 0; i < t.size(); ++i, pos += 4) {
      t[i] = std::bit_cast<float>(GetLe<std::uint32_t>(bytes, pos));
    }
  });
  return out;
}

Model<float> DeserializeCheckpoint(const std::string& bytes) {
  CheckpointContents c = DecodeCheckpoint(bytes);
  if (!c.checksum_ok) {
    char msg[96];
    std::snprintf(msg, sizeof(msg), "checkpoint: payload checksum mismatch (stored %08x, actual %08x)",
                  c.stored_crc, c.actual_crc);
    Fail(ErrorKind::kCorruption, msg);
  }
  return std::move(c.model);
}

void SaveCheckpoint(const Model<float>& model, const std::string& path) {
  WriteFileAtomic(path, SerializeCheckpoint(model));
}

Model<float> LoadCheckpoint(const std::string& path) {
  return DeserializeCheckpoint(ReadFileBytes(path));
}

}  // namespace sasmamba
