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

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>

#include "sasmamba/io.hpp"
#include "sasmamba/metrics.hpp"
#include "test_util.hpp"

namespace sasmamba::testing {
namespace {

namespace fs = std::filesystem;

PointCloud RandomCloud(Index joints, std::uint64_t seed) {
  Rng rng(seed);
  PointCloud p(joints, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = rng.Uniform(-1, 1);
  return p;
}

Eigen::Matrix3d RandomRotation(Rng& rng) {
  Eigen::Quaterniond q(rng.Normal(0, 1), rng.Normal(0, 1), rng.Normal(0, 1), rng.Normal(0, 1));
  return q.normalized().toRotationMatrix();
}

TD ToSeq(const std::vector<PointCloud>& frames) {
  const Index v = frames[0].rows();
  TD seq({static_cast<Index>(frames.size()), v, 3});
  for (std::size_t t = 0; t < frames.size(); ++t) {
    seq.vec().segment(static_cast<Index>(t) * v * 3, v * 3) =
        Eigen::Map<const Eigen::VectorXd>(frames[t].data(), v * 3);
  }
  return seq;
}

TEST(MpjpeP1, TranslationPerFrameIsRemoved) {
  const TD gt = Rand({4, 5, 3}, 1);
  TD pred = gt;
  for (Index t = 0; t < 4; ++t) {
    for (Index v = 0; v < 5; ++v) {
      for (Index a = 0; a < 3; ++a) pred.at(t, v, a) += 0.3 * (t + 1) * (a + 1);
    }
  }
  EXPECT_NEAR(MpjpeP1(pred, gt, 0), 0, 1e-12);
  EXPECT_EQ(MpjpeP1(gt, gt, 2), 0);
}

TEST(MpjpeP1, HandComputedPair) {
  EXPECT_DOUBLE_EQ(MpjpeP1(Make({1, 2, 3}, {0, 0, 0, 0, 3, 4}), TD({1, 2, 3}), 0), 2.5);
}

TEST(MpjpeP1, InvalidRoot) {
  EXPECT_KIND(MpjpeP1(Rand({2, 3, 3}, 1), Rand({2, 3, 3}, 2), 3), kIndex);
  EXPECT_KIND(MpjpeP1(Rand({2, 3, 3}, 1), Rand({2, 3, 3}, 2), -1), kIndex);
}

TEST(MpjpeP1, JointTranslationInvariance) {
  const TD p = Rand({3, 6, 3}, 1), g = Rand({3, 6, 3}, 2);
  TD p2 = p, g2 = g;
  for (Index i = 0; i < p.size(); ++i) {
    const double shift = (i % 3 == 0 ? 4.0 : -1.5) * (1 + i / 18);
    p2[i] += shift;
    g2[i] += shift;
  }
  EXPECT_NEAR(MpjpeP1(p2, g2, 0), MpjpeP1(p, g, 0), 1e-12);
}

TEST(Procrustes, RecoversSimilarityCopy) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const PointCloud gt = RandomCloud(17, 100 + trial);
    SimilarityTransform truth;
    truth.scale = rng.Uniform(0.5, 2.0);
    truth.rotation = RandomRotation(rng);
    truth.translation = Eigen::Vector3d(rng.Uniform(-3, 3), rng.Uniform(-3, 3), rng.Uniform(-3, 3));
    // pred = (1 / s) R^T (gt - t), so aligning pred onto gt recovers (s, R, t).
    PointCloud pred = ((gt.rowwise() - truth.translation.transpose()) * truth.rotation) / truth.scale;
    const Alignment a = ProcrustesAlign(pred, gt);
    EXPECT_LT((a.aligned - gt).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(a.transform.scale, truth.scale, 1e-6);
    EXPECT_LT((a.transform.rotation - truth.rotation).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((a.transform.translation - truth.translation).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Procrustes, IdentityOnEqualClouds) {
  const PointCloud gt = RandomCloud(8, 1);
  const Alignment a = ProcrustesAlign(gt, gt);
  EXPECT_NEAR(a.transform.scale, 1, 1e-12);
  EXPECT_LT((a.transform.rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(a.transform.translation.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.aligned - gt).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Procrustes, ProperRotationForReflectedInput) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCloud gt = RandomCloud(6, seed);
    PointCloud pred = RandomCloud(6, seed + 1000);
    if (seed % 2 == 0) pred = gt * Eigen::Vector3d(-1, 1, 1).asDiagonal();
    const Eigen::Matrix3d r = ProcrustesAlign(pred, gt).transform.rotation;
    EXPECT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
    EXPECT_GT(ProcrustesAlign(pred, gt).transform.scale, 0);
  }
}

TEST(Procrustes, DegenerateTruth) {
  PointCloud line(4, 3);
  for (Index i = 0; i < 4; ++i) line.row(i) = Eigen::RowVector3d(i, 2.0 * i, -i);
  EXPECT_KIND(ProcrustesAlign(RandomCloud(4, 1), line), kDegeneracy);
  EXPECT_KIND(ProcrustesAlign(RandomCloud(2, 1), RandomCloud(2, 2)), kDegeneracy);
  EXPECT_KIND(ProcrustesAlign(RandomCloud(4, 1), PointCloud::Zero(4, 3)), kDegeneracy);
}

TEST(MpjpeP2, SimilarityCopiesScoreZero) {
  Rng rng(3);
  std::vector<PointCloud> gt, pred;
  for (int t = 0; t < 5; ++t) {
    gt.push_back(RandomCloud(17, 10 + t));
    SimilarityTransform s{rng.Uniform(0.5, 2), RandomRotation(rng), Eigen::Vector3d::Random()};
    pred.push_back(s.Apply(gt.back()));
  }
  EXPECT_LT(MpjpeP2(ToSeq(pred), ToSeq(gt)), 1e-9);
  EXPECT_LT(MpjpeP2(ToSeq(gt), ToSeq(gt)), 1e-12);
}

TEST(MpjpeP2, InvariantUnderSimilarityOfPrediction) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PointCloud g = RandomCloud(17, 200 + trial), p = RandomCloud(17, 300 + trial);
    SimilarityTransform s{rng.Uniform(0.5, 2), RandomRotation(rng), Eigen::Vector3d::Random()};
    EXPECT_NEAR(MpjpeP2(ToSeq({s.Apply(p)}), ToSeq({g})), MpjpeP2(ToSeq({p}), ToSeq({g})), 1e-9);
  }
}

TEST(MpjpeP2, ResidualNoWorseThanRootAlignment) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const PointCloud g = RandomCloud(17, seed), p = RandomCloud(17, seed + 7000);
    const double procrustes = (ProcrustesAlign(p, g).aligned - g).squaredNorm();
    const PointCloud p_root = p.rowwise() - p.row(0), g_root = g.rowwise() - g.row(0);
    EXPECT_LE(procrustes, (p_root - g_root).squaredNorm() + 1e-12) << seed;
  }
}

TEST(MpjveMetric, ConstantOffsetIsZero) {
  const TD g = Rand({4, 3, 3}, 1);
  TD p = g;
  p.vec().array() += 3;
  EXPECT_NEAR(MpjveMetric(p, g), 0, 1e-12);
}

TEST(CenterFrame, PicksMiddle) {
  const TD s = Rand({5, 2, 3}, 1);
  const TD c = CenterFrame(s);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(c.at(0, 1, 2), s.at(2, 1, 2));
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("sasmamba_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

KeypointFile RandomKeypoints(Index frames, Index joints, Index dims, std::uint64_t seed) {
  Rng rng(seed);
  return KeypointFile{25.0, UniformTensor<float>({frames, joints, dims}, -500, 500, rng), {}};
}

TEST(Keypoints, RoundTrip) {
  TempDir dir;
  KeypointFile kp = RandomKeypoints(4, 3, 2, 1);
  Rng rng(2);
  kp.confidence = UniformTensor<float>({4, 3}, 0, 1, rng);
  WriteKeypoints(dir / "kp.json", kp);
  const KeypointFile back = ReadKeypoints(dir / "kp.json");
  EXPECT_EQ(back.fps, 25.0);
  EXPECT_EQ(back.frames, kp.frames);
  ASSERT_TRUE(back.confidence.has_value());
  EXPECT_EQ(*back.confidence, *kp.confidence);
  const KeypointFile pose = RandomKeypoints(2, 17, 3, 3);
  EXPECT_EQ(ParseKeypoints(SerializeKeypoints(pose)).frames, pose.frames);
}

TEST(Keypoints, DimsFourRejected) {
  EXPECT_KIND(ParseKeypoints(R"({"version":1,"fps":50,"num_joints":1,"dims":4,"frames":[[[1,2,3,4]]]})"),
              kFormat);
}

TEST(Keypoints, RaggedFramesNameTheField) {
  try {
    ParseKeypoints(R"({"version":1,"fps":50,"num_joints":2,"dims":2,"frames":[[[1,2],[3,4]],[[1,2],[3]]]})");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kFormat);
    EXPECT_NE(std::string(e.what()).find("frames[1][1]"), std::string::npos) << e.what();
  }
}

TEST(Keypoints, MalformedJsonReportsLine) {
  try {
    ParseKeypoints("{\n  \"version\": 1,\n  \"fps\": ]\n}", "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("bad.json:3"), std::string::npos) << e.what();
  }
}

TEST(Keypoints, NonFiniteAndHeaderMismatch) {
  EXPECT_KIND(ParseKeypoints(R"({"version":1,"fps":50,"num_joints":2,"dims":2,"frames":[[[1,2]]]})"),
              kFormat);
  EXPECT_KIND(ParseKeypoints(R"({"version":2,"fps":50,"num_joints":1,"dims":2,"frames":[[[1,2]]]})"),
              kFormat);
}

TEST(Dataset, RoundTrip) {
  TempDir dir;
  const auto ds = GenSynthetic(3, 2, 5, 17);
  WriteDataset(dir / "data", ds);
  const auto back = ReadDataset(dir / "data");
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].name, ds.samples[i].name);
    EXPECT_EQ(back[i].keypoints, ds.samples[i].keypoints);
    EXPECT_EQ(back[i].pose, ds.samples[i].pose);
  }
}

ModelConfig SmallConfig() {
  ModelConfig cfg;
  cfg.l = 2;
  cfg.d = 8;
  cfg.t = 9;
  cfg.v = 5;
  cfg.n = 2;
  return cfg;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  TempDir dir;
  const auto m = InitModel<float>(SmallConfig(), 3);
  SaveCheckpoint(m, dir / "a.ckpt");
  const auto loaded = LoadCheckpoint(dir / "a.ckpt");
  SaveCheckpoint(loaded, dir / "b.ckpt");
  EXPECT_EQ(ReadFileBytes(dir / "a.ckpt"), ReadFileBytes(dir / "b.ckpt"));
  EXPECT_EQ(loaded.config, m.config);
  const Tensor<float> x = RandomKeypoints(9, 5, 2, 4).frames;
  EXPECT_EQ(Predict(loaded, x), Predict(m, x));
}

TEST(Checkpoint, FlippedPayloadByteReportsChecksum) {
  std::string bytes = SerializeCheckpoint(InitModel<float>(SmallConfig(), 3));
  bytes[bytes.size() - 5] ^= 0x01;
  const auto contents = DecodeCheckpoint(bytes);
  EXPECT_FALSE(contents.checksum_ok);
  EXPECT_NE(contents.stored_crc, contents.actual_crc);
  EXPECT_KIND(DeserializeCheckpoint(bytes), kCorruption);
}

TEST(Checkpoint, BadMagic) {
  std::string bytes = SerializeCheckpoint(InitModel<float>(SmallConfig(), 3));
  bytes.replace(0, 4, "XXXX");
  EXPECT_KIND(DecodeCheckpoint(bytes), kFormat);
}

TEST(Checkpoint, NewerVersion) {
  std::string bytes = SerializeCheckpoint(InitModel<float>(SmallConfig(), 3));
  bytes[4] = 2;
  EXPECT_KIND(DecodeCheckpoint(bytes), kVersion);
}

TEST(Checkpoint, TruncatedPayload) {
  const std::string bytes = SerializeCheckpoint(InitModel<float>(SmallConfig(), 3));
  EXPECT_KIND(DecodeCheckpoint(bytes.substr(0, bytes.size() - 8)), kCorruption);
  EXPECT_KIND(DecodeCheckpoint(bytes.substr(0, 10)), kCorruption);
}

TEST(Checkpoint, ManifestCountMatchesBreakdown) {
  const auto m = InitModel<float>(SmallConfig(), 3);
  const std::string bytes = SerializeCheckpoint(m);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(manifest["tensors"].size(), CountParams(SmallConfig()).entries.size());
  EXPECT_EQ(bytes.size() - 16 - len, 4 * static_cast<std::size_t>(CountParams(SmallConfig()).total));
}

// CLI.

struct CliResult {
  int code;
  std::string out;
};

CliResult RunCli(const std::string& args, const TempDir& dir) {
  const std::string out = dir / "stdout.txt";
  const std::string cmd = std::string(SASMAMBA_CLI_PATH) + " " + args + " > " + out + " 2> " +
                          (dir / "stderr.txt");
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WEXITSTATUS(status), ss.str()};
}

TEST(Cli, EvalIdenticalFilesPrintsZero) {
  TempDir dir;
  WriteKeypoints(dir / "p.json", RandomKeypoints(3, 17, 3, 1));
  const auto r = RunCli("eval --pred " + (dir / "p.json") + " --gt " + (dir / "p.json") +
                            " --protocol p1 --root 0",
                        dir);
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "0.0000\n");
  const auto p2 = RunCli("eval --pred " + (dir / "p.json") + " --gt " + (dir / "p.json") +
                             " --protocol p2 --unit mm",
                         dir);
  EXPECT_EQ(p2.code, 0);
  EXPECT_EQ(p2.out.substr(0, 3), "0.0");
}

TEST(Cli, CountBreakdownSumsToTotal) {
  TempDir dir;
  const auto r = RunCli("count --frames 243", dir);
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string key;
  long long params = 0;
  in >> key >> params;
  EXPECT_EQ(key, "params");
  EXPECT_NEAR(static_cast<double>(params), 624000, 0.2 * 624000);
  std::string line;
  long long sum = 0;
  bool in_params = false;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string name, value;
    row >> name >> value;
    if (name == "module") {
      in_params = value == "params";
    } else if (in_params && name == "total") {
      EXPECT_EQ(std::stoll(value), params);
      EXPECT_EQ(sum, params);
      in_params = false;
    } else if (in_params && !name.empty()) {
      sum += std::stoll(value);
    }
  }
}

TEST(Cli, GradcheckSeedSeven) {
  TempDir dir;
  EXPECT_EQ(RunCli("gradcheck --seed 7", dir).code, 0);
}

TEST(Cli, UsageAndDataErrors) {
  TempDir dir;
  EXPECT_EQ(RunCli("", dir).code, 1);
  EXPECT_EQ(RunCli("count --bogus", dir).code, 1);
  EXPECT_EQ(RunCli("eval --pred missing.json --gt missing.json", dir).code, 1);
  std::ofstream(dir / "bad.json") << "{";
  EXPECT_EQ(RunCli("eval --pred " + (dir / "bad.json") + " --gt " + (dir / "bad.json"), dir).code, 2);
}

TEST(Cli, DeterministicSynthInitTrainInfer) {
  TempDir dir;
  std::ofstream(dir / "cfg.json") << R"({"l": 1, "d": 8, "t": 9, "v": 17, "n": 2})";
  for (const char* tag : {"a", "b"}) {
    const std::string t = tag;
    ASSERT_EQ(RunCli("synth --seed 4 --sequences 2 --frames 9 --out " + (dir / ("data_" + t)), dir).code, 0);
    ASSERT_EQ(RunCli("init --config " + (dir / "cfg.json") + " --seed 2 --out " + (dir / (t + ".ckpt")), dir).code, 0);
    ASSERT_EQ(RunCli("train --data " + (dir / ("data_" + t)) + " --model " + (dir / (t + ".ckpt")) +
                         " --epochs 1 --batch 2 --out " + (dir / (t + "2.ckpt")) + " --trace " +
                         (dir / (t + ".csv")),
                     dir)
                  .code,
              0);
    ASSERT_EQ(RunCli("infer --model " + (dir / (t + "2.ckpt")) + " --input " +
                         (dir / ("data_" + t + "/seq_0000_2d.json")) + " --output " + (dir / (t + "_pose.json")),
                     dir)
                  .code,
              0);
  }
  for (const char* name : {".ckpt", "2.ckpt", ".csv", "_pose.json"}) {
    EXPECT_EQ(ReadFileBytes(dir / (std::string("a") + name)), ReadFileBytes(dir / (std::string("b") + name)))
        << name;
  }
  EXPECT_EQ(ReadFileBytes(dir / "data_a/manifest.json"), ReadFileBytes(dir / "data_b/manifest.json"));
}

TEST(Cli, FailedTrainLeavesNoOutput) {
  TempDir dir;
  fs::create_directories(dir / "empty");
  std::ofstream(dir / "cfg.json") << R"({"l": 1, "d": 8, "t": 9, "v": 17, "n": 2})";
  ASSERT_EQ(RunCli("init --config " + (dir / "cfg.json") + " --out " + (dir / "m.ckpt"), dir).code, 0);
  EXPECT_EQ(RunCli("train --data " + (dir / "empty") + " --model " + (dir / "m.ckpt") + " --out " +
                       (dir / "out.ckpt") + " --trace " + (dir / "t.csv"),
                   dir)
                .code,
            2);
  EXPECT_FALSE(fs::exists(dir / "out.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "t.csv"));
}

}  // namespace
}  // namespace sasmamba::testing
