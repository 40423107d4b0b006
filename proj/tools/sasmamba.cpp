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

// Command-line front end. Exit codes: 0 success, 1 usage, 2 data or format
// error, 3 numerical failure.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sasmamba/gradcheck.hpp"
#include "sasmamba/io.hpp"
#include "sasmamba/metrics.hpp"
#include "sasmamba/model.hpp"
#include "sasmamba/training.hpp"

namespace {

using namespace sasmamba;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

ModelConfig ConfigOrDefault(const std::string& path) {
  return path.empty() ? ModelConfig{} : LoadConfigFile(path);
}

int RunInit(const std::string& config, std::uint64_t seed, const std::string& out) {
  SaveCheckpoint(InitModel<float>(ConfigOrDefault(config), seed), out);
  return kExitOk;
}

struct TrainArgs {
  std::string data, model, out, trace;
  Index epochs = 1, batch = 16;
  std::uint64_t seed = 0;
  double lr = 5e-4;
  std::int64_t max_steps = 0;
};

int RunTrain(const TrainArgs& a) {
  Model<float> model = LoadCheckpoint(a.model);
  const std::vector<Sample> data = ReadDataset(a.data);
  TrainOptions opts;
  opts.epochs = a.epochs;
  opts.batch = a.batch;
  opts.seed = a.seed;
  opts.optim.lr = a.lr;
  opts.max_steps = a.max_steps;
  opts.on_epoch = [](const EpochStats& e) {
    std::fprintf(stderr, "epoch %lld  lr %.3g  total %.6f  wmpjpe %.6f  tcloss %.6f  mpjve %.6f\n",
                 static_cast<long long>(e.epoch), e.lr, e.total, e.wmpjpe, e.tcloss, e.mpjve);
  };
  const TrainResult result = Train(model, data, opts);
  const std::string csv = TraceToCsv(result.trace);
  const std::string ckpt = SerializeCheckpoint(model);
  if (!a.trace.empty()) WriteFileAtomic(a.trace, csv);
  WriteFileAtomic(a.out, ckpt);
  return kExitOk;
}

int RunInfer(const std::string& model_path, const std::string& input, const std::string& output) {
  const Model<float> model = LoadCheckpoint(model_path);
  const KeypointFile kp = ReadKeypoints(input);
  if (kp.dims() != 2) Fail(ErrorKind::kFormat, input + ": dims must be 2 for inference input");
  if (kp.num_joints() != model.config.v) {
    Fail(ErrorKind::kDimension, input + ": " + std::to_string(kp.num_joints()) +
                                    " joints, model expects " + std::to_string(model.config.v));
  }
  const Index frames = kp.frames.dim(0), joints = kp.num_joints(), window = model.config.t;
  const Index windows = frames <= window ? 1 : frames / window;
  const Index len = frames <= window ? frames : window;
  if (frames > window && frames % window != 0) {
    std::fprintf(stderr, "warning: %lld trailing frames beyond the last full %lld-frame window are dropped\n",
                 static_cast<long long>(frames % window), static_cast<long long>(window));
  }
  Tensor<float> out({windows * len, joints, 3});
  const Index in_stride = len * joints * 2, out_stride = len * joints * 3;
  for (Index w = 0; w < windows; ++w) {
    Tensor<float> chunk({len, joints, 2});
    chunk.vec() = kp.frames.vec().segment(w * in_stride, in_stride);
    const Tensor<float> pose = DenormalizePose(Predict(model, NormalizeKeypoints<float>(chunk)));
    out.vec().segment(w * out_stride, out_stride) = pose.vec();
  }
  WriteKeypoints(output, KeypointFile{kp.fps, std::move(out), {}});
  return kExitOk;
}

int RunEval(const std::string& pred_path, const std::string& gt_path, const std::string& protocol,
            Index root, const std::string& unit, bool center_only) {
  const KeypointFile pred = ReadKeypoints(pred_path);
  const KeypointFile gt = ReadKeypoints(gt_path);
  if (pred.dims() != 3 || gt.dims() != 3) {
    Fail(ErrorKind::kFormat, "eval: both files must hold 3D poses (dims 3)");
  }
  Tensor<double> p = pred.frames.Cast<double>(), g = gt.frames.Cast<double>();
  if (center_only) {
    p = CenterFrame(p);
    g = CenterFrame(g);
  }
  double value = 0;
  if (protocol == "p1") {
    value = MpjpeP1(p, g, root);
  } else if (protocol == "p2") {
    value = MpjpeP2(p, g);
  } else {
    Fail(ErrorKind::kConfig, "eval: unknown protocol '" + protocol + "'");
  }
  std::printf("%.4f%s%s\n", value, unit.empty() ? "" : " ", unit.c_str());
  return kExitOk;
}

int RunCount(const std::string& config, Index frames) {
  const ModelConfig cfg = ConfigOrDefault(config);
  const CountReport params = CountParams(cfg);
  const CountReport macs = CountMacs(cfg, frames);
  std::printf("params %lld\n", static_cast<long long>(params.total));
  std::printf("macs %lld\n", static_cast<long long>(macs.total));
  std::printf("macs_per_frame %.1f\n", static_cast<double>(macs.total) / static_cast<double>(frames));
  std::printf("\n%-16s %14s\n", "module", "params");
  for (const auto& e : params.ByModule()) {
    std::printf("%-16s %14lld\n", e.name.c_str(), static_cast<long long>(e.count));
  }
  std::printf("%-16s %14lld\n", "total", static_cast<long long>(params.total));
  std::printf("\n%-16s %14s\n", "module", "macs");
  for (const auto& e : macs.entries) {
    std::printf("%-16s %14lld\n", e.name.c_str(), static_cast<long long>(e.count));
  }
  std::printf("%-16s %14lld\n", "total", static_cast<long long>(macs.total));
  return kExitOk;
}

int RunGradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& e : RunGradSuite(seed)) {
    std::printf("%-24s %-4s max_rel_error %.3e over %lld elements\n", e.name.c_str(),
                e.passed ? "ok" : "FAIL", e.report.max_rel_error,
                static_cast<long long>(e.report.checked));
    ok = ok && e.passed;
  }
  return ok ? kExitOk : kExitNumerical;
}

int RunSynth(std::uint64_t seed, Index sequences, Index frames, Index joints, double noise,
             const std::string& out) {
  SyntheticOptions opts;
  opts.noise_sigma = noise;
  WriteDataset(out, GenSynthetic(seed, sequences, frames, joints, opts), opts.fps);
  return kExitOk;
}

int ExitCodeFor(ErrorKind kind) {
  return kind == ErrorKind::kNumerical ? kExitNumerical : kExitData;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SasMamba 3D pose lifting toolkit"};
  app.require_subcommand(1);

  std::string config, out, model, input, output, pred, gt, protocol = "p1", unit;
  std::uint64_t seed = 0;
  Index root = 0, frames = 243, sequences = 4, joints = 17;
  double noise = 0;
  bool center_only = false;
  TrainArgs train;

  auto* init = app.add_subcommand("init", "Initialize a model checkpoint");
  init->add_option("--config", config, "Model config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  init->add_option("--seed", seed, "Initialization seed");
  init->add_option("--out", out, "Output checkpoint")->required();

  auto* tr = app.add_subcommand("train", "Train a checkpoint on a dataset directory");
  tr->add_option("--data", train.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--model", train.model, "Input checkpoint")->required()->check(CLI::ExistingFile);
  tr->add_option("--epochs", train.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", train.batch, "Batch size")->check(CLI::PositiveNumber);
  tr->add_option("--out", train.out, "Output checkpoint")->required();
  tr->add_option("--trace", train.trace, "Per-epoch loss CSV");
  tr->add_option("--seed", train.seed, "Shuffling seed");
  tr->add_option("--lr", train.lr, "Base learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--max-steps", train.max_steps, "Stop after this many optimizer steps");

  auto* inf = app.add_subcommand("infer", "Lift a 2D keypoint file to 3D");
  inf->add_option("--model", model, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--input", input, "2D keypoint JSON")->required()->check(CLI::ExistingFile);
  inf->add_option("--output", output, "3D pose JSON")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate predictions against ground truth");
  ev->add_option("--pred", pred, "Predicted 3D poses")->required()->check(CLI::ExistingFile);
  ev->add_option("--gt", gt, "Ground-truth 3D poses")->required()->check(CLI::ExistingFile);
  ev->add_option("--protocol", protocol, "p1 or p2")->check(CLI::IsMember({"p1", "p2"}));
  ev->add_option("--root", root, "Root joint index for p1");
  ev->add_option("--unit", unit, "Unit label appended to the output");
  ev->add_flag("--center-only", center_only, "Evaluate only the middle frame");

  auto* cnt = app.add_subcommand("count", "Report parameter and MAC counts");
  cnt->add_option("--config", config, "Model config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  cnt->add_option("--frames", frames, "Frames per forward pass")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gc->add_option("--seed", seed, "Input seed");

  auto* syn = app.add_subcommand("synth", "Generate a synthetic motion dataset");
  syn->add_option("--seed", seed, "Generation seed");
  syn->add_option("--sequences", sequences, "Number of sequences")->check(CLI::PositiveNumber);
  syn->add_option("--frames", frames, "Frames per sequence")->check(CLI::PositiveNumber);
  syn->add_option("--joints", joints, "Joints per frame")->check(CLI::PositiveNumber);
  syn->add_option("--noise", noise, "Gaussian pixel noise sigma")->check(CLI::NonNegativeNumber);
  syn->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*init) return RunInit(config, seed, out);
    if (*tr) return RunTrain(train);
    if (*inf) return RunInfer(model, input, output);
    if (*ev) return RunEval(pred, gt, protocol, root, unit, center_only);
    if (*cnt) return RunCount(config, frames);
    if (*gc) return RunGradcheck(seed);
    if (*syn) return RunSynth(seed, sequences, frames, joints, noise, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitData;
  }
  return kExitUsage;
}
