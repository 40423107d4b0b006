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

// Losses, AdamW, the learning-rate schedule, synthetic motion and the
// minibatch training loop.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sasmamba/model.hpp"

namespace sasmamba {

// Pose sequences are [T, V, 3]; keypoint sequences are [T, V, 2].

struct LossWeights {
  double lambda_t = 0.5;
  double lambda_m = 20.0;
  std::vector<double> joint_weights;  // empty means all ones

  void Validate(Index joints) const;
};

/// (1 / TV) sum_{t,v} w_v |pred - gt|.
template <typename Scalar>
Var<Scalar> Wmpjpe(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                   const std::vector<double>& joint_weights = {});

/// (1 / (T-1)V) sum_{t>=1,v} |pred_t - pred_{t-1}|^2. Zero, with *short_input
/// set, when T < 2.
template <typename Scalar>
Var<Scalar> TcLoss(const Var<Scalar>& pred, bool* short_input = nullptr);

/// (1 / (T-1)V) sum |(pred_t - pred_{t-1}) - (gt_t - gt_{t-1})|.
template <typename Scalar>
Var<Scalar> Mpjve(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                  bool* short_input = nullptr);

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  double wmpjpe = 0;
  double tcloss = 0;
  double mpjve = 0;
};

/// wmpjpe + lambda_t tcloss + lambda_m mpjve.
template <typename Scalar>
LossTerms<Scalar> TotalLoss(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                            const LossWeights& weights);

struct OptimConfig {
  double lr = 5e-4;
  double lr_decay = 0.99;  // per epoch
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

double LrAt(Index epoch, double base, double factor);

template <typename Scalar>
struct OptimState {
  std::vector<Tensor<Scalar>> m;
  std::vector<Tensor<Scalar>> v;
  std::int64_t step = 0;
};

/// One AdamW update with bias correction and decoupled decay:
///   p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
/// Throws a numerical error, leaving everything untouched, on a non-finite
/// gradient.
template <typename Scalar>
void OptimStep(const std::vector<Tensor<Scalar>*>& params,
               const std::vector<Tensor<Scalar>>& grads, OptimState<Scalar>& state,
               const OptimConfig& cfg, double lr);

// Synthetic motion.

struct Camera {
  double focal = 1000.0;
  std::array<double, 2> principal{0.0, 0.0};
  std::array<double, 3> translation{0.0, 0.0, 5000.0};
};

/// Pinhole projection of camera-frame points shifted by the camera
/// translation.
Tensor<float> Project(const Tensor<float>& pose3d, const Camera& camera);

struct Sample {
  std::string name;
  Tensor<float> keypoints;  // [T, V, 2] pixels
  Tensor<float> pose;       // [T, V, 3] millimetres, root-centred
  Camera camera;
};

struct SyntheticOptions {
  double noise_sigma = 0.0;      // pixels
  double amplitude_scale = 1.0;  // 0 gives a static pose
  double fps = 50.0;
};

struct SyntheticDataset {
  std::uint64_t seed = 0;
  std::vector<Sample> samples;
};

/// Joint template in millimetres; Human3.6M-like layout for 17 joints.
Tensor<double> SkeletonTemplate(Index joints);

SyntheticDataset GenSynthetic(std::uint64_t seed, Index sequences, Index frames,
                              Index joints, const SyntheticOptions& opts = {});

// Fixed normalisation between file units and model units.
inline constexpr double kInputScale = 1000.0;   // pixels per model input unit
inline constexpr double kOutputScale = 1000.0;  // millimetres per model output unit

template <typename Scalar>
Tensor<Scalar> NormalizeKeypoints(const Tensor<float>& keypoints);
template <typename Scalar>
Tensor<Scalar> NormalizePose(const Tensor<float>& pose);
template <typename Scalar>
Tensor<float> DenormalizePose(const Tensor<Scalar>& pose);

struct EpochStats {
  Index epoch = 0;
  double lr = 0;
  double total = 0;
  double wmpjpe = 0;
  double tcloss = 0;
  double mpjve = 0;
};

struct TrainOptions {
  Index epochs = 1;
  Index batch = 16;
  std::uint64_t seed = 0;  // shuffling
  OptimConfig optim;
  LossWeights loss;
  /// Stops after this many optimizer steps when positive.
  std::int64_t max_steps = 0;
  /// Called after every epoch.
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  std::int64_t steps = 0;
};

/// Minibatch AdamW over shuffled samples; batch loss is the mean over items.
template <typename Scalar>
TrainResult Train(Model<Scalar>& model, const std::vector<Sample>& data,
                  const TrainOptions& opts);

/// Fisher-Yates permutation of [0, n) fixed by (seed, epoch).
std::vector<Index> EpochOrder(Index n, std::uint64_t seed, Index epoch);

std::string TraceToCsv(const std::vector<EpochStats>& trace);

}  // namespace sasmamba
