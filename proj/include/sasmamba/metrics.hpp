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

// Pose evaluation protocols.

#pragma once

#include <Eigen/Core>

#include "sasmamba/tensor.hpp"

namespace sasmamba {

using PointCloud = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// x -> scale R x + translation.
struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  PointCloud Apply(const PointCloud& points) const;
};

struct Alignment {
  SimilarityTransform transform;
  PointCloud aligned;
};

/// Least-squares similarity alignment of pred onto gt (Umeyama), restricted to
/// proper rotations. Throws a degeneracy error when gt or pred spans fewer than
/// two dimensions.
Alignment ProcrustesAlign(const PointCloud& pred, const PointCloud& gt);

/// Joints of frame t of a [T, V, 3] sequence.
PointCloud FramePoints(const Tensor<double>& seq, Index t);

/// Mean per-joint distance after subtracting the root joint per frame.
double MpjpeP1(const Tensor<double>& pred, const Tensor<double>& gt, Index root);

/// Mean per-joint distance after per-frame Procrustes alignment.
double MpjpeP2(const Tensor<double>& pred, const Tensor<double>& gt);

/// Mean per-joint velocity error, in the units of the inputs.
double MpjveMetric(const Tensor<double>& pred, const Tensor<double>& gt);

/// Middle frame T / 2 of a sequence, as a one-frame sequence.
Tensor<double> CenterFrame(const Tensor<double>& seq);

}  // namespace sasmamba
