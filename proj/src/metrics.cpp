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

#include "sasmamba/metrics.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

namespace sasmamba {
namespace {

void RequirePair(const Tensor<double>& pred, const Tensor<double>& gt, std::string_view op) {
  if (pred.rank() != 3 || pred.dim(2) != 3) {
    Fail(ErrorKind::kDimension,
         std::string(op) + ": expected T x V x 3 poses, got " + ShapeString(pred.shape()));
  }
  CheckShape(pred.shape() == gt.shape(), op, pred.shape(), gt.shape());
}

// Relative rank threshold on the singular values of a centred cloud.
constexpr double kRankTolerance = 1e-9;

bool SpansPlane(const PointCloud& centred) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centred);
  const auto& s = svd.singularValues();
  return s.size() >= 2 && s[0] > 0 && s[1] > kRankTolerance * s[0];
}

}  // namespace

PointCloud SimilarityTransform::Apply(const PointCloud& points) const {
  PointCloud out = (scale * points * rotation.transpose()).rowwise() + translation.transpose();
  return out;
}

Alignment ProcrustesAlign(const PointCloud& pred, const PointCloud& gt) {
  if (pred.rows() != gt.rows()) {
    Fail(ErrorKind::kDimension, "procrustes_align: " + std::to_string(pred.rows()) + " vs " +
                                    std::to_string(gt.rows()) + " points");
  }
  if (pred.rows() < 3) {
    Fail(ErrorKind::kDegeneracy, "procrustes_align: needs at least 3 points");
  }
  const double count = static_cast<double>(pred.rows());
  const Eigen::RowVector3d mu_p = pred.colwise().mean();
  const Eigen::RowVector3d mu_g = gt.colwise().mean();
  const PointCloud p = pred.rowwise() - mu_p;
  const PointCloud g = gt.rowwise() - mu_g;
  if (!SpansPlane(g)) Fail(ErrorKind::kDegeneracy, "procrustes_align: degenerate gt points");
  if (!SpansPlane(p)) Fail(ErrorKind::kDegeneracy, "procrustes_align: degenerate pred points");

  const Eigen::Matrix3d cov = g.transpose() * p / count;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Vector3d flip = Eigen::Vector3d::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) flip[2] = -1;

  Alignment out;
  SimilarityTransform& tf = out.transform;
  tf.rotation = svd.matrixU() * flip.asDiagonal() * svd.matrixV().transpose();
  const double var_p = p.squaredNorm() / count;
  tf.scale = svd.singularValues().dot(flip) / var_p;
  tf.translation = mu_g.transpose() - tf.scale * tf.rotation * mu_p.transpose();
  out.aligned = tf.Apply(pred);
  return out;
}

PointCloud FramePoints(const Tensor<double>& seq, Index t) {
  const Index joints = seq.dim(1);
  return Eigen::Map<const PointCloud>(seq.data() + t * joints * 3, joints, 3);
}

double MpjpeP1(const Tensor<double>& pred, const Tensor<double>& gt, Index root) {
  RequirePair(pred, gt, "mpjpe_p1");
  const Index frames = pred.dim(0), joints = pred.dim(1);
  if (root < 0 || root >= joints) {
    Fail(ErrorKind::kIndex, "mpjpe_p1: root index " + std::to_string(root) + " outside [0, " +
                                std::to_string(joints) + ")");
  }
  double sum = 0;
  for (Index t = 0; t < frames; ++t) {
    const PointCloud p = FramePoints(pred, t);
    const PointCloud g = FramePoints(gt, t);
    const PointCloud pr = p.rowwise() - p.row(root);
    const PointCloud gr = g.rowwise() - g.row(root);
    sum += (pr - gr).rowwise().norm().sum();
  }
  return sum / static_cast<double>(frames * joints);
}

double MpjpeP2(const Tensor<double>& pred, const Tensor<double>& gt) {
  RequirePair(pred, gt, "mpjpe_p2");
  const Index frames = pred.dim(0), joints = pred.dim(1);
  double sum = 0;
  for (Index t = 0; t < frames; ++t) {
    const PointCloud g = FramePoints(gt, t);
    const Alignment a = ProcrustesAlign(FramePoints(pred, t), g);
    sum += (a.aligned - g).rowwise().norm().sum();
  }
  return sum / static_cast<double>(frames * joints);
}

double MpjveMetric(const Tensor<double>& pred, const Tensor<double>& gt) {
  RequirePair(pred, gt, "mpjve");
  const Index frames = pred.dim(0), joints = pred.dim(1);
  if (frames < 2) return 0.0;
  double sum = 0;
  for (Index t = 1; t < frames; ++t) {
    const PointCloud vp = FramePoints(pred, t) - FramePoints(pred, t - 1);
    const PointCloud vg = FramePoints(gt, t) - FramePoints(gt, t - 1);
    sum += (vp - vg).rowwise().norm().sum();
  }
  return sum / static_cast<double>((frames - 1) * joints);
}

Tensor<double> CenterFrame(const Tensor<double>& seq) {
  if (seq.rank() != 3) {
    Fail(ErrorKind::kDimension, "center frame: expected T x V x dims, got " +
                                    ShapeString(seq.shape()));
  }
  const Index t = seq.dim(0) / 2;
  const Index stride = seq.dim(1) * seq.dim(2);
  Tensor<double> out({1, seq.dim(1), seq.dim(2)});
  out.vec() = seq.vec().segment(t * stride, stride);
  return out;
}

}  // namespace sasmamba
