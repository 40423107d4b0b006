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

#include "sasmamba/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>

namespace sasmamba {

void LossWeights::Validate(Index joints) const {
  if (!(lambda_t >= 0) || !(lambda_m >= 0)) {
    Fail(ErrorKind::kConfig, "loss lambdas must be >= 0");
  }
  if (joint_weights.empty()) return;
  if (static_cast<Index>(joint_weights.size()) != joints) {
    Fail(ErrorKind::kDimension, "joint_weights has " + std::to_string(joint_weights.size()) +
                                    " entries for " + std::to_string(joints) + " joints");
  }
  for (double w : joint_weights) {
    if (!(w > 0)) Fail(ErrorKind::kConfig, "joint weights must be > 0");
  }
}

namespace {

void RequirePose(const Shape& s, std::string_view op) {
  if (s.size() != 3 || s[2] != 3) {
    Fail(ErrorKind::kDimension,
         std::string(op) + ": expected a T x V x 3 pose sequence, got " + ShapeString(s));
  }
}

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;

template <typename Scalar>
Vec3<Scalar> Point(const Tensor<Scalar>& p, Index t, Index v) {
  const Index joints = p.dim(1);
  return Eigen::Map<const Vec3<Scalar>>(p.data() + (t * joints + v) * 3);
}

template <typename Scalar>
void AddPoint(Tensor<Scalar>& p, Index t, Index v, const Vec3<Scalar>& d) {
  const Index joints = p.dim(1);
  Eigen::Map<Vec3<Scalar>>(p.data() + (t * joints + v) * 3) += d;
}

template <typename Scalar>
Tensor<Scalar> ScalarTensor(Scalar x) {
  return Tensor<Scalar>({1}, {x});
}

}  // namespace

template <typename Scalar>
Var<Scalar> Wmpjpe(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                   const std::vector<double>& joint_weights) {
  RequirePose(pred.shape(), "wmpjpe");
  CheckShape(pred.shape() == gt.shape(), "wmpjpe", pred.shape(), gt.shape());
  const Index frames = pred.dim(0), joints = pred.dim(1);
  LossWeights{0, 0, joint_weights}.Validate(joints);
  auto weight = [joint_weights](Index v) {
    return joint_weights.empty() ? Scalar(1) : static_cast<Scalar>(joint_weights[v]);
  };
  const Scalar norm = Scalar(1) / static_cast<Scalar>(frames * joints);
  Scalar sum = 0;
  for (Index t = 0; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      sum += weight(v) * (Point(pred.value(), t, v) - Point(gt, t, v)).norm();
    }
  }
  return Tape<Scalar>::Record(ScalarTensor(sum * norm), {&pred}, [=] {
    return [=](const Tensor<Scalar>& g) {
      Tensor<Scalar>& gp = *pred.grad_sink();
      for (Index t = 0; t < frames; ++t) {
        for (Index v = 0; v < joints; ++v) {
          const Vec3<Scalar> d = Point(pred.value(), t, v) - Point(gt, t, v);
          const Scalar len = d.norm();
          if (len > 0) AddPoint(gp, t, v, Vec3<Scalar>(g[0] * norm * weight(v) * d / len));
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> TcLoss(const Var<Scalar>& pred, bool* short_input) {
  RequirePose(pred.shape(), "tc_loss");
  const Index frames = pred.dim(0), joints = pred.dim(1);
  if (short_input) *short_input = frames < 2;
  if (frames < 2) return Var<Scalar>::Constant(ScalarTensor(Scalar(0)));
  const Scalar norm = Scalar(1) / static_cast<Scalar>((frames - 1) * joints);
  Scalar sum = 0;
  for (Index t = 1; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      sum += (Point(pred.value(), t, v) - Point(pred.value(), t - 1, v)).squaredNorm();
    }
  }
  return Tape<Scalar>::Record(ScalarTensor(sum * norm), {&pred}, [=] {
    return [=](const Tensor<Scalar>& g) {
      Tensor<Scalar>& gp = *pred.grad_sink();
      for (Index t = 1; t < frames; ++t) {
        for (Index v = 0; v < joints; ++v) {
          const Vec3<Scalar> d =
              Scalar(2) * g[0] * norm * (Point(pred.value(), t, v) - Point(pred.value(), t - 1, v));
          AddPoint(gp, t, v, d);
          AddPoint(gp, t - 1, v, Vec3<Scalar>(-d));
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> Mpjve(const Var<Scalar>& pred, const Tensor<Scalar>& gt, bool* short_input) {
  RequirePose(pred.shape(), "mpjve");
  CheckShape(pred.shape() == gt.shape(), "mpjve", pred.shape(), gt.shape());
  const Index frames = pred.dim(0), joints = pred.dim(1);
  if (short_input) *short_input = frames < 2;
  if (frames < 2) return Var<Scalar>::Constant(ScalarTensor(Scalar(0)));
  const Scalar norm = Scalar(1) / static_cast<Scalar>((frames - 1) * joints);
  auto residual = [gt](const Tensor<Scalar>& p, Index t, Index v) -> Vec3<Scalar> {
    return (Point(p, t, v) - Point(p, t - 1, v)) - (Point(gt, t, v) - Point(gt, t - 1, v));
  };
  Scalar sum = 0;
  for (Index t = 1; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) sum += residual(pred.value(), t, v).norm();
  }
  return Tape<Scalar>::Record(ScalarTensor(sum * norm), {&pred}, [=] {
    return [=](const Tensor<Scalar>& g) {
      Tensor<Scalar>& gp = *pred.grad_sink();
      for (Index t = 1; t < frames; ++t) {
        for (Index v = 0; v < joints; ++v) {
          const Vec3<Scalar> r = residual(pred.value(), t, v);
          const Scalar len = r.norm();
          if (len == 0) continue;
          const Vec3<Scalar> d = g[0] * norm * r / len;
          AddPoint(gp, t, v, d);
          AddPoint(gp, t - 1, v, Vec3<Scalar>(-d));
        }
      }
    };
  });
}

template <typename Scalar>
LossTerms<Scalar> TotalLoss(const Var<Scalar>& pred, const Tensor<Scalar>& gt,
                            const LossWeights& weights) {
  weights.Validate(pred.shape().size() == 3 ? pred.dim(1) : 0);
  const Var<Scalar> w = Wmpjpe(pred, gt, weights.joint_weights);
  const Var<Scalar> tc = TcLoss(pred);
  const Var<Scalar> m = Mpjve(pred, gt);
  LossTerms<Scalar> out;
  out.total = Add(Add(w, Scale(tc, static_cast<Scalar>(weights.lambda_t))),
                  Scale(m, static_cast<Scalar>(weights.lambda_m)));
  out.wmpjpe = static_cast<double>(w.value()[0]);
  out.tcloss = static_cast<double>(tc.value()[0]);
  out.mpjve = static_cast<double>(m.value()[0]);
  return out;
}

double LrAt(Index epoch, double base, double factor) {
  if (epoch < 0) Fail(ErrorKind::kDomain, "lr_at: epoch must be >= 0");
  return base * std::pow(factor, static_cast<double>(epoch));
}

template <typename Scalar>
void OptimStep(const std::vector<Tensor<Scalar>*>& params,
               const std::vector<Tensor<Scalar>>& grads, OptimState<Scalar>& state,
               const OptimConfig& cfg, double lr) {
  if (params.size() != grads.size()) {
    Fail(ErrorKind::kDimension, "optim_step: " + std::to_string(params.size()) +
                                    " parameters but " + std::to_string(grads.size()) +
                                    " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    CheckShape(params[i]->shape() == grads[i].shape(), "optim_step", params[i]->shape(),
               grads[i].shape());
    if (!grads[i].AllFinite()) {
      Fail(ErrorKind::kNumerical, "optim_step: non-finite gradient for parameter " +
                                      std::to_string(i) + "; step rejected");
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const Scalar c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar eps = static_cast<Scalar>(cfg.epsilon);
  const Scalar step = static_cast<Scalar>(lr);
  const Scalar shrink = static_cast<Scalar>(1.0 - lr * cfg.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads[i].vec().array();
    auto m = state.m[i].vec().array();
    auto v = state.v[i].vec().array();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    auto p = params[i]->vec().array();
    p = p * shrink - step * (m * c1) / ((v * c2).sqrt() + eps);
  }
}

Tensor<float> Project(const Tensor<float>& pose3d, const Camera& camera) {
  RequirePose(pose3d.shape(), "project");
  const Index frames = pose3d.dim(0), joints = pose3d.dim(1);
  Tensor<float> out({frames, joints, 2});
  for (Index i = 0; i < frames * joints; ++i) {
    const double x = pose3d[3 * i] + camera.translation[0];
    const double y = pose3d[3 * i + 1] + camera.translation[1];
    const double z = pose3d[3 * i + 2] + camera.translation[2];
    if (!(z > 0)) Fail(ErrorKind::kDomain, "project: point behind the camera");
    out[2 * i] = static_cast<float>(camera.focal * x / z + camera.principal[0]);
    out[2 * i + 1] = static_cast<float>(camera.focal * y / z + camera.principal[1]);
  }
  return out;
}

Tensor<double> SkeletonTemplate(Index joints) {
  if (joints < 1) Fail(ErrorKind::kDomain, "skeleton template needs >= 1 joint");
  Tensor<double> t({joints, 3});
  if (joints == 17) {
    // pelvis, right leg, left leg, spine, thorax, nose, head, left arm, right
    // arm. Image-style axes: y points down.
    static constexpr double kJoints[17][3] = {
        {0, 0, 0},       {-130, 0, 0},    {-130, 450, 20},  {-130, 880, 0},
        {130, 0, 0},     {130, 450, 20},  {130, 880, 0},    {0, -230, 0},
        {0, -480, 0},    {0, -580, -40},  {0, -700, 0},     {170, -460, 0},
        {170, -190, 30}, {170, 40, 60},   {-170, -460, 0},  {-170, -190, 30},
        {-170, 40, 60}};
    for (Index v = 0; v < 17; ++v) {
      for (Index a = 0; a < 3; ++a) t.at(v, a) = kJoints[v][a];
    }
    return t;
  }
  // Helix of joints spanning roughly a body height.
  for (Index v = 0; v < joints; ++v) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(v) / static_cast<double>(joints);
    t.at(v, 0) = 200.0 * std::sin(phase);
    t.at(v, 1) = 900.0 * static_cast<double>(v) / static_cast<double>(joints) - 450.0;
    t.at(v, 2) = 200.0 * (1.0 - std::cos(phase));
  }
  return t;
}

SyntheticDataset GenSynthetic(std::uint64_t seed, Index sequences, Index frames, Index joints,
                              const SyntheticOptions& opts) {
  if (sequences < 1 || frames < 1 || joints < 1) {
    Fail(ErrorKind::kDomain, "gen_synthetic: sequences, frames and joints must be >= 1");
  }
  Rng rng(seed);
  const Tensor<double> base = SkeletonTemplate(joints);
  SyntheticDataset ds;
  ds.seed = seed;
  for (Index s = 0; s < sequences; ++s) {
    const Index harmonics = 2 + rng.UniformIndex(3);
    const double yaw = rng.Uniform(-std::numbers::pi, std::numbers::pi);
    const double cy = std::cos(yaw), sy = std::sin(yaw);
    std::vector<double> freq(harmonics);
    for (auto& f : freq) f = 2.0 * std::numbers::pi * rng.Uniform(0.2, 1.5) / opts.fps;
    Tensor<double> amp({harmonics, joints, 3});
    Tensor<double> phase({harmonics, joints, 3});
    for (Index i = 0; i < amp.size(); ++i) {
      amp[i] = opts.amplitude_scale * rng.Uniform(0.0, 60.0);
      phase[i] = rng.Uniform(0.0, 2.0 * std::numbers::pi);
    }
    Sample sample;
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04lld", static_cast<long long>(s));
    sample.name = name;
    sample.camera.translation = {rng.Uniform(-300.0, 300.0), rng.Uniform(-300.0, 300.0),
                                 rng.Uniform(4500.0, 5500.0)};
    Tensor<double> world({frames, joints, 3});
    for (Index t = 0; t < frames; ++t) {
      for (Index v = 0; v < joints; ++v) {
        double p[3];
        for (Index a = 0; a < 3; ++a) {
          p[a] = base.at(v, a);
          for (Index h = 0; h < harmonics; ++h) {
            p[a] += amp.at(h, v, a) * std::sin(freq[h] * static_cast<double>(t) + phase.at(h, v, a));
          }
        }
        // Yaw about the vertical (y) axis.
        world.at(t, v, 0) = cy * p[0] + sy * p[2];
        world.at(t, v, 1) = p[1];
        world.at(t, v, 2) = -sy * p[0] + cy * p[2];
      }
    }
    sample.pose = Tensor<float>({frames, joints, 3});
    for (Index t = 0; t < frames; ++t) {
      for (Index v = 0; v < joints; ++v) {
        for (Index a = 0; a < 3; ++a) {
          sample.pose.at(t, v, a) = static_cast<float>(world.at(t, v, a) - world.at(t, 0, a));
        }
      }
    }
    sample.keypoints = Project(sample.pose, sample.camera);
    if (opts.noise_sigma > 0) {
      for (Index i = 0; i < sample.keypoints.size(); ++i) {
        sample.keypoints[i] += static_cast<float>(rng.Normal(0.0, opts.noise_sigma));
      }
    }
    ds.samples.push_back(std::move(sample));
  }
  return ds;
}

template <typename Scalar>
Tensor<Scalar> NormalizeKeypoints(const Tensor<float>& keypoints) {
  Tensor<Scalar> out = keypoints.Cast<Scalar>();
  out.vec() /= static_cast<Scalar>(kInputScale);
  return out;
}

template <typename Scalar>
Tensor<Scalar> NormalizePose(const Tensor<float>& pose) {
  Tensor<Scalar> out = pose.Cast<Scalar>();
  out.vec() /= static_cast<Scalar>(kOutputScale);
  return out;
}

template <typename Scalar>
Tensor<float> DenormalizePose(const Tensor<Scalar>& pose) {
  Tensor<Scalar> scaled = pose;
  scaled.vec() *= static_cast<Scalar>(kOutputScale);
  return scaled.template Cast<float>();
}

std::vector<Index> EpochOrder(Index n, std::uint64_t seed, Index epoch) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch + 1)));
  for (Index i = n - 1; i > 0; --i) std::swap(order[i], order[rng.UniformIndex(i + 1)]);
  return order;
}

template <typename Scalar>
TrainResult Train(Model<Scalar>& model, const std::vector<Sample>& data,
                  const TrainOptions& opts) {
  TrainResult result;
  if (opts.epochs <= 0) return result;
  if (data.empty()) Fail(ErrorKind::kValue, "train: dataset is empty");
  if (opts.batch < 1) Fail(ErrorKind::kConfig, "train: batch must be >= 1");
  opts.loss.Validate(model.config.v);

  std::vector<Tensor<Scalar>*> params;
  VisitModel(model, [&](const std::string&, Tensor<Scalar>& t) { params.push_back(&t); });
  std::vector<Tensor<Scalar>> inputs, targets;
  for (const auto& s : data) {
    inputs.push_back(NormalizeKeypoints<Scalar>(s.keypoints));
    targets.push_back(NormalizePose<Scalar>(s.pose));
  }
  OptimState<Scalar> state;
  const Index n = static_cast<Index>(data.size());

  for (Index epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = LrAt(epoch, opts.optim.lr, opts.optim.lr_decay);
    const std::vector<Index> order = EpochOrder(n, opts.seed, epoch);
    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    Index seen = 0;
    bool stop = false;
    for (Index begin = 0; begin < n && !stop; begin += opts.batch) {
      const Index end = std::min(n, begin + opts.batch);
      const Scalar inv = Scalar(1) / static_cast<Scalar>(end - begin);
      std::vector<Tensor<Scalar>> grads;
      for (const auto* p : params) grads.emplace_back(p->shape());
      for (Index i = begin; i < end; ++i) {
        const Index item = order[i];
        const auto diverged = [&](const std::string& what) {
          Fail(ErrorKind::kNumerical, "training diverged at epoch " + std::to_string(epoch) +
                                          ", step " + std::to_string(result.steps) +
                                          ", sample '" + data[item].name + "': " + what);
        };
        Tape<Scalar> tape;
        ParamBinder<Scalar> bind(tape);
        std::optional<LossTerms<Scalar>> maybe_terms;
        try {
          const Var<Scalar> pred = Forward(model, Var<Scalar>::Constant(inputs[item]), bind);
          maybe_terms = TotalLoss(pred, targets[item], opts.loss);
        } catch (const Error& e) {
          // Checked mode reports the first non-finite intermediate.
          if (e.kind() != ErrorKind::kValue) throw;
          diverged(e.what());
        }
        const LossTerms<Scalar>& terms = *maybe_terms;
        const double total = static_cast<double>(terms.total.value()[0]);
        if (!std::isfinite(total)) diverged("non-finite loss");
        tape.Backward(Scale(terms.total, inv));
        for (std::size_t k = 0; k < params.size(); ++k) {
          grads[k].vec() += bind.GradOf(*params[k]).vec();
        }
        stats.total += total;
        stats.wmpjpe += terms.wmpjpe;
        stats.tcloss += terms.tcloss;
        stats.mpjve += terms.mpjve;
        ++seen;
      }
      OptimStep(params, grads, state, opts.optim, lr);
      ++result.steps;
      stop = opts.max_steps > 0 && result.steps >= opts.max_steps;
    }
    const double denom = static_cast<double>(seen);
    stats.total /= denom;
    stats.wmpjpe /= denom;
    stats.tcloss /= denom;
    stats.mpjve /= denom;
    result.trace.push_back(stats);
    if (opts.on_epoch) opts.on_epoch(stats);
    if (stop) break;
  }
  return result;
}

std::string TraceToCsv(const std::vector<EpochStats>& trace) {
  std::ostringstream out;
  out << "epoch,lr,total,wmpjpe,tcloss,mpjve\n";
  char line[256];
  for (const auto& e : trace) {
    std::snprintf(line, sizeof(line), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(e.epoch), e.lr, e.total, e.wmpjpe, e.tcloss, e.mpjve);
    out << line;
  }
  return out.str();
}

#define SASMAMBA_INSTANTIATE_TRAINING(S)                                               \
  template Var<S> Wmpjpe(const Var<S>&, const Tensor<S>&, const std::vector<double>&); \
  template Var<S> TcLoss(const Var<S>&, bool*);                                        \
  template Var<S> Mpjve(const Var<S>&, const Tensor<S>&, bool*);                       \
  template LossTerms<S> TotalLoss(const Var<S>&, const Tensor<S>&, const LossWeights&); \
  template void OptimStep(const std::vector<Tensor<S>*>&, const std::vector<Tensor<S>>&, \
                          OptimState<S>&, const OptimConfig&, double);                 \
  template Tensor<S> NormalizeKeypoints<S>(const Tensor<float>&);                      \
  template Tensor<S> NormalizePose<S>(const Tensor<float>&);                           \
  template Tensor<float> DenormalizePose(const Tensor<S>&);                            \
  template TrainResult Train(Model<S>&, const std::vector<Sample>&, const TrainOptions&);

SASMAMBA_INSTANTIATE_TRAINING(float)
SASMAMBA_INSTANTIATE_TRAINING(double)

}  // namespace sasmamba
