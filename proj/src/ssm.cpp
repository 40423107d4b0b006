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

#include "sasmamba/ssm.hpp"

#include <cmath>

namespace sasmamba {
namespace {

template <typename Scalar>
using StateArray =
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void RequirePositiveDelta(const Tensor<Scalar>& delta) {
  if (!(delta.vec().array() > Scalar(0)).all()) {
    Fail(ErrorKind::kDomain, "step size delta must be strictly positive");
  }
}

template <typename Scalar>
Scalar InverseSoftplus(Scalar y) {
  return y + std::log(-std::expm1(-y));
}

}  // namespace

template <typename Scalar>
SelectiveSsmParams<Scalar> InitSelectiveSsm(Index channels, Index state_size,
                                            Index dt_rank, Rng& rng) {
  if (channels < 1 || state_size < 1 || dt_rank < 1) {
    Fail(ErrorKind::kConfig, "selective ssm needs D, N, r >= 1");
  }
  SelectiveSsmParams<Scalar> p;
  p.a_log = Tensor<Scalar>({channels, state_size});
  for (Index d = 0; d < channels; ++d) {
    for (Index n = 0; n < state_size; ++n) {
      p.a_log.at(d, n) = static_cast<Scalar>(std::log(static_cast<double>(n + 1)));
    }
  }
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(channels));
  p.b_proj.weight = UniformTensor<Scalar>({state_size, channels}, -in_bound, in_bound, rng);
  p.c_proj.weight = UniformTensor<Scalar>({state_size, channels}, -in_bound, in_bound, rng);
  p.dt_down.weight = UniformTensor<Scalar>({dt_rank, channels}, -in_bound, in_bound, rng);
  const double rank_bound = 1.0 / std::sqrt(static_cast<double>(dt_rank));
  p.dt_up.weight = UniformTensor<Scalar>({channels, dt_rank}, -rank_bound, rank_bound, rng);
  p.dt_up.bias = Tensor<Scalar>({channels});
  for (Index d = 0; d < channels; ++d) {
    const double dt = std::exp(rng.Uniform(std::log(1e-3), std::log(1e-1)));
    p.dt_up.bias[d] = static_cast<Scalar>(InverseSoftplus(dt));
  }
  p.skip = Tensor<Scalar>::Constant({channels}, Scalar(1));
  return p;
}

template <typename Scalar>
Discretized<Scalar> Discretize(const Tensor<Scalar>& delta,
                               const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (delta.rank() != 2 || a.rank() != 2 || b.rank() != 2 ||
      delta.dim(1) != a.dim(0) || b.dim(0) != delta.dim(0) || b.dim(1) != a.dim(1)) {
    Fail(ErrorKind::kDimension, "discretize: delta " + ShapeString(delta.shape()) +
                                    ", A " + ShapeString(a.shape()) + ", B " +
                                    ShapeString(b.shape()) + " are inconsistent");
  }
  RequirePositiveDelta(delta);
  const Index steps = delta.dim(0), channels = a.dim(0), states = a.dim(1);
  Discretized<Scalar> out{Tensor<Scalar>({steps, channels, states}),
                          Tensor<Scalar>({steps, channels, states})};
  for (Index t = 0; t < steps; ++t) {
    for (Index d = 0; d < channels; ++d) {
      for (Index n = 0; n < states; ++n) {
        const auto zoh = ZohStep(delta.at(t, d), a.at(d, n));
        out.a_bar.at(t, d, n) = zoh.a_bar;
        out.b_bar.at(t, d, n) = zoh.gain * b.at(t, n);
      }
    }
  }
  return out;
}

template <typename Scalar>
Var<Scalar> SelectiveScanCore(const Var<Scalar>& u, const Var<Scalar>& delta,
                              const Var<Scalar>& a_log, const Var<Scalar>& b,
                              const Var<Scalar>& c, const Var<Scalar>& skip) {
  if (u.value().rank() != 2 || a_log.value().rank() != 2) {
    Fail(ErrorKind::kDimension, "selective_scan: u must be [L, D] and a_log [D, N], got " +
                                    ShapeString(u.shape()) + " and " +
                                    ShapeString(a_log.shape()));
  }
  const Index steps = u.dim(0), channels = u.dim(1), states = a_log.dim(1);
  const bool consistent = a_log.dim(0) == channels && delta.shape() == u.shape() &&
                          b.shape() == Shape{steps, states} &&
                          c.shape() == Shape{steps, states} && skip.size() == channels;
  if (!consistent) {
    Fail(ErrorKind::kDimension,
         "selective_scan: inconsistent shapes u " + ShapeString(u.shape()) + ", delta " +
             ShapeString(delta.shape()) + ", a_log " + ShapeString(a_log.shape()) +
             ", B " + ShapeString(b.shape()) + ", C " + ShapeString(c.shape()) +
             ", skip " + ShapeString(skip.shape()));
  }
  CheckFinite(u.value(), "selective_scan");
  CheckFinite(delta.value(), "selective_scan delta");
  RequirePositiveDelta(delta.value());

  const StateArray<Scalar> a = -a_log.value().matrix().array().exp();
  const auto um = u.value().matrix();
  const auto dm = delta.value().matrix();
  const auto bm = b.value().matrix();
  const auto cm = c.value().matrix();
  const auto& sv = skip.value().vec();

  const bool keep_history = u.requires_grad() || delta.requires_grad() ||
                            a_log.requires_grad() || b.requires_grad() ||
                            c.requires_grad() || skip.requires_grad();
  // Post-update states h_1 ... h_L, row-major [L, D * N].
  RowMatrix<Scalar> history;
  if (keep_history) history.resize(steps, channels * states);

  Tensor<Scalar> y({steps, channels});
  StateArray<Scalar> h = StateArray<Scalar>::Zero(channels, states);
  for (Index t = 0; t < steps; ++t) {
    for (Index d = 0; d < channels; ++d) {
      const Scalar ud = um(t, d);
      const Scalar dt = dm(t, d);
      Scalar acc = 0;
      for (Index n = 0; n < states; ++n) {
        const auto zoh = ZohStep(dt, a(d, n));
        h(d, n) = zoh.a_bar * h(d, n) + zoh.gain * bm(t, n) * ud;
        acc += cm(t, n) * h(d, n);
      }
      y.at(t, d) = acc + sv[d] * ud;
    }
    if (keep_history) {
      history.row(t) = Eigen::Map<const Vector<Scalar>>(h.data(), channels * states);
    }
  }

  return Tape<Scalar>::Record(
      std::move(y), {&u, &delta, &a_log, &b, &c, &skip},
      [=, history = std::move(history)] {
        return [=](const Tensor<Scalar>& g) {
          const auto um = u.value().matrix();
          const auto dm = delta.value().matrix();
          const auto bm = b.value().matrix();
          const auto cm = c.value().matrix();
          const auto& sv = skip.value().vec();
          const auto gm = g.matrix();
          Tensor<Scalar>* gu = u.grad_sink();
          Tensor<Scalar>* gdelta = delta.grad_sink();
          Tensor<Scalar>* gb = b.grad_sink();
          Tensor<Scalar>* gc = c.grad_sink();
          Tensor<Scalar>* gskip = skip.grad_sink();
          StateArray<Scalar> ga = StateArray<Scalar>::Zero(channels, states);
          // Gradient w.r.t. h_t, carried backwards through a_bar.
          StateArray<Scalar> gh = StateArray<Scalar>::Zero(channels, states);
          for (Index t = steps - 1; t >= 0; --t) {
            const auto h_t = history.row(t);
            for (Index d = 0; d < channels; ++d) {
              const Scalar gy = gm(t, d);
              const Scalar ud = um(t, d);
              const Scalar dt = dm(t, d);
              if (gskip) (*gskip)[d] += gy * ud;
              if (gu) gu->at(t, d) += gy * sv[d];
              Scalar gdt = 0;
              Scalar gud = 0;
              for (Index n = 0; n < states; ++n) {
                const Index dn = d * states + n;
                const Scalar h_prev = t > 0 ? history(t - 1, dn) : Scalar(0);
                if (gc) gc->at(t, n) += gy * h_t[dn];
                const Scalar ght = gh(d, n) + gy * cm(t, n);
                const auto zoh = ZohStep(dt, a(d, n));
                const Scalar g_abar = ght * h_prev;
                const Scalar g_gain = ght * bm(t, n) * ud;
                if (gb) gb->at(t, n) += ght * zoh.gain * ud;
                gud += ght * zoh.gain * bm(t, n);
                gdt += g_abar * a(d, n) * zoh.a_bar + g_gain * zoh.dgain_ddelta;
                ga(d, n) += g_abar * dt * zoh.a_bar + g_gain * zoh.dgain_da;
                gh(d, n) = ght * zoh.a_bar;
              }
              if (gu) gu->at(t, d) += gud;
              if (gdelta) gdelta->at(t, d) += gdt;
            }
          }
          if (auto* ga_log = a_log.grad_sink()) {
            // d A / d a_log = A.
            ga_log->matrix().array() += ga * a;
          }
        };
      });
}

template <typename Scalar>
Var<Scalar> SelectiveScan(const Var<Scalar>& u, const SelectiveSsmParams<Scalar>& p,
                          ParamBinder<Scalar>& bind) {
  if (u.value().rank() != 2 || u.dim(1) != p.channels()) {
    Fail(ErrorKind::kDimension, "selective_scan: input " + ShapeString(u.shape()) +
                                    " does not match " + std::to_string(p.channels()) +
                                    " channels");
  }
  const Var<Scalar> delta = Softplus(Linear(Linear(u, p.dt_down, bind), p.dt_up, bind));
  const Var<Scalar> b = Linear(u, p.b_proj, bind);
  const Var<Scalar> c = Linear(u, p.c_proj, bind);
  return SelectiveScanCore(u, delta, bind(p.a_log), b, c, bind(p.skip));
}

template <typename Scalar>
Var<Scalar> SelectiveScanFrozen(const Var<Scalar>& u, const Tensor<Scalar>& a_log,
                                const FrozenProjections<Scalar>& frozen,
                                const Tensor<Scalar>& skip) {
  const Index steps = u.dim(0);
  auto tile = [steps](const Tensor<Scalar>& row) {
    Tensor<Scalar> out({steps, row.size()});
    out.matrix().rowwise() = row.vec().transpose();
    return Var<Scalar>::Constant(std::move(out));
  };
  return SelectiveScanCore(u, tile(frozen.delta), Var<Scalar>::Constant(a_log),
                           tile(frozen.b), tile(frozen.c), Var<Scalar>::Constant(skip));
}

template <typename Scalar>
TimeInvariantSsm<Scalar> Freeze(const Tensor<Scalar>& a_log,
                                const FrozenProjections<Scalar>& frozen) {
  const Index channels = a_log.dim(0), states = a_log.dim(1);
  Tensor<Scalar> delta({1, channels}, frozen.delta.vec());
  Tensor<Scalar> a({channels, states}, -a_log.vec().array().exp().matrix());
  Tensor<Scalar> b({1, states}, frozen.b.vec());
  const Discretized<Scalar> disc = Discretize(delta, a, b);
  TimeInvariantSsm<Scalar> ssm;
  ssm.a_bar = disc.a_bar.Reshaped({channels, states});
  ssm.b_bar = disc.b_bar.Reshaped({channels, states});
  ssm.c = Tensor<Scalar>({channels, states});
  ssm.c.matrix().rowwise() = frozen.c.vec().transpose();
  return ssm;
}

template <typename Scalar>
Tensor<Scalar> SsmKernel(const TimeInvariantSsm<Scalar>& ssm, Index length) {
  if (length <= 0) {
    Fail(ErrorKind::kDomain, "ssm_kernel: length must be positive, got " +
                                 std::to_string(length));
  }
  const Index channels = ssm.a_bar.dim(0);
  Tensor<Scalar> kernel({length, channels});
  // power = a_bar^k b_bar, advanced one step per row.
  StateArray<Scalar> power = ssm.b_bar.matrix().array();
  const auto a_bar = ssm.a_bar.matrix().array();
  const auto c = ssm.c.matrix().array();
  for (Index k = 0; k < length; ++k) {
    kernel.matrix().row(k) = (c * power).rowwise().sum().transpose();
    power *= a_bar;
  }
  return kernel;
}

template <typename Scalar>
Tensor<Scalar> ConvApply(const Tensor<Scalar>& u, const Tensor<Scalar>& kernel,
                         const Tensor<Scalar>& skip) {
  if (u.rank() != 2 || kernel.shape() != u.shape() || skip.size() != u.dim(1)) {
    Fail(ErrorKind::kDimension, "conv_apply: sequence " + ShapeString(u.shape()) +
                                    ", kernel " + ShapeString(kernel.shape()) +
                                    ", skip " + ShapeString(skip.shape()) +
                                    " are inconsistent");
  }
  const Index steps = u.dim(0);
  Tensor<Scalar> y({steps, u.dim(1)});
  const auto um = u.matrix();
  const auto km = kernel.matrix();
  for (Index t = 0; t < steps; ++t) {
    auto row = y.matrix().row(t);
    for (Index s = 0; s <= t; ++s) row += km.row(t - s).cwiseProduct(um.row(s));
    row += skip.vec().transpose().cwiseProduct(um.row(t));
  }
  return y;
}

#define SASMAMBA_INSTANTIATE_SSM(S)                                                \
  template SelectiveSsmParams<S> InitSelectiveSsm<S>(Index, Index, Index, Rng&);   \
  template Discretized<S> Discretize(const Tensor<S>&, const Tensor<S>&,           \
                                     const Tensor<S>&);                            \
  template Var<S> SelectiveScanCore(const Var<S>&, const Var<S>&, const Var<S>&,   \
                                    const Var<S>&, const Var<S>&, const Var<S>&);  \
  template Var<S> SelectiveScan(const Var<S>&, const SelectiveSsmParams<S>&,       \
                                ParamBinder<S>&);                                  \
  template Var<S> SelectiveScanFrozen(const Var<S>&, const Tensor<S>&,             \
                                      const FrozenProjections<S>&, const Tensor<S>&); \
  template TimeInvariantSsm<S> Freeze(const Tensor<S>&, const FrozenProjections<S>&); \
  template Tensor<S> SsmKernel(const TimeInvariantSsm<S>&, Index);                 \
  template Tensor<S> ConvApply(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);

SASMAMBA_INSTANTIATE_SSM(float)
SASMAMBA_INSTANTIATE_SSM(double)

}  // namespace sasmamba
