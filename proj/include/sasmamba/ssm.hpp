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

// Selective state-space scan with zero-order-hold discretization.
//
// Shapes: a sequence u is [L, D]; the state matrix is diagonal per channel and
// stored as a_log [D, N] with A = -exp(a_log); B and C are [L, N] and shared
// by all channels; the step size delta is [L, D].

#pragma once

#include "sasmamba/autodiff.hpp"
#include "sasmamba/ops.hpp"
#include "sasmamba/random.hpp"

namespace sasmamba {

template <typename Scalar>
struct SelectiveSsmParams {
  Tensor<Scalar> a_log;          // [D, N]
  LinearParams<Scalar> b_proj;   // D -> N, no bias
  LinearParams<Scalar> c_proj;   // D -> N, no bias
  LinearParams<Scalar> dt_down;  // D -> r, no bias
  LinearParams<Scalar> dt_up;    // r -> D, with bias
  Tensor<Scalar> skip;           // [D]

  Index channels() const { return a_log.dim(0); }
  Index state_size() const { return a_log.dim(1); }
  Index dt_rank() const { return dt_down.out_features(); }
};

/// Low-rank width of the step-size projection for a channel count.
inline Index DefaultDtRank(Index channels) {
  return std::max<Index>(1, channels / 16);
}

/// A spans -1 ... -N per channel, softplus(dt bias) is log-uniform in
/// [1e-3, 1e-1], skip starts at 1 and projections are uniform(+-1/sqrt(fan_in)).
template <typename Scalar>
SelectiveSsmParams<Scalar> InitSelectiveSsm(Index channels, Index state_size,
                                            Index dt_rank, Rng& rng);

template <typename Scalar>
struct Discretized {
  Tensor<Scalar> a_bar;  // [L, D, N]
  Tensor<Scalar> b_bar;  // [L, D, N]
};

/// Elementwise ZOH: a_bar = exp(delta A), b_bar = (exp(delta A) - 1) / A * B.
/// delta is [L, D], a is [D, N] (strictly negative), b is [L, N].
template <typename Scalar>
Discretized<Scalar> Discretize(const Tensor<Scalar>& delta,
                               const Tensor<Scalar>& a, const Tensor<Scalar>& b);

/// The (exp(z) - 1) / a factor of b_bar and its partials. Below |z| = 1e-6 the
/// series delta (1 + z / 2) replaces the cancelling quotient.
template <typename Scalar>
struct ZohFactor {
  Scalar a_bar;
  Scalar gain;
  Scalar dgain_ddelta;
  Scalar dgain_da;
};

template <typename Scalar>
ZohFactor<Scalar> ZohStep(Scalar delta, Scalar a) {
  const Scalar z = delta * a;
  const Scalar em1 = std::expm1(z);
  const Scalar e = em1 + Scalar(1);
  if (std::abs(z) < Scalar(1e-6)) {
    return {e, delta * (Scalar(1) + Scalar(0.5) * z), Scalar(1) + z,
            Scalar(0.5) * delta * delta};
  }
  const Scalar gain = em1 / a;
  return {e, gain, e, (delta * e - gain) / a};
}

/// Runs h_t = a_bar_t h_{t-1} + b_bar_t u_t, y_t = C_t h_t + skip * u_t from
/// h_0 = 0 on explicit per-step inputs. Differentiable in all six inputs.
template <typename Scalar>
Var<Scalar> SelectiveScanCore(const Var<Scalar>& u, const Var<Scalar>& delta,
                              const Var<Scalar>& a_log, const Var<Scalar>& b,
                              const Var<Scalar>& c, const Var<Scalar>& skip);

/// Input-dependent scan: delta = softplus(dt_up(dt_down(u))), B = b_proj(u),
/// C = c_proj(u), then SelectiveScanCore.
template <typename Scalar>
Var<Scalar> SelectiveScan(const Var<Scalar>& u,
                          const SelectiveSsmParams<Scalar>& p,
                          ParamBinder<Scalar>& bind);

/// Input-independent projections: the same delta [D], B [N] and C [N] at
/// every step. This is the special case that admits a convolution kernel.
template <typename Scalar>
struct FrozenProjections {
  Tensor<Scalar> delta;
  Tensor<Scalar> b;
  Tensor<Scalar> c;
};

template <typename Scalar>
Var<Scalar> SelectiveScanFrozen(const Var<Scalar>& u, const Tensor<Scalar>& a_log,
                                const FrozenProjections<Scalar>& frozen,
                                const Tensor<Scalar>& skip);

/// Discrete time-invariant system, all [D, N].
template <typename Scalar>
struct TimeInvariantSsm {
  Tensor<Scalar> a_bar;
  Tensor<Scalar> b_bar;
  Tensor<Scalar> c;
};

template <typename Scalar>
TimeInvariantSsm<Scalar> Freeze(const Tensor<Scalar>& a_log,
                                const FrozenProjections<Scalar>& frozen);

/// K[k, d] = sum_n C[d, n] a_bar[d, n]^k b_bar[d, n] for k < length.
template <typename Scalar>
Tensor<Scalar> SsmKernel(const TimeInvariantSsm<Scalar>& ssm, Index length);

/// Causal per-channel convolution y_t = sum_{s <= t} K_{t - s} u_s + skip u_t.
template <typename Scalar>
Tensor<Scalar> ConvApply(const Tensor<Scalar>& u, const Tensor<Scalar>& kernel,
                         const Tensor<Scalar>& skip);

}  // namespace sasmamba
