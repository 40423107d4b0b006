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

// Differentiable dense operations. Every function here records an exact
// adjoint when any input requires a gradient.

#pragma once

#include <array>
#include <cmath>
#include <span>

#include "sasmamba/autodiff.hpp"
#include "sasmamba/random.hpp"
#include "sasmamba/tensor.hpp"

namespace sasmamba {

/// weight is out x in; bias is empty or length out.
template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  bool has_bias() const { return !bias.empty(); }
  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }
};

/// Weight and bias uniform on +-1/sqrt(in).
template <typename Scalar>
LinearParams<Scalar> InitLinear(Index in, Index out, bool bias, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  LinearParams<Scalar> p;
  p.weight = UniformTensor<Scalar>({out, in}, -bound, bound, rng);
  if (bias) p.bias = UniformTensor<Scalar>({out}, -bound, bound, rng);
  return p;
}

template <typename Scalar>
struct NormParams {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  Scalar epsilon = Scalar(1e-5);
};

// Affine maps over the channel axis.

/// y[..., o] = sum_i weight[o, i] x[..., i] + bias[o]. `bias` may be null.
template <typename Scalar>
Var<Scalar> Linear(const Var<Scalar>& x, const Var<Scalar>& weight,
                   const Var<Scalar>* bias);

template <typename Scalar>
Var<Scalar> Linear(const Var<Scalar>& x, const LinearParams<Scalar>& p,
                   ParamBinder<Scalar>& bind);

/// Per last-axis slice: (x - mean) / sqrt(var + eps) * gamma + beta, with the
/// biased variance.
template <typename Scalar>
Var<Scalar> LayerNorm(const Var<Scalar>& x, const Var<Scalar>& gamma,
                      const Var<Scalar>& beta, Scalar epsilon);

template <typename Scalar>
Var<Scalar> LayerNorm(const Var<Scalar>& x, const NormParams<Scalar>& p,
                      ParamBinder<Scalar>& bind);

// Elementwise.

/// Gaussian-error linear unit, exact erf form.
template <typename Scalar>
Var<Scalar> Gelu(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> Silu(const Var<Scalar>& x);
template <typename Scalar>
Var<Scalar> Sigmoid(const Var<Scalar>& x);
/// log(1 + e^x), overflow-safe.
template <typename Scalar>
Var<Scalar> Softplus(const Var<Scalar>& x);

template <typename Scalar>
Var<Scalar> Add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> Mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> Scale(const Var<Scalar>& x, Scalar factor);

/// Sums a list of same-shape Vars in list order.
template <typename Scalar>
Var<Scalar> AddN(std::span<const Var<Scalar>> terms);

// Reductions.

template <typename Scalar>
Var<Scalar> Sum(const Var<Scalar>& x);
/// sum_i weights[i] * x[i] against a constant weight tensor.
template <typename Scalar>
Var<Scalar> Dot(const Var<Scalar>& x, const Tensor<Scalar>& weights);

// Layout.

template <typename Scalar>
Var<Scalar> Reshape(const Var<Scalar>& x, Shape shape);

/// Views x as rows x last-dim and gathers `rows` (repeats allowed); the
/// adjoint scatter-adds. Output shape is [rows.size(), last-dim].
template <typename Scalar>
Var<Scalar> GatherRows(const Var<Scalar>& x, std::span<const Index> rows);

/// Channels [begin, begin + count) of the last axis.
template <typename Scalar>
Var<Scalar> SliceChannels(const Var<Scalar>& x, Index begin, Index count);

/// x is [A, B, C]; table is [1, B, C] (tiled over A) or [P, 1, C] with P >= A
/// (first A rows used, tiled over B).
template <typename Scalar>
Var<Scalar> AddTiled(const Var<Scalar>& x, const Var<Scalar>& table);

// Sampling on the (t, v) grid of a T x V x C feature map.

/// Corner indices and weights of a clamp-to-edge bilinear lookup.
template <typename Scalar>
struct BilinearTap {
  std::array<Index, 4> t;
  std::array<Index, 4> v;
  std::array<Scalar, 4> w;
  // d w / d t and d w / d v; zero on an axis clamped to the edge.
  std::array<Scalar, 4> dw_dt;
  std::array<Scalar, 4> dw_dv;
};

template <typename Scalar>
BilinearTap<Scalar> BilinearWeights(Index frames, Index joints, Scalar t,
                                    Scalar v);

/// Bilinear interpolation of x[T, V, C] at the real position pos = (t, v).
/// Positions outside the grid clamp to the edge. Returns [C].
template <typename Scalar>
Var<Scalar> BilinearSample(const Var<Scalar>& x, const Var<Scalar>& pos);

/// Batched form: pos is [T, V, P, 2] absolute positions, output [T, V, P, C].
template <typename Scalar>
Var<Scalar> DeformSample(const Var<Scalar>& x, const Var<Scalar>& pos);

/// Dense kernel x kernel convolution over (t, v) with clamp-to-edge padding.
/// weight is [Cout, kernel * kernel * Cin] ordered (dt, dv, cin); bias may be
/// null.
template <typename Scalar>
Var<Scalar> GridConv(const Var<Scalar>& x, const Var<Scalar>& weight,
                     const Var<Scalar>* bias, Index kernel);

/// Per-channel kernel x kernel convolution; weight is [kernel * kernel, C].
template <typename Scalar>
Var<Scalar> DepthwiseGridConv(const Var<Scalar>& x, const Var<Scalar>& weight,
                              const Var<Scalar>* bias, Index kernel);

}  // namespace sasmamba
