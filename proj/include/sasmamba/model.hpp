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

// 2D-to-3D pose lifting network: embed -> L SAS-SSM blocks -> regression head.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasmamba/sas.hpp"

namespace sasmamba {

struct ModelConfig {
  Index l = 10;  // blocks
  Index d = 64;  // hidden width
  Index t = 243;  // frames
  Index v = 17;  // joints
  Index k = 3;   // SA-Conv kernel
  Index n = 8;   // SSM state size
  std::vector<Index> strides{1, 2, 3};
  std::vector<ScanStream> streams{std::begin(kAllStreams), std::end(kAllStreams)};
  Index mlp_ratio = 4;
  bool gated_streams = false;

  /// Every violated constraint, empty when the config is valid.
  std::vector<std::string> Violations() const;
  /// Throws a config error listing all violations.
  void Validate() const;

  StrideConfig stride_config() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Flat object with keys l, d, t, v, k, n, strides, streams, mlp_ratio,
/// gated_streams. Missing keys keep their defaults; unknown keys are errors.
nlohmann::ordered_json ConfigToJson(const ModelConfig& cfg);
ModelConfig ConfigFromJson(const nlohmann::json& j);
ModelConfig LoadConfigFile(const std::string& path);

template <typename Scalar>
struct BlockParams {
  NormParams<Scalar> norm1;
  SasLayerParams<Scalar> sas;
  NormParams<Scalar> norm2;
  LinearParams<Scalar> mlp_in;   // D -> mlp_ratio D
  LinearParams<Scalar> mlp_out;  // mlp_ratio D -> D
};

template <typename Scalar>
struct Model {
  ModelConfig config;
  LinearParams<Scalar> embed;   // 2 -> D
  Tensor<Scalar> pos_spatial;   // [1, V, D]
  Tensor<Scalar> pos_temporal;  // [T, 1, D]
  std::vector<BlockParams<Scalar>> blocks;
  LinearParams<Scalar> head;  // D -> 3
};

template <typename Scalar>
Model<Scalar> InitModel(const ModelConfig& cfg, std::uint64_t seed);

/// X' = sas(LN1(X)) + X;  X'' = MLP(LN2(X')) + X'.
template <typename Scalar>
Var<Scalar> BlockForward(const Var<Scalar>& x, const BlockParams<Scalar>& p,
                         ParamBinder<Scalar>& bind);

/// x is [T, V, 2] with T <= config.t; returns [T, V, 3].
template <typename Scalar>
Var<Scalar> Forward(const Model<Scalar>& m, const Var<Scalar>& x,
                    ParamBinder<Scalar>& bind);

/// Inference without recording.
template <typename Scalar>
Tensor<Scalar> Predict(const Model<Scalar>& m, const Tensor<Scalar>& x);

template <typename P, typename F>
void VisitNorm(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".gamma", p.gamma);
  f(prefix + ".beta", p.beta);
}

template <typename P, typename F>
void VisitBlock(P& p, const std::string& prefix, F&& f) {
  VisitNorm(p.norm1, prefix + ".norm1", f);
  VisitSasLayer(p.sas, prefix + ".sas", f);
  VisitNorm(p.norm2, prefix + ".norm2", f);
  VisitLinear(p.mlp_in, prefix + ".mlp_in", f);
  VisitLinear(p.mlp_out, prefix + ".mlp_out", f);
}

/// Every trainable tensor in checkpoint order.
template <typename M, typename F>
void VisitModel(M& m, F&& f) {
  VisitLinear(m.embed, "embed", f);
  f(std::string("pos_spatial"), m.pos_spatial);
  f(std::string("pos_temporal"), m.pos_temporal);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    VisitBlock(m.blocks[i], "blocks." + std::to_string(i), f);
  }
  VisitLinear(m.head, "head", f);
}

template <typename To, typename From>
Model<To> CastModel(const Model<From>& m);

struct TensorSpec {
  std::string name;
  Shape shape;
};

/// Parameter tensors implied by a config, in checkpoint order.
std::vector<TensorSpec> ParamSpecs(const ModelConfig& cfg);

struct CountEntry {
  std::string name;
  std::int64_t count = 0;
};

struct CountReport {
  std::int64_t total = 0;
  std::vector<CountEntry> entries;

  /// Entries summed by module kind (embed, pos, norm, sa_conv, ssm, gate, mlp,
  /// head), in first-appearance order.
  std::vector<CountEntry> ByModule() const;
};

/// One entry per parameter tensor.
CountReport CountParams(const ModelConfig& cfg);

/// Multiply-accumulates of one forward pass over `frames` frames, itemized by
/// module kind.
CountReport CountMacs(const ModelConfig& cfg, Index frames);

}  // namespace sasmamba
