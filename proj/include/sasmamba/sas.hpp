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

// Skeleton structure-aware stride SSM layer.
//
// Features are T x V x C maps over (frame, joint). The layer chains three
// stages:
//   1. sa_conv: every joint gathers K*K neighbours at learned fractional
//      (frame, joint) offsets by bilinear sampling and fuses them with a local
//      3x3 aggregation.
//   2. stride_scan: channel groups are re-sampled along the joint axis at
//      strides (1, 2, 3); skipped joints repeat the preceding kept joint.
//   3. four_stream_scan: selective scans over temporal-major and spatial-major
//      flattenings, forward and reversed, summed.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "sasmamba/autodiff.hpp"
#include "sasmamba/ops.hpp"
#include "sasmamba/ssm.hpp"

namespace sasmamba {

template <typename Scalar>
struct SaConvParams {
  Index kernel = 3;
  // K x K grid conv C -> 3 K^2: (dt, dv) per neighbour, then one modulation
  // logit per neighbour. weight [3 K^2, K^2 C], bias [3 K^2].
  Tensor<Scalar> offset_weight;
  Tensor<Scalar> offset_bias;
  Tensor<Scalar> neighbor_weight;  // [K^2, C], per-channel W_k
  Tensor<Scalar> local_weight;     // [9, C], depthwise 3x3
  Tensor<Scalar> local_bias;       // [C]

  Index channels() const { return neighbor_weight.dim(1); }
  Index taps() const { return kernel * kernel; }
};

template <typename Scalar>
SaConvParams<Scalar> InitSaConv(Index channels, Index kernel, Rng& rng);

/// Predicted displacement field. offsets is [T, V, K^2, 2] in (frame, joint)
/// units; modulation is [T, V, K^2], equal to 2 sigmoid(logit) so that a zero
/// network yields unit modulation.
template <typename Scalar>
struct OffsetField {
  Var<Scalar> offsets;
  Var<Scalar> modulation;
};

template <typename Scalar>
OffsetField<Scalar> PredictOffsets(const Var<Scalar>& x, const SaConvParams<Scalar>& p,
                                   ParamBinder<Scalar>& bind);

/// Neighbour k of (t, v) is sampled at (t + dt_k + off_t, v + dv_k + off_v)
/// where (dt_k, dv_k) walks the K x K integer grid centred on zero.
template <typename Scalar>
Tensor<Scalar> SamplingGrid(Index frames, Index joints, Index kernel);

/// out[t, v, c] = sum_k modulation[t, v, k] w[k, c] samples[t, v, k, c].
template <typename Scalar>
Var<Scalar> NeighborFuse(const Var<Scalar>& samples, const Var<Scalar>& modulation,
                         const Var<Scalar>& weight);

/// local_conv(x) + sum_k W_k (modulated neighbour sample k).
template <typename Scalar>
Var<Scalar> SaConv(const Var<Scalar>& x, const SaConvParams<Scalar>& p,
                   ParamBinder<Scalar>& bind);

struct StrideConfig {
  std::vector<Index> strides{1, 2, 3};
  std::vector<double> fractions{0.5, 0.25, 0.25};
};

/// Channel count per stride group; throws a config error when the fractions
/// do not sum to 1 or do not divide `channels` exactly.
std::vector<Index> ChannelGroups(const StrideConfig& cfg, Index channels);

/// Joint index that output joint v reads at stride s: floor(v / s) * s.
inline Index StrideSource(Index joint, Index stride) {
  return (joint / stride) * stride;
}

template <typename Scalar>
Var<Scalar> StrideSample(const Var<Scalar>& x, Index stride);

template <typename Scalar>
Var<Scalar> StrideScan(const Var<Scalar>& x, const StrideConfig& cfg);

enum class ScanStream {
  kTemporalForward = 0,
  kTemporalBackward = 1,
  kSpatialForward = 2,
  kSpatialBackward = 3,
};

inline constexpr ScanStream kAllStreams[] = {
    ScanStream::kTemporalForward, ScanStream::kTemporalBackward,
    ScanStream::kSpatialForward, ScanStream::kSpatialBackward};

std::string_view StreamName(ScanStream stream);
ScanStream ParseStream(std::string_view name);

/// Scan-direction presets: S-f, S-b, S-fb, T-f, T-b, T-fb, ST-fb.
std::vector<ScanStream> StreamsFromLabel(std::string_view label);

/// Row order of the flattened (t, v) grid as scanned by `stream`: entry i is
/// the row t * V + v visited at sequence position i.
std::vector<Index> ScanOrder(ScanStream stream, Index frames, Index joints);

template <typename Scalar>
struct StreamParams {
  ScanStream direction = ScanStream::kTemporalForward;
  SelectiveSsmParams<Scalar> ssm;
  // Present only with gated streams: y = scan(x) * silu(gate(x)).
  LinearParams<Scalar> gate;

  bool gated() const { return !gate.weight.empty(); }
};

template <typename Scalar>
struct StreamSet {
  std::vector<StreamParams<Scalar>> streams;  // ascending direction id
};

template <typename Scalar>
StreamSet<Scalar> InitStreamSet(Index channels, Index state_size,
                                const std::vector<ScanStream>& directions,
                                bool gated, Rng& rng);

template <typename Scalar>
Var<Scalar> ScanStreamOnce(const Var<Scalar>& x, const StreamParams<Scalar>& stream,
                           ParamBinder<Scalar>& bind);

template <typename Scalar>
Var<Scalar> FourStreamScan(const Var<Scalar>& x, const StreamSet<Scalar>& streams,
                           ParamBinder<Scalar>& bind);

template <typename Scalar>
struct SasLayerParams {
  SaConvParams<Scalar> sa_conv;
  StrideConfig stride;
  StreamSet<Scalar> streams;
};

template <typename Scalar>
Var<Scalar> SasSsmLayer(const Var<Scalar>& x, const SasLayerParams<Scalar>& p,
                        ParamBinder<Scalar>& bind);

// Parameter enumeration in serialization order. `f(name, tensor)` receives a
// (const) Tensor reference matching the constness of `p`.

template <typename P, typename F>
void VisitLinear(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".weight", p.weight);
  if (p.has_bias()) f(prefix + ".bias", p.bias);
}

template <typename P, typename F>
void VisitSsm(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".a_log", p.a_log);
  VisitLinear(p.b_proj, prefix + ".b_proj", f);
  VisitLinear(p.c_proj, prefix + ".c_proj", f);
  VisitLinear(p.dt_down, prefix + ".dt_down", f);
  VisitLinear(p.dt_up, prefix + ".dt_up", f);
  f(prefix + ".skip", p.skip);
}

template <typename P, typename F>
void VisitSaConv(P& p, const std::string& prefix, F&& f) {
  f(prefix + ".offset.weight", p.offset_weight);
  f(prefix + ".offset.bias", p.offset_bias);
  f(prefix + ".neighbor.weight", p.neighbor_weight);
  f(prefix + ".local.weight", p.local_weight);
  f(prefix + ".local.bias", p.local_bias);
}

template <typename P, typename F>
void VisitSasLayer(P& p, const std::string& prefix, F&& f) {
  VisitSaConv(p.sa_conv, prefix + ".sa_conv", f);
  for (auto& stream : p.streams.streams) {
    const std::string name = prefix + ".streams." + std::string(StreamName(stream.direction));
    VisitSsm(stream.ssm, name, f);
    if (stream.gated()) VisitLinear(stream.gate, name + ".gate", f);
  }
}

}  // namespace sasmamba
