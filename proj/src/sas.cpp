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

#include "sasmamba/sas.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sasmamba {
namespace {

void RequireFeatureMap(const Shape& shape, std::string_view op) {
  if (shape.size() != 3) {
    Fail(ErrorKind::kDimension, std::string(op) + ": expected T x V x C, got " +
                                    ShapeString(shape));
  }
}

}  // namespace

template <typename Scalar>
SaConvParams<Scalar> InitSaConv(Index channels, Index kernel, Rng& rng) {
  if (kernel < 1 || kernel % 2 == 0) {
    Fail(ErrorKind::kConfig, "sa_conv kernel must be odd and >= 1, got " +
                                 std::to_string(kernel));
  }
  const Index taps = kernel * kernel;
  SaConvParams<Scalar> p;
  p.kernel = kernel;
  const double offset_bound = 1.0 / std::sqrt(static_cast<double>(taps * channels));
  p.offset_weight =
      UniformTensor<Scalar>({3 * taps, taps * channels}, -offset_bound, offset_bound, rng);
  p.offset_bias = UniformTensor<Scalar>({3 * taps}, -offset_bound, offset_bound, rng);
  const double neighbor_bound = 1.0 / std::sqrt(static_cast<double>(taps));
  p.neighbor_weight =
      UniformTensor<Scalar>({taps, channels}, -neighbor_bound, neighbor_bound, rng);
  const double local_bound = 1.0 / 3.0;
  p.local_weight = UniformTensor<Scalar>({9, channels}, -local_bound, local_bound, rng);
  p.local_bias = UniformTensor<Scalar>({channels}, -local_bound, local_bound, rng);
  return p;
}

template <typename Scalar>
OffsetField<Scalar> PredictOffsets(const Var<Scalar>& x, const SaConvParams<Scalar>& p,
                                   ParamBinder<Scalar>& bind) {
  RequireFeatureMap(x.shape(), "predict_offsets");
  const Index frames = x.dim(0), joints = x.dim(1), taps = p.taps();
  if (x.dim(2) != p.channels()) {
    Fail(ErrorKind::kDimension, "predict_offsets: input " + ShapeString(x.shape()) +
                                    " does not match " + std::to_string(p.channels()) +
                                    " channels");
  }
  const Var<Scalar> bias = bind(p.offset_bias);
  const Var<Scalar> raw = GridConv(x, bind(p.offset_weight), &bias, p.kernel);
  OffsetField<Scalar> field;
  field.offsets = Reshape(SliceChannels(raw, 0, 2 * taps), {frames, joints, taps, 2});
  field.modulation = Scale(Sigmoid(SliceChannels(raw, 2 * taps, taps)), Scalar(2));
  return field;
}

template <typename Scalar>
Tensor<Scalar> SamplingGrid(Index frames, Index joints, Index kernel) {
  const Index half = kernel / 2;
  const Index taps = kernel * kernel;
  Tensor<Scalar> grid({frames, joints, taps, 2});
  for (Index t = 0; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      for (Index i = 0; i < kernel; ++i) {
        for (Index j = 0; j < kernel; ++j) {
          grid.at(t, v, i * kernel + j, 0) = static_cast<Scalar>(t + i - half);
          grid.at(t, v, i * kernel + j, 1) = static_cast<Scalar>(v + j - half);
        }
      }
    }
  }
  return grid;
}

template <typename Scalar>
Var<Scalar> NeighborFuse(const Var<Scalar>& samples, const Var<Scalar>& modulation,
                         const Var<Scalar>& weight) {
  const Shape& ss = samples.shape();
  const bool ok = ss.size() == 4 && modulation.shape() == Shape{ss[0], ss[1], ss[2]} &&
                  weight.shape() == Shape{ss[2], ss[3]};
  if (!ok) {
    Fail(ErrorKind::kDimension, "neighbor_fuse: samples " + ShapeString(ss) +
                                    ", modulation " + ShapeString(modulation.shape()) +
                                    ", weight " + ShapeString(weight.shape()) +
                                    " are inconsistent");
  }
  const Index tokens = ss[0] * ss[1], taps = ss[2], channels = ss[3];
  const auto sm = samples.value().matrix();  // [tokens * taps, C]
  const auto wm = weight.value().matrix();   // [taps, C]
  const auto& mv = modulation.value();
  Tensor<Scalar> y({ss[0], ss[1], channels});
  auto ym = y.matrix();
  for (Index r = 0; r < tokens; ++r) {
    for (Index k = 0; k < taps; ++k) {
      ym.row(r) += mv[r * taps + k] * wm.row(k).cwiseProduct(sm.row(r * taps + k));
    }
  }
  return Tape<Scalar>::Record(std::move(y), {&samples, &modulation, &weight}, [=] {
    return [=](const Tensor<Scalar>& g) {
      const auto sm = samples.value().matrix();
      const auto wm = weight.value().matrix();
      const auto& mv = modulation.value();
      const auto gm = g.matrix();
      Tensor<Scalar>* gs = samples.grad_sink();
      Tensor<Scalar>* gmod = modulation.grad_sink();
      Tensor<Scalar>* gw = weight.grad_sink();
      for (Index r = 0; r < tokens; ++r) {
        for (Index k = 0; k < taps; ++k) {
          const Index row = r * taps + k;
          const Scalar m = mv[r * taps + k];
          if (gs) gs->matrix().row(row) += m * gm.row(r).cwiseProduct(wm.row(k));
          if (gmod) {
            (*gmod)[r * taps + k] += gm.row(r).cwiseProduct(wm.row(k)).dot(sm.row(row));
          }
          if (gw) gw->matrix().row(k) += m * gm.row(r).cwiseProduct(sm.row(row));
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> SaConv(const Var<Scalar>& x, const SaConvParams<Scalar>& p,
                   ParamBinder<Scalar>& bind) {
  const OffsetField<Scalar> field = PredictOffsets(x, p, bind);
  const Var<Scalar> grid =
      Var<Scalar>::Constant(SamplingGrid<Scalar>(x.dim(0), x.dim(1), p.kernel));
  const Var<Scalar> samples = DeformSample(x, Add(field.offsets, grid));
  const Var<Scalar> fused = NeighborFuse(samples, field.modulation, bind(p.neighbor_weight));
  const Var<Scalar> local_bias = bind(p.local_bias);
  const Var<Scalar> local = DepthwiseGridConv(x, bind(p.local_weight), &local_bias, 3);
  return Add(local, fused);
}

std::vector<Index> ChannelGroups(const StrideConfig& cfg, Index channels) {
  if (cfg.strides.empty() || cfg.strides.size() != cfg.fractions.size()) {
    Fail(ErrorKind::kConfig, "stride config needs one fraction per stride");
  }
  for (Index s : cfg.strides) {
    if (s < 1) Fail(ErrorKind::kConfig, "stride must be >= 1, got " + std::to_string(s));
  }
  const double total = std::accumulate(cfg.fractions.begin(), cfg.fractions.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    Fail(ErrorKind::kConfig, "stride channel fractions sum to " + std::to_string(total) +
                                 ", expected 1");
  }
  std::vector<Index> groups;
  Index assigned = 0;
  for (double f : cfg.fractions) {
    const double exact = f * static_cast<double>(channels);
    const Index count = static_cast<Index>(std::llround(exact));
    if (f < 0 || std::abs(exact - static_cast<double>(count)) > 1e-9) {
      Fail(ErrorKind::kConfig, std::to_string(channels) +
                                   " channels cannot be split by stride fraction " +
                                   std::to_string(f));
    }
    groups.push_back(count);
    assigned += count;
  }
  if (assigned != channels) {
    Fail(ErrorKind::kConfig, "stride groups cover " + std::to_string(assigned) + " of " +
                                 std::to_string(channels) + " channels");
  }
  return groups;
}

namespace {

// y(t, v, c) = x(t, StrideSource(v, stride of c's group), c).
template <typename Scalar>
Var<Scalar> StrideGather(const Var<Scalar>& x, const std::vector<Index>& strides,
                         const std::vector<Index>& groups) {
  RequireFeatureMap(x.shape(), "stride_scan");
  const Index frames = x.dim(0), joints = x.dim(1);
  const auto xm = x.value().matrix();
  Tensor<Scalar> y(x.shape());
  auto ym = y.matrix();
  auto for_each_segment = [=](auto&& fn) {
    for (Index t = 0; t < frames; ++t) {
      for (Index v = 0; v < joints; ++v) {
        Index begin = 0;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          if (groups[gi] > 0) {
            fn(t * joints + v, t * joints + StrideSource(v, strides[gi]), begin, groups[gi]);
          }
          begin += groups[gi];
        }
      }
    }
  };
  for_each_segment([&](Index dst, Index src, Index begin, Index count) {
    ym.row(dst).segment(begin, count) = xm.row(src).segment(begin, count);
  });
  return Tape<Scalar>::Record(std::move(y), {&x}, [=] {
    return [=](const Tensor<Scalar>& g) {
      auto gx = x.grad_sink()->matrix();
      const auto gm = g.matrix();
      for_each_segment([&](Index dst, Index src, Index begin, Index count) {
        gx.row(src).segment(begin, count) += gm.row(dst).segment(begin, count);
      });
    };
  });
}

}  // namespace

template <typename Scalar>
Var<Scalar> StrideSample(const Var<Scalar>& x, Index stride) {
  if (stride < 1) {
    Fail(ErrorKind::kDomain, "stride_sample: stride must be >= 1, got " +
                                 std::to_string(stride));
  }
  RequireFeatureMap(x.shape(), "stride_sample");
  return StrideGather(x, {stride}, {x.dim(2)});
}

template <typename Scalar>
Var<Scalar> StrideScan(const Var<Scalar>& x, const StrideConfig& cfg) {
  RequireFeatureMap(x.shape(), "stride_scan");
  return StrideGather(x, cfg.strides, ChannelGroups(cfg, x.dim(2)));
}

std::string_view StreamName(ScanStream stream) {
  switch (stream) {
    case ScanStream::kTemporalForward: return "temporal_forward";
    case ScanStream::kTemporalBackward: return "temporal_backward";
    case ScanStream::kSpatialForward: return "spatial_forward";
    case ScanStream::kSpatialBackward: return "spatial_backward";
  }
  return "unknown";
}

ScanStream ParseStream(std::string_view name) {
  for (ScanStream s : kAllStreams) {
    if (StreamName(s) == name) return s;
  }
  Fail(ErrorKind::kConfig, "unknown scan stream '" + std::string(name) + "'");
}

std::vector<ScanStream> StreamsFromLabel(std::string_view label) {
  using enum ScanStream;
  if (label == "S-f") return {kSpatialForward};
  if (label == "S-b") return {kSpatialBackward};
  if (label == "S-fb") return {kSpatialForward, kSpatialBackward};
  if (label == "T-f") return {kTemporalForward};
  if (label == "T-b") return {kTemporalBackward};
  if (label == "T-fb") return {kTemporalForward, kTemporalBackward};
  if (label == "ST-fb") {
    return {kTemporalForward, kTemporalBackward, kSpatialForward, kSpatialBackward};
  }
  Fail(ErrorKind::kConfig, "unknown scan-direction preset '" + std::string(label) + "'");
}

std::vector<Index> ScanOrder(ScanStream stream, Index frames, Index joints) {
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(frames * joints));
  const bool spatial =
      stream == ScanStream::kSpatialForward || stream == ScanStream::kSpatialBackward;
  if (spatial) {
    for (Index v = 0; v < joints; ++v) {
      for (Index t = 0; t < frames; ++t) order.push_back(t * joints + v);
    }
  } else {
    for (Index r = 0; r < frames * joints; ++r) order.push_back(r);
  }
  if (stream == ScanStream::kTemporalBackward || stream == ScanStream::kSpatialBackward) {
    std::reverse(order.begin(), order.end());
  }
  return order;
}

template <typename Scalar>
StreamSet<Scalar> InitStreamSet(Index channels, Index state_size,
                                const std::vector<ScanStream>& directions, bool gated,
                                Rng& rng) {
  if (directions.empty()) Fail(ErrorKind::kConfig, "at least one scan stream is required");
  std::vector<ScanStream> sorted = directions;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    Fail(ErrorKind::kConfig, "duplicate scan stream");
  }
  StreamSet<Scalar> set;
  for (ScanStream dir : sorted) {
    StreamParams<Scalar> s;
    s.direction = dir;
    s.ssm = InitSelectiveSsm<Scalar>(channels, state_size, DefaultDtRank(channels), rng);
    if (gated) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
      s.gate.weight = UniformTensor<Scalar>({channels, channels}, -bound, bound, rng);
      s.gate.bias = UniformTensor<Scalar>({channels}, -bound, bound, rng);
    }
    set.streams.push_back(std::move(s));
  }
  return set;
}

template <typename Scalar>
Var<Scalar> ScanStreamOnce(const Var<Scalar>& x, const StreamParams<Scalar>& stream,
                           ParamBinder<Scalar>& bind) {
  RequireFeatureMap(x.shape(), "four_stream_scan");
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  const std::vector<Index> order = ScanOrder(stream.direction, frames, joints);
  std::vector<Index> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    inverse[static_cast<std::size_t>(order[i])] = static_cast<Index>(i);
  }
  const Var<Scalar> seq = GatherRows(Reshape(x, {frames * joints, channels}),
                                     std::span<const Index>(order));
  Var<Scalar> y = SelectiveScan(seq, stream.ssm, bind);
  if (stream.gated()) y = Mul(y, Silu(Linear(seq, stream.gate, bind)));
  return Reshape(GatherRows(y, std::span<const Index>(inverse)), {frames, joints, channels});
}

template <typename Scalar>
Var<Scalar> FourStreamScan(const Var<Scalar>& x, const StreamSet<Scalar>& streams,
                           ParamBinder<Scalar>& bind) {
  if (streams.streams.empty()) {
    Fail(ErrorKind::kConfig, "four_stream_scan: empty stream set");
  }
  std::vector<Var<Scalar>> outputs;
  outputs.reserve(streams.streams.size());
  for (const auto& stream : streams.streams) {
    outputs.push_back(ScanStreamOnce(x, stream, bind));
  }
  return AddN(std::span<const Var<Scalar>>(outputs));
}

template <typename Scalar>
Var<Scalar> SasSsmLayer(const Var<Scalar>& x, const SasLayerParams<Scalar>& p,
                        ParamBinder<Scalar>& bind) {
  return FourStreamScan(StrideScan(SaConv(x, p.sa_conv, bind), p.stride), p.streams, bind);
}

#define SASMAMBA_INSTANTIATE_SAS(S)                                                    \
  template SaConvParams<S> InitSaConv<S>(Index, Index, Rng&);                          \
  template OffsetField<S> PredictOffsets(const Var<S>&, const SaConvParams<S>&,        \
                                         ParamBinder<S>&);                             \
  template Tensor<S> SamplingGrid<S>(Index, Index, Index);                             \
  template Var<S> NeighborFuse(const Var<S>&, const Var<S>&, const Var<S>&);           \
  template Var<S> SaConv(const Var<S>&, const SaConvParams<S>&, ParamBinder<S>&);      \
  template Var<S> StrideSample(const Var<S>&, Index);                                  \
  template Var<S> StrideScan(const Var<S>&, const StrideConfig&);                      \
  template StreamSet<S> InitStreamSet<S>(Index, Index, const std::vector<ScanStream>&, \
                                         bool, Rng&);                                  \
  template Var<S> ScanStreamOnce(const Var<S>&, const StreamParams<S>&, ParamBinder<S>&); \
  template Var<S> FourStreamScan(const Var<S>&, const StreamSet<S>&, ParamBinder<S>&); \
  template Var<S> SasSsmLayer(const Var<S>&, const SasLayerParams<S>&, ParamBinder<S>&);

SASMAMBA_INSTANTIATE_SAS(float)
SASMAMBA_INSTANTIATE_SAS(double)

}  // namespace sasmamba
