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

#include <cmath>

#include "sasmamba/gradcheck.hpp"
#include "sasmamba/sas.hpp"
#include "test_util.hpp"

namespace sasmamba::testing {
namespace {

SaConvParams<double> RandomSaConv(Index channels, Index kernel, std::uint64_t seed) {
  Rng rng(seed);
  return InitSaConv<double>(channels, kernel, rng);
}

void ZeroOffsetNet(SaConvParams<double>& p) {
  p.offset_weight = TD(p.offset_weight.shape());
  p.offset_bias = TD(p.offset_bias.shape());
}

TEST(PredictOffsets, ZeroNetworkGivesZeroOffsetsAndUnitModulation) {
  auto p = RandomSaConv(4, 3, 1);
  ZeroOffsetNet(p);
  ParamBinder<double> bind;
  const auto field = PredictOffsets(C(Rand({5, 6, 4}, 2)), p, bind);
  EXPECT_EQ(field.offsets.shape(), (Shape{5, 6, 9, 2}));
  EXPECT_EQ(field.offsets.value().vec().cwiseAbs().maxCoeff(), 0);
  EXPECT_EQ(field.modulation.value(), TD::Constant({5, 6, 9}, 1));
}

TEST(PredictOffsets, BiasPassthroughOnZeroInput) {
  auto p = RandomSaConv(4, 3, 1);
  for (Index k = 0; k < 9; ++k) {
    p.offset_bias[2 * k] = 0.5;
    p.offset_bias[2 * k + 1] = -0.5;
  }
  ParamBinder<double> bind;
  const TD off = PredictOffsets(C(TD({3, 4, 4})), p, bind).offsets.value();
  for (Index i = 0; i < off.size(); i += 2) {
    EXPECT_EQ(off[i], 0.5);
    EXPECT_EQ(off[i + 1], -0.5);
  }
}

TEST(PredictOffsets, TranslationEquivariantInTime) {
  const auto p = RandomSaConv(3, 3, 4);
  const TD x = Rand({9, 5, 3}, 5);
  TD shifted({8, 5, 3});
  shifted.vec() = x.vec().tail(8 * 5 * 3);
  ParamBinder<double> bind;
  const TD a = PredictOffsets(C(x), p, bind).offsets.value();
  const TD b = PredictOffsets(C(shifted), p, bind).offsets.value();
  for (Index t = 1; t + 1 < 8; ++t) {
    for (Index v = 0; v < 5; ++v) {
      for (Index k = 0; k < 9; ++k) {
        for (Index c = 0; c < 2; ++c) EXPECT_NEAR(b.at(t, v, k, c), a.at(t + 1, v, k, c), 1e-12);
      }
    }
  }
}

TEST(PredictOffsets, ChannelMismatch) {
  const auto p = RandomSaConv(4, 3, 1);
  ParamBinder<double> bind;
  EXPECT_KIND(PredictOffsets(C(Rand({3, 4, 5}, 2)), p, bind), kDimension);
}

SaConvParams<double> IdentitySaConv(Index channels) {
  auto p = RandomSaConv(channels, 1, 7);
  ZeroOffsetNet(p);
  p.neighbor_weight = TD::Constant({1, channels}, 1);
  p.local_weight = TD({9, channels});
  p.local_bias = TD({channels});
  return p;
}

TEST(SaConv, DegenerateConfigurationIsIdentity) {
  const auto p = IdentitySaConv(3);
  const TD x = Rand({4, 5, 3}, 1);
  ParamBinder<double> bind;
  EXPECT_LT(MaxAbsDiff(SaConv(C(x), p, bind).value(), x), 1e-15);
}

TEST(SaConv, ZeroNeighbourWeightsLeaveLocalConv) {
  auto p = RandomSaConv(3, 3, 2);
  ZeroOffsetNet(p);
  p.neighbor_weight = TD(p.neighbor_weight.shape());
  const TD x = Rand({4, 5, 3}, 1);
  const VD bias = C(p.local_bias);
  ParamBinder<double> bind;
  EXPECT_LT(MaxAbsDiff(SaConv(C(x), p, bind).value(),
                       DepthwiseGridConv(C(x), C(p.local_weight), &bias, 3).value()),
            1e-15);
}

TEST(SaConv, IntegerTemporalOffsetGathersNextFrame) {
  auto p = IdentitySaConv(2);
  p.offset_bias[0] = 1;
  TD x({6, 3, 2});
  for (Index t = 0; t < 6; ++t) {
    for (Index v = 0; v < 3; ++v) {
      for (Index c = 0; c < 2; ++c) x.at(t, v, c) = 0.5 * t - 0.2 * v + c;
    }
  }
  ParamBinder<double> bind;
  const TD y = SaConv(C(x), p, bind).value();
  for (Index t = 0; t + 1 < 6; ++t) {
    for (Index v = 0; v < 3; ++v) {
      for (Index c = 0; c < 2; ++c) EXPECT_NEAR(y.at(t, v, c), x.at(t + 1, v, c), 1e-12);
    }
  }
}

TEST(SaConv, ZeroOffsetsAreLocal) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = RandomSaConv(2, 3, 100 + trial);
    ZeroOffsetNet(p);
    TD x = Rand({6, 7, 2}, 200 + trial);
    const Index t0 = rng.UniformIndex(6), v0 = rng.UniformIndex(7);
    Index t1, v1;
    do {
      t1 = rng.UniformIndex(6);
      v1 = rng.UniformIndex(7);
    } while (std::abs(t1 - t0) <= 1 && std::abs(v1 - v0) <= 1);
    ParamBinder<double> bind;
    const TD before = SaConv(C(x), p, bind).value();
    x.at(t1, v1, 0) += 3;
    x.at(t1, v1, 1) -= 2;
    const TD after = SaConv(C(x), p, bind).value();
    for (Index c = 0; c < 2; ++c) EXPECT_EQ(before.at(t0, v0, c), after.at(t0, v0, c));
  }
}

TD JointRamp(Index frames, Index joints, Index channels) {
  TD x({frames, joints, channels});
  for (Index t = 0; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      for (Index c = 0; c < channels; ++c) x.at(t, v, c) = static_cast<double>(v);
    }
  }
  return x;
}

std::vector<double> JointValues(const TD& y, Index channel) {
  std::vector<double> out;
  for (Index v = 0; v < y.dim(1); ++v) out.push_back(y.at(0, v, channel));
  return out;
}

TEST(StrideSample, FillRuleExamples) {
  EXPECT_EQ(JointValues(StrideSample(C(JointRamp(2, 5, 1)), 2).value(), 0),
            (std::vector<double>{0, 0, 2, 2, 4}));
  EXPECT_EQ(JointValues(StrideSample(C(JointRamp(2, 7, 1)), 3).value(), 0),
            (std::vector<double>{0, 0, 0, 3, 3, 3, 6}));
}

TEST(StrideSample, UnitStrideIsIdentity) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const TD x = Rand({3, 7, 4}, seed);
    EXPECT_EQ(StrideSample(C(x), 1).value(), x);
  }
}

TEST(StrideSample, RejectsNonPositiveStride) {
  EXPECT_KIND(StrideSample(C(Rand({2, 3, 1}, 1)), 0), kDomain);
}

TEST(StrideSample, PrefixProperty) {
  for (Index s : {2, 3, 4}) {
    TD x = Rand({2, 9, 2}, s);
    const TD y0 = StrideSample(C(x), s).value();
    for (Index changed = 0; changed < 9; ++changed) {
      TD x1 = x;
      x1.at(1, changed, 0) += 1;
      const TD y1 = StrideSample(C(x1), s).value();
      for (Index v = 0; v < changed; ++v) EXPECT_EQ(y0.at(1, v, 0), y1.at(1, v, 0));
    }
  }
}

TEST(StrideScan, GroupsFollowTheirFillRules) {
  const TD x = JointRamp(1, 7, 4);
  const TD y = StrideScan(C(x), StrideConfig{}).value();
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(JointValues(y, 0), (std::vector<double>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(JointValues(y, 1), (std::vector<double>{0, 1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(JointValues(y, 2), (std::vector<double>{0, 0, 2, 2, 4, 4, 6}));
  EXPECT_EQ(JointValues(y, 3), (std::vector<double>{0, 0, 0, 3, 3, 3, 6}));
}

TEST(StrideScan, UnitStridesAreIdentity) {
  const TD x = Rand({3, 5, 8}, 1);
  EXPECT_EQ(StrideScan(C(x), StrideConfig{{1, 1, 1}, {0.5, 0.25, 0.25}}).value(), x);
}

TEST(StrideScan, FirstHalfVerbatim) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const TD x = Rand({4, 17, 8}, seed);
    const TD y = StrideScan(C(x), StrideConfig{}).value();
    EXPECT_EQ(SliceChannels(C(y), 0, 4).value(), SliceChannels(C(x), 0, 4).value());
  }
}

TEST(StrideScan, IndivisibleChannels) {
  EXPECT_KIND(StrideScan(C(Rand({2, 3, 6}, 1)), StrideConfig{}), kConfig);
}

StreamSet<double> RandomStreams(Index channels, Index state, std::vector<ScanStream> dirs,
                                std::uint64_t seed) {
  Rng rng(seed);
  return InitStreamSet<double>(channels, state, dirs, false, rng);
}

TEST(FourStreamScan, FeedthroughCopies) {
  auto set = RandomStreams(4, 3, {std::begin(kAllStreams), std::end(kAllStreams)}, 1);
  for (auto& s : set.streams) {
    s.ssm.c_proj.weight = TD(s.ssm.c_proj.weight.shape());
    s.ssm.skip = TD::Constant({4}, 1);
  }
  const TD x = Rand({3, 5, 4}, 2);
  ParamBinder<double> bind;
  const TD y = FourStreamScan(C(x), set, bind).value();
  for (Index i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 4 * x[i], 1e-14);
}

TEST(FourStreamScan, SingleFrameTemporalEqualsSpatial) {
  const auto base = RandomStreams(4, 3, {ScanStream::kTemporalForward}, 3);
  auto spatial = base;
  spatial.streams[0].direction = ScanStream::kSpatialForward;
  const TD x = Rand({1, 6, 4}, 4);
  ParamBinder<double> bind;
  EXPECT_EQ(FourStreamScan(C(x), base, bind).value(), FourStreamScan(C(x), spatial, bind).value());
}

TEST(FourStreamScan, EmptyStreamSet) {
  ParamBinder<double> bind;
  EXPECT_KIND(FourStreamScan(C(Rand({2, 2, 4}, 1)), StreamSet<double>{}, bind), kConfig);
}

// Scalar selective scan over an explicit visiting order, D = N = r = 1.
std::vector<double> ScalarScan(const SelectiveSsmParams<double>& p, const std::vector<double>& u) {
  const double a = -std::exp(p.a_log[0]);
  double h = 0;
  std::vector<double> y;
  for (double x : u) {
    const double z = p.dt_up.weight[0] * (p.dt_down.weight[0] * x) + p.dt_up.bias[0];
    const double delta = std::log1p(std::exp(z));
    h = std::exp(delta * a) * h + std::expm1(delta * a) / a * (p.b_proj.weight[0] * x) * x;
    y.push_back(p.c_proj.weight[0] * x * h + p.skip[0] * x);
  }
  return y;
}

TEST(FourStreamScan, HandUnrolledTwoByTwo) {
  auto set = RandomStreams(1, 1, {std::begin(kAllStreams), std::end(kAllStreams)}, 5);
  for (auto& s : set.streams) s.ssm.dt_up.bias[0] = 0.3;
  const TD x = Make({2, 2, 1}, {0.4, -0.9, 1.3, 0.2});
  // Cells as (t, v) -> x.at(t, v, 0); each order lists cell row indices t * 2 + v.
  const std::vector<std::vector<Index>> orders = {
      {0, 1, 2, 3}, {3, 2, 1, 0}, {0, 2, 1, 3}, {3, 1, 2, 0}};
  std::vector<double> expected(4, 0.0);
  for (std::size_t s = 0; s < 4; ++s) {
    std::vector<double> seq;
    for (Index row : orders[s]) seq.push_back(x[row]);
    const auto y = ScalarScan(set.streams[s].ssm, seq);
    for (std::size_t i = 0; i < 4; ++i) expected[orders[s][i]] += y[i];
  }
  ParamBinder<double> bind;
  const TD y = FourStreamScan(C(x), set, bind).value();
  for (Index i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expected[i], 1e-14);
}

TEST(FourStreamScan, BackwardStreamConsistency) {
  const auto fwd = RandomStreams(4, 3, {ScanStream::kTemporalForward}, 6);
  auto bwd = fwd;
  bwd.streams[0].direction = ScanStream::kTemporalBackward;
  const TD x = Rand({4, 5, 4}, 7);
  TD reversed(x.shape());
  const Index rows = 20;
  for (Index r = 0; r < rows; ++r) reversed.matrix().row(rows - 1 - r) = x.matrix().row(r);
  ParamBinder<double> bind;
  const TD a = FourStreamScan(C(x), bwd, bind).value();
  const TD b = FourStreamScan(C(reversed), fwd, bind).value();
  for (Index r = 0; r < rows; ++r) {
    EXPECT_LT((a.matrix().row(r) - b.matrix().row(rows - 1 - r)).cwiseAbs().maxCoeff(), 1e-5);
  }
}

TEST(ScanOrder, FlattenOrders) {
  EXPECT_EQ(ScanOrder(ScanStream::kTemporalForward, 2, 3), (std::vector<Index>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(ScanOrder(ScanStream::kSpatialForward, 2, 3), (std::vector<Index>{0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(ScanOrder(ScanStream::kSpatialBackward, 2, 3), (std::vector<Index>{5, 2, 4, 1, 3, 0}));
}

TEST(StreamsFromLabel, Presets) {
  EXPECT_EQ(StreamsFromLabel("ST-fb").size(), 4u);
  EXPECT_EQ(StreamsFromLabel("T-b"), (std::vector<ScanStream>{ScanStream::kTemporalBackward}));
  EXPECT_KIND(StreamsFromLabel("X-q"), kConfig);
}

SasLayerParams<double> RandomLayer(Index channels, std::uint64_t seed) {
  Rng rng(seed);
  SasLayerParams<double> p;
  p.sa_conv = InitSaConv<double>(channels, 3, rng);
  p.streams = InitStreamSet<double>(channels, 2, {std::begin(kAllStreams), std::end(kAllStreams)},
                                    false, rng);
  return p;
}

TEST(SasSsmLayer, IdentityComponentsScaleInput) {
  SasLayerParams<double> p = RandomLayer(4, 1);
  p.sa_conv = IdentitySaConv(4);
  p.stride = StrideConfig{{1, 1, 1}, {0.5, 0.25, 0.25}};
  for (auto& s : p.streams.streams) {
    s.ssm.c_proj.weight = TD(s.ssm.c_proj.weight.shape());
    s.ssm.skip = TD::Constant({4}, 1);
  }
  const TD x = Rand({3, 5, 4}, 2);
  ParamBinder<double> bind;
  const TD y = SasSsmLayer(C(x), p, bind).value();
  for (Index i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], 4 * x[i], 1e-14);
}

TEST(SasSsmLayer, ShapePreserved) {
  for (auto [t, v, c] : {std::tuple<Index, Index, Index>{1, 1, 4}, {5, 17, 8}, {2, 3, 12}}) {
    const auto p = RandomLayer(c, 3);
    ParamBinder<double> bind;
    EXPECT_EQ(SasSsmLayer(C(Rand({t, v, c}, 4)), p, bind).shape(), (Shape{t, v, c}));
  }
}

TEST(SasSsmLayer, CompositionalOracle) {
  const auto p = RandomLayer(4, 5);
  const TD x = Rand({2, 4, 4}, 6);
  ParamBinder<double> bind;
  const TD manual =
      FourStreamScan(StrideScan(SaConv(C(x), p.sa_conv, bind), p.stride), p.streams, bind).value();
  EXPECT_EQ(SasSsmLayer(C(x), p, bind).value(), manual);
}

TEST(SasSsmLayer, FullGradientPassesCheck) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto report = RunGradCheck("sas_ssm_layer", seed);
    EXPECT_LT(report.max_rel_error, 1e-4);
  }
}

}  // namespace
}  // namespace sasmamba::testing
