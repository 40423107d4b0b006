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
#include "sasmamba/ops.hpp"
#include "test_util.hpp"

namespace sasmamba::testing {
namespace {

TEST(Tensor, RejectsNonPositiveDimensions) {
  EXPECT_KIND(TD({2, 0}), kDimension);
  EXPECT_KIND(Make({2, 2}, {1, 2, 3}), kDimension);
}

TEST(Linear, IdentityMap) {
  const VD bias = C(Make({2}, {0, 0}));
  const TD y = Linear(C(Make({2}, {1, 2})), C(Make({2, 2}, {1, 0, 0, 1})), &bias).value();
  EXPECT_EQ(y, Make({2}, {1, 2}));
}

TEST(Linear, ZeroInputReturnsBias) {
  LinearParams<double> p{Rand({2, 2}, 1), Make({2}, {3, -1})};
  ParamBinder<double> bind;
  EXPECT_EQ(Linear(C(Make({2}, {0, 0})), p, bind).value(), Make({2}, {3, -1}));
}

TEST(Linear, HandMatrixMultiply) {
  LinearParams<double> p{Make({2, 2}, {1, 1, 2, -1}), Make({2}, {0, 1})};
  ParamBinder<double> bind;
  EXPECT_EQ(Linear(C(Make({2}, {1, 2})), p, bind).value(), Make({2}, {3, 1}));
}

TEST(Linear, ShapeMismatchNamesBothShapes) {
  LinearParams<double> p{Rand({2, 3}, 1), {}};
  ParamBinder<double> bind;
  try {
    Linear(C(Rand({4, 2}, 2)), p, bind);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
    EXPECT_NE(std::string(e.what()).find("[4x2]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(LayerNorm, ConstantSliceNormalizesToZero) {
  const TD y = LayerNorm(C(Make({3}, {5, 5, 5})), C(TD::Constant({3}, 1)), C(TD({3})), 1e-5).value();
  EXPECT_LT(y.vec().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LayerNorm, UnitStdPair) {
  const TD y = LayerNorm(C(Make({2}, {1, 3})), C(TD::Constant({2}, 1)), C(TD({2})), 1e-12).value();
  EXPECT_NEAR(y[0], -1, 1e-9);
  EXPECT_NEAR(y[1], 1, 1e-9);
}

TEST(LayerNorm, ZeroScaleReturnsShift) {
  const TD y = LayerNorm(C(Make({2}, {1, 3})), C(TD({2})), C(Make({2}, {7, 7})), 1e-5).value();
  EXPECT_EQ(y, Make({2}, {7, 7}));
}

TEST(LinearAndLayerNorm, Deterministic) {
  const TD x = Rand({5, 6}, 3), w = Rand({4, 6}, 4);
  EXPECT_EQ(Linear<double>(C(x), C(w), nullptr).value(), Linear<double>(C(x), C(w), nullptr).value());
  const TD g = Rand({6}, 5), b = Rand({6}, 6);
  EXPECT_EQ(LayerNorm(C(x), C(g), C(b), 1e-5).value(), LayerNorm(C(x), C(g), C(b), 1e-5).value());
}

TEST(BilinearSample, IntegerPositionIsGather) {
  const TD x = Rand({3, 4, 2}, 7);
  const TD y = BilinearSample(C(x), C(Make({2}, {1.0, 2.0}))).value();
  EXPECT_EQ(y[0], x.at(1, 2, 0));
  EXPECT_EQ(y[1], x.at(1, 2, 1));
}

TEST(BilinearSample, CellCentreAveragesCorners) {
  const TD x = Make({2, 2, 1}, {1, 2, 4, 8});
  const TD y = BilinearSample(C(x), C(Make({2}, {0.5, 0.5}))).value();
  EXPECT_DOUBLE_EQ(y[0], (1 + 2 + 4 + 8) / 4.0);
}

TEST(BilinearSample, ClampsToEdge) {
  const TD x = Rand({3, 4, 2}, 8);
  const TD y = BilinearSample(C(x), C(Make({2}, {-3.7, 0.0}))).value();
  EXPECT_EQ(y[0], x.at(0, 0, 0));
  EXPECT_EQ(y[1], x.at(0, 0, 1));
}

TEST(BilinearSample, NonFinitePositionRejectedInCheckedMode) {
  const TD x = Rand({3, 4, 2}, 8);
  EXPECT_KIND(BilinearSample(C(x), C(Make({2}, {NAN, 0.0}))), kValue);
}

TEST(BilinearSample, ReproducesAffineFunctionsInside) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = rng.Uniform(-2, 2), b = rng.Uniform(-2, 2), c = rng.Uniform(-2, 2);
    TD x({5, 6, 1});
    for (Index t = 0; t < 5; ++t) {
      for (Index v = 0; v < 6; ++v) x.at(t, v, 0) = a * t + b * v + c;
    }
    const double t = rng.Uniform(0, 4), v = rng.Uniform(0, 5);
    const TD y = BilinearSample(C(x), C(Make({2}, {t, v}))).value();
    EXPECT_NEAR(y[0], a * t + b * v + c, 1e-6);
  }
}

TEST(BilinearWeights, SumToOneAndBounded) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto tap = BilinearWeights<double>(4, 7, rng.Uniform(-3, 7), rng.Uniform(-3, 10));
    double sum = 0;
    for (double w : tap.w) {
      EXPECT_GE(w, 0);
      EXPECT_LE(w, 1);
      sum += w;
    }
    EXPECT_NEAR(sum, 1, 1e-12);
  }
}

TEST(GridConv, RejectsEvenKernel) {
  EXPECT_KIND(GridConv<double>(C(Rand({2, 2, 1}, 1)), C(Rand({1, 4}, 2)), nullptr, 2), kDomain);
}

TEST(FiniteDiffCheck, LinearExample) {
  EXPECT_LT(FiniteDiffCheck("linear", {Rand({3, 4}, 1), Rand({5, 4}, 2), Rand({5}, 3)}, 1e-5), 1e-6);
}

TEST(FiniteDiffCheck, LayerNormExample) {
  EXPECT_LT(FiniteDiffCheck("layer_norm", {Rand({3, 6}, 1, -2, 2), Rand({6}, 2, 0.5, 1.5), Rand({6}, 3)},
                            1e-5),
            1e-5);
}

TEST(FiniteDiffCheck, BilinearInteriorExample) {
  EXPECT_LT(FiniteDiffCheck("bilinear_sample", {Rand({4, 5, 3}, 1), Make({2}, {1.3, 2.6})}, 1e-5), 1e-5);
}

TEST(FiniteDiffCheck, UnknownOperation) {
  EXPECT_KIND(FiniteDiffCheck("no_such_op", {Rand({2}, 1)}, 1e-5), kUnsupportedOp);
}

TEST(FiniteDiffCheck, RejectsBadEps) {
  EXPECT_KIND(FiniteDiffCheck("linear", {Rand({3, 4}, 1), Rand({5, 4}, 2), Rand({5}, 3)}, 0.5), kDomain);
}

TEST(FiniteDiffCheck, DetectsWrongAdjoint) {
  // Part of the forward slope bypasses the tape, so the adjoint is too small.
  const GradOp wrong{"wrong",
                     [](std::span<const VD> v) {
                       return Add(Scale(v[0], 1.7), C(Scale(C(v[0].value()), 0.3).value()));
                     },
                     FindGradOp("scale").make_inputs,
                     {}};
  Rng rng(1);
  EXPECT_GT(FiniteDiffCheck(wrong, wrong.make_inputs(rng)).max_rel_error, 0.1);
}

class GradSuiteSeeds : public ::testing::TestWithParam<int> {};

TEST_P(GradSuiteSeeds, EveryRegisteredOperation) {
  for (const auto& e : RunGradSuite(static_cast<std::uint64_t>(GetParam()))) {
    EXPECT_TRUE(e.passed) << e.name << " max_rel_error " << e.report.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradSuiteSeeds, ::testing::Values(1, 2, 3));

}  // namespace
}  // namespace sasmamba::testing
