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

#include "sasmamba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sasmamba/model.hpp"
#include "sasmamba/training.hpp"

namespace sasmamba {
namespace {

using T = Tensor<double>;
using V = Var<double>;
using Inputs = std::vector<T>;

T Uniform(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return UniformTensor<double>(std::move(s), lo, hi, rng);
}

// Uniform on [lo, hi] but at least `margin` away from every integer, so a
// central difference never straddles a bilinear cell boundary.
T OffGrid(Shape s, Rng& rng, double lo, double hi, double margin = 0.05) {
  T t(std::move(s));
  for (Index i = 0; i < t.size(); ++i) {
    double x;
    do {
      x = rng.Uniform(lo, hi);
    } while (std::abs(x - std::round(x)) < margin);
    t[i] = x;
  }
  return t;
}

// Sampling positions inside the grid (away from the clamp boundary) on the
// last axis pair (t, v).
T GridPositions(Shape s, Index frames, Index joints, Rng& rng) {
  T pos(std::move(s));
  for (Index i = 0; i < pos.size(); i += 2) {
    pos[i] = OffGrid({1}, rng, 0.0, static_cast<double>(frames - 1))[0];
    pos[i + 1] = OffGrid({1}, rng, 0.0, static_cast<double>(joints - 1))[0];
  }
  return pos;
}

GradOp Simple(std::string name, GradFn fn, std::function<Inputs(Rng&)> make,
              std::vector<bool> differentiable = {}) {
  return GradOp{std::move(name), std::move(fn), std::move(make), std::move(differentiable)};
}

// Composite layers take parameter structs. The op rebuilds a struct of the
// right layout, overwrites its tensors with the supplied inputs and attaches
// the input Vars so gradients flow to them.
template <typename P>
GradOp Composite(std::string name, std::function<P(Rng&)> make_params,
                 std::function<T(Rng&)> make_x,
                 std::function<void(P&, const std::function<void(T&)>&)> visit,
                 std::function<V(const V&, const P&, ParamBinder<double>&)> run) {
  GradOp op;
  op.name = std::move(name);
  op.make_inputs = [=](Rng& rng) {
    Inputs in{make_x(rng)};
    P p = make_params(rng);
    visit(p, [&](T& t) { in.push_back(t); });
    return in;
  };
  Rng layout_rng(0);
  const P layout = make_params(layout_rng);
  op.fn = [=](std::span<const V> vars) {
    P p = layout;
    ParamBinder<double> bind;
    std::size_t i = 1;
    visit(p, [&](T& t) {
      t = vars[i].value();
      bind.Attach(t, vars[i]);
      ++i;
    });
    if (i != vars.size()) Fail(ErrorKind::kValue, "composite gradcheck input count mismatch");
    return run(vars[0], p, bind);
  };
  return op;
}

template <typename F>
auto Visitor(F visit_named) {
  return [visit_named](auto& p, const std::function<void(T&)>& f) {
    visit_named(p, [&](const std::string&, T& t) { f(t); });
  };
}

SelectiveSsmParams<double> SsmForTest(Index channels, Index state, Rng& rng) {
  return InitSelectiveSsm<double>(channels, state, DefaultDtRank(channels), rng);
}

StreamSet<double> StreamsForTest(Index channels, bool gated, Rng& rng) {
  std::vector<ScanStream> all(std::begin(kAllStreams), std::end(kAllStreams));
  StreamSet<double> s = InitStreamSet<double>(channels, 2, all, gated, rng);
  return s;
}

// Larger offset weights than init so sampled positions move off the grid.
SaConvParams<double> SaConvForTest(Index channels, Index kernel, Rng& rng) {
  SaConvParams<double> p = InitSaConv<double>(channels, kernel, rng);
  p.offset_weight = Uniform(p.offset_weight.shape(), rng, -0.6, 0.6);
  p.offset_bias = Uniform(p.offset_bias.shape(), rng, -1.2, 1.2);
  return p;
}

template <typename P>
void VisitStreams(P& s, const std::function<void(T&)>& f) {
  for (auto& stream : s.streams) {
    VisitSsm(stream.ssm, "", [&](const std::string&, T& t) { f(t); });
    if (stream.gated()) VisitLinear(stream.gate, "", [&](const std::string&, T& t) { f(t); });
  }
}

ModelConfig TinyConfig() {
  ModelConfig cfg;
  cfg.l = 1;
  cfg.d = 8;
  cfg.t = 3;
  cfg.v = 4;
  cfg.n = 2;
  return cfg;
}

std::vector<GradOp> BuildRegistry() {
  std::vector<GradOp> ops;

  // Dense primitives.
  ops.push_back(Simple(
      "linear", [](auto v) { return Linear(v[0], v[1], &v[2]); },
      [](Rng& r) { return Inputs{Uniform({3, 4}, r), Uniform({5, 4}, r), Uniform({5}, r)}; }));
  ops.push_back(Simple(
      "linear_no_bias", [](auto v) { return Linear<double>(v[0], v[1], nullptr); },
      [](Rng& r) { return Inputs{Uniform({2, 3, 4}, r), Uniform({2, 4}, r)}; }));
  ops.push_back(Simple(
      "layer_norm", [](auto v) { return LayerNorm(v[0], v[1], v[2], 1e-5); },
      [](Rng& r) {
        return Inputs{Uniform({3, 6}, r, -2, 2), Uniform({6}, r, 0.5, 1.5), Uniform({6}, r)};
      }));
  ops.push_back(Simple("gelu", [](auto v) { return Gelu(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({4, 5}, r, -3, 3)}; }));
  ops.push_back(Simple("silu", [](auto v) { return Silu(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({4, 5}, r, -3, 3)}; }));
  ops.push_back(Simple("sigmoid", [](auto v) { return Sigmoid(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({4, 5}, r, -3, 3)}; }));
  ops.push_back(Simple("softplus", [](auto v) { return Softplus(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({4, 5}, r, -4, 4)}; }));
  ops.push_back(Simple("add", [](auto v) { return Add(v[0], v[1]); },
                       [](Rng& r) { return Inputs{Uniform({3, 4}, r), Uniform({3, 4}, r)}; }));
  ops.push_back(Simple("mul", [](auto v) { return Mul(v[0], v[1]); },
                       [](Rng& r) { return Inputs{Uniform({3, 4}, r), Uniform({3, 4}, r)}; }));
  ops.push_back(Simple("scale", [](auto v) { return Scale(v[0], 1.7); },
                       [](Rng& r) { return Inputs{Uniform({3, 4}, r)}; }));
  ops.push_back(Simple(
      "add_n", [](auto v) { return AddN(v); },
      [](Rng& r) { return Inputs{Uniform({2, 3}, r), Uniform({2, 3}, r), Uniform({2, 3}, r)}; }));
  ops.push_back(Simple("sum", [](auto v) { return Sum(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({3, 4}, r)}; }));
  ops.push_back(Simple("reshape", [](auto v) { return Reshape(v[0], {3, 4}); },
                       [](Rng& r) { return Inputs{Uniform({2, 6}, r)}; }));
  ops.push_back(Simple(
      "gather_rows",
      [](auto v) {
        static const Index rows[] = {4, 0, 0, 2, 3};
        return GatherRows(v[0], std::span<const Index>(rows));
      },
      [](Rng& r) { return Inputs{Uniform({5, 3}, r)}; }));
  ops.push_back(Simple("slice_channels", [](auto v) { return SliceChannels(v[0], 2, 3); },
                       [](Rng& r) { return Inputs{Uniform({3, 6}, r)}; }));
  ops.push_back(Simple(
      "add_tiled_spatial", [](auto v) { return AddTiled(v[0], v[1]); },
      [](Rng& r) { return Inputs{Uniform({4, 3, 5}, r), Uniform({1, 3, 5}, r)}; }));
  ops.push_back(Simple(
      "add_tiled_temporal", [](auto v) { return AddTiled(v[0], v[1]); },
      [](Rng& r) { return Inputs{Uniform({4, 3, 5}, r), Uniform({6, 1, 5}, r)}; }));

  // Sampling and grid convolutions.
  ops.push_back(Simple(
      "bilinear_sample", [](auto v) { return BilinearSample(v[0], v[1]); },
      [](Rng& r) { return Inputs{Uniform({4, 5, 3}, r), GridPositions({2}, 4, 5, r)}; }));
  ops.push_back(Simple(
      "deform_sample", [](auto v) { return DeformSample(v[0], v[1]); },
      [](Rng& r) { return Inputs{Uniform({3, 4, 2}, r), GridPositions({3, 4, 2, 2}, 3, 4, r)}; }));
  ops.push_back(Simple(
      "grid_conv", [](auto v) { return GridConv(v[0], v[1], &v[2], 3); },
      [](Rng& r) { return Inputs{Uniform({3, 4, 2}, r), Uniform({3, 18}, r), Uniform({3}, r)}; }));
  ops.push_back(Simple(
      "grid_conv_k5", [](auto v) { return GridConv<double>(v[0], v[1], nullptr, 5); },
      [](Rng& r) { return Inputs{Uniform({3, 2, 2}, r), Uniform({2, 50}, r)}; }));
  ops.push_back(Simple(
      "depthwise_grid_conv", [](auto v) { return DepthwiseGridConv(v[0], v[1], &v[2], 3); },
      [](Rng& r) { return Inputs{Uniform({3, 4, 3}, r), Uniform({9, 3}, r), Uniform({3}, r)}; }));

  // Selective scan.
  ops.push_back(Simple(
      "selective_scan_core",
      [](auto v) { return SelectiveScanCore(v[0], v[1], v[2], v[3], v[4], v[5]); },
      [](Rng& r) {
        return Inputs{Uniform({5, 3}, r),          Uniform({5, 3}, r, 0.05, 0.6),
                      Uniform({3, 2}, r, -0.5, 1), Uniform({5, 2}, r),
                      Uniform({5, 2}, r),          Uniform({3}, r)};
      }));
  ops.push_back(Composite<SelectiveSsmParams<double>>(
      "selective_scan", [](Rng& r) { return SsmForTest(4, 3, r); },
      [](Rng& r) { return Uniform({6, 4}, r); },
      Visitor([](auto& p, auto f) { VisitSsm(p, "", f); }),
      [](const V& x, const auto& p, auto& bind) { return SelectiveScan(x, p, bind); }));

  // SAS-SSM layer.
  ops.push_back(Composite<SaConvParams<double>>(
      "predict_offsets", [](Rng& r) { return SaConvForTest(2, 3, r); },
      [](Rng& r) { return Uniform({3, 4, 2}, r); },
      Visitor([](auto& p, auto f) { VisitSaConv(p, "", f); }),
      [](const V& x, const auto& p, auto& bind) {
        const OffsetField<double> field = PredictOffsets(x, p, bind);
        Rng wr(99);
        return Add(Dot(field.offsets, Uniform(field.offsets.shape(), wr)),
                   Dot(field.modulation, Uniform(field.modulation.shape(), wr)));
      }));
  ops.push_back(Simple(
      "neighbor_fuse", [](auto v) { return NeighborFuse(v[0], v[1], v[2]); },
      [](Rng& r) {
        return Inputs{Uniform({2, 3, 4, 3}, r), Uniform({2, 3, 4}, r, 0, 2), Uniform({4, 3}, r)};
      }));
  ops.push_back(Composite<SaConvParams<double>>(
      "sa_conv", [](Rng& r) { return SaConvForTest(3, 3, r); },
      [](Rng& r) { return Uniform({3, 4, 3}, r); },
      Visitor([](auto& p, auto f) { VisitSaConv(p, "", f); }),
      [](const V& x, const auto& p, auto& bind) { return SaConv(x, p, bind); }));
  ops.push_back(Simple("stride_sample", [](auto v) { return StrideSample(v[0], 2); },
                       [](Rng& r) { return Inputs{Uniform({2, 5, 3}, r)}; }));
  ops.push_back(Simple("stride_scan", [](auto v) { return StrideScan(v[0], StrideConfig{}); },
                       [](Rng& r) { return Inputs{Uniform({2, 7, 8}, r)}; }));
  ops.push_back(Composite<StreamSet<double>>(
      "four_stream_scan", [](Rng& r) { return StreamsForTest(4, false, r); },
      [](Rng& r) { return Uniform({2, 3, 4}, r); },
      [](auto& p, const auto& f) { VisitStreams(p, f); },
      [](const V& x, const auto& p, auto& bind) { return FourStreamScan(x, p, bind); }));
  ops.push_back(Composite<StreamSet<double>>(
      "four_stream_scan_gated", [](Rng& r) { return StreamsForTest(4, true, r); },
      [](Rng& r) { return Uniform({2, 3, 4}, r); },
      [](auto& p, const auto& f) { VisitStreams(p, f); },
      [](const V& x, const auto& p, auto& bind) { return FourStreamScan(x, p, bind); }));
  ops.push_back(Composite<SasLayerParams<double>>(
      "sas_ssm_layer",
      [](Rng& r) {
        SasLayerParams<double> p;
        p.sa_conv = SaConvForTest(8, 3, r);
        p.streams = StreamsForTest(8, false, r);
        return p;
      },
      [](Rng& r) { return Uniform({3, 4, 8}, r); },
      Visitor([](auto& p, auto f) { VisitSasLayer(p, "", f); }),
      [](const V& x, const auto& p, auto& bind) { return SasSsmLayer(x, p, bind); }));
  ops.push_back(Composite<Model<double>>(
      "model_tiny",
      [](Rng& r) {
        Model<double> m = InitModel<double>(TinyConfig(), r.NextU64());
        for (auto& b : m.blocks) {
          b.sas.sa_conv.offset_weight = Uniform(b.sas.sa_conv.offset_weight.shape(), r, -0.6, 0.6);
          b.sas.sa_conv.offset_bias = Uniform(b.sas.sa_conv.offset_bias.shape(), r, -1.2, 1.2);
        }
        return m;
      },
      [](Rng& r) { return Uniform({3, 4, 2}, r); },
      Visitor([](auto& m, auto f) { VisitModel(m, f); }),
      [](const V& x, const auto& m, auto& bind) { return Forward(m, x, bind); }));

  // Losses; the target is data, not a checked input.
  ops.push_back(Simple(
      "wmpjpe",
      [](auto v) {
        return Wmpjpe(v[0], v[1].value(), {0.5, 1.0, 2.0, 1.5});
      },
      [](Rng& r) { return Inputs{Uniform({3, 4, 3}, r), Uniform({3, 4, 3}, r)}; }, {true, false}));
  ops.push_back(Simple("tc_loss", [](auto v) { return TcLoss(v[0]); },
                       [](Rng& r) { return Inputs{Uniform({4, 3, 3}, r)}; }));
  ops.push_back(Simple(
      "mpjve", [](auto v) { return Mpjve(v[0], v[1].value()); },
      [](Rng& r) { return Inputs{Uniform({4, 3, 3}, r), Uniform({4, 3, 3}, r)}; }, {true, false}));
  ops.push_back(Simple(
      "total_loss", [](auto v) { return TotalLoss(v[0], v[1].value(), LossWeights{}).total; },
      [](Rng& r) { return Inputs{Uniform({4, 3, 3}, r), Uniform({4, 3, 3}, r)}; }, {true, false}));
  return ops;
}

double Evaluate(const GradOp& op, const std::vector<T>& inputs, const T& probe) {
  std::vector<V> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(V::Constant(t));
  return Dot(op.fn(vars), probe).value()[0];
}

double Relative(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace

const std::vector<GradOp>& GradOpRegistry() {
  static const std::vector<GradOp> registry = BuildRegistry();
  return registry;
}

const GradOp& FindGradOp(std::string_view name) {
  for (const auto& op : GradOpRegistry()) {
    if (op.name == name) return op;
  }
  Fail(ErrorKind::kUnsupportedOp,
       "no registered adjoint for operation '" + std::string(name) + "'");
}

GradCheckReport FiniteDiffCheck(const GradOp& op, std::vector<T> inputs,
                                const GradCheckOptions& opts) {
  if (!(opts.eps > 0 && opts.eps <= 1e-2)) {
    Fail(ErrorKind::kDomain, "finite_diff_check: eps must lie in (0, 1e-2]");
  }
  auto checked = [&](std::size_t i) { return op.differentiable.empty() || op.differentiable[i]; };

  // Analytic pass.
  Tape<double> tape;
  std::vector<V> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    vars.push_back(checked(i) ? tape.Leaf(inputs[i]) : V::Constant(inputs[i]));
  }
  const V out = op.fn(vars);
  Rng probe_rng(opts.probe_seed);
  const T probe = UniformTensor<double>(out.shape(), -1.0, 1.0, probe_rng);
  tape.Backward(Dot(out, probe));

  GradCheckReport report;
  Rng sample_rng(opts.sample_seed);
  const double base = Evaluate(op, inputs, probe);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!checked(i)) continue;
    const T analytic = vars[i].grad().empty() ? T(inputs[i].shape()) : vars[i].grad();
    for (Index e = 0; e < inputs[i].size(); ++e) {
      if (opts.sample_fraction < 1.0 && sample_rng.Uniform() >= opts.sample_fraction) continue;
      const double x = inputs[i][e];
      const double a = analytic[e];
      double err = 0;
      bool kinked = false;
      // A kink between x - h and x + h shows up as one-sided slopes that
      // disagree; the adjoint then equals one of them. Strong curvature gives
      // the same signature, where the central difference stays accurate.
      // Several kinks inside the interval defeat both, so the step shrinks
      // until the one-sided slopes agree.
      double numeric = 0;
      for (int level = 0; level < 3; ++level) {
        const double h = opts.eps * std::pow(10.0, -level);
        inputs[i][e] = x + h;
        const double plus = Evaluate(op, inputs, probe);
        inputs[i][e] = x - h;
        const double minus = Evaluate(op, inputs, probe);
        inputs[i][e] = x;
        const double central = (plus - minus) / (2 * h);
        const double here = Relative(a, central, opts.floor);
        if (level == 0) {
          numeric = central;
          err = here;
        }
        const double fwd = (plus - base) / h, bwd = (base - minus) / h;
        if (Relative(fwd, bwd, opts.floor) <= 1e-4) {
          if (level > 0 && here < err) {
            err = here;
            numeric = central;
          }
          break;
        }
        kinked = true;
        const double best =
            std::min({here, Relative(a, fwd, opts.floor), Relative(a, bwd, opts.floor)});
        if (best < err) {
          err = best;
          numeric = central;
        }
      }
      if (kinked) ++report.kinks;
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_element = e;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double FiniteDiffCheck(std::string_view op_id, std::vector<T> inputs, double eps) {
  GradCheckOptions opts;
  opts.eps = eps;
  return FiniteDiffCheck(FindGradOp(op_id), std::move(inputs), opts).max_rel_error;
}

GradCheckReport RunGradCheck(std::string_view op_id, std::uint64_t seed,
                             const GradCheckOptions& opts) {
  const GradOp& op = FindGradOp(op_id);
  Rng rng(seed);
  GradCheckOptions o = opts;
  o.probe_seed = opts.probe_seed ^ seed;
  return FiniteDiffCheck(op, op.make_inputs(rng), o);
}

std::vector<GradSuiteEntry> RunGradSuite(std::uint64_t seed, double tolerance) {
  std::vector<GradSuiteEntry> out;
  for (const auto& op : GradOpRegistry()) {
    GradSuiteEntry e;
    e.name = op.name;
    e.report = RunGradCheck(op.name, seed);
    e.passed = e.report.max_rel_error < tolerance;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace sasmamba
