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

#include "sasmamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sasmamba {
namespace {

thread_local bool checked_mode = true;

inline Index ClampIndex(Index i, Index n) {
  return std::clamp<Index>(i, 0, n - 1);
}

template <typename Scalar>
Scalar SigmoidOf(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// Applies f elementwise and records g(x, y) as the local derivative.
template <typename Scalar, typename F, typename DF>
Var<Scalar> Elementwise(const Var<Scalar>& x, std::string_view name, F f,
                        DF df) {
  CheckFinite(x.value(), name);
  Tensor<Scalar> y(x.shape());
  const auto& xv = x.value().vec();
  for (Index i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return Tape<Scalar>::Record(std::move(y), {&x}, [x, df] {
    return [x, df](const Tensor<Scalar>& g) {
      Tensor<Scalar>* gx = x.grad_sink();
      const auto& xv = x.value().vec();
      for (Index i = 0; i < xv.size(); ++i) (*gx)[i] += g[i] * df(xv[i]);
    };
  });
}

void RequireGrid(const Shape& shape, std::string_view op) {
  if (shape.size() != 3) {
    Fail(ErrorKind::kDimension,
         std::string(op) + ": expected a T x V x C tensor, got " +
             ShapeString(shape));
  }
}

}  // namespace

bool CheckedMode() { return checked_mode; }
void SetCheckedMode(bool enabled) { checked_mode = enabled; }

template <typename Scalar>
Var<Scalar> Linear(const Var<Scalar>& x, const Var<Scalar>& weight,
                   const Var<Scalar>* bias) {
  if (weight.value().rank() != 2 || x.value().cols() != weight.dim(1)) {
    Fail(ErrorKind::kDimension, "linear: input " + ShapeString(x.shape()) +
                                    " does not match weight " +
                                    ShapeString(weight.shape()));
  }
  const Index out = weight.dim(0);
  Var<Scalar> b = bias ? *bias : Var<Scalar>();
  if (b.defined() && (b.value().rank() != 1 || b.size() != out)) {
    Fail(ErrorKind::kDimension, "linear: bias " + ShapeString(b.shape()) +
                                    " does not match weight " +
                                    ShapeString(weight.shape()));
  }
  CheckFinite(x.value(), "linear");

  Shape shape = x.shape();
  shape.back() = out;
  Tensor<Scalar> y(shape);
  y.matrix().noalias() = x.value().matrix() * weight.value().matrix().transpose();
  if (b.defined()) y.matrix().rowwise() += b.value().vec().transpose();

  return Tape<Scalar>::Record(std::move(y), {&x, &weight, &b}, [x, weight, b] {
    return [x, weight, b](const Tensor<Scalar>& g) {
      if (auto* gx = x.grad_sink()) {
        gx->matrix().noalias() += g.matrix() * weight.value().matrix();
      }
      if (auto* gw = weight.grad_sink()) {
        gw->matrix().noalias() += g.matrix().transpose() * x.value().matrix();
      }
      if (auto* gb = b.grad_sink()) {
        gb->vec() += g.matrix().colwise().sum().transpose();
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> Linear(const Var<Scalar>& x, const LinearParams<Scalar>& p,
                   ParamBinder<Scalar>& bind) {
  Var<Scalar> w = bind(p.weight);
  if (!p.has_bias()) return Linear(x, w, static_cast<const Var<Scalar>*>(nullptr));
  Var<Scalar> b = bind(p.bias);
  return Linear(x, w, &b);
}

template <typename Scalar>
Var<Scalar> LayerNorm(const Var<Scalar>& x, const Var<Scalar>& gamma,
                      const Var<Scalar>& beta, Scalar epsilon) {
  const Index channels = x.value().cols();
  if (gamma.size() != channels || beta.size() != channels) {
    Fail(ErrorKind::kDimension, "layer_norm: input " + ShapeString(x.shape()) +
                                    " does not match gamma " +
                                    ShapeString(gamma.shape()));
  }
  if (!(epsilon > 0)) Fail(ErrorKind::kDomain, "layer_norm: epsilon must be > 0");
  CheckFinite(x.value(), "layer_norm");

  const auto xm = x.value().matrix();
  const Index rows = xm.rows();
  Tensor<Scalar> xhat(x.shape());
  Vector<Scalar> rstd(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mean = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mean).square().mean();
    rstd[r] = Scalar(1) / std::sqrt(var + epsilon);
    xhat.matrix().row(r) = (xm.row(r).array() - mean) * rstd[r];
  }
  Tensor<Scalar> y(x.shape());
  y.matrix() = (xhat.matrix().array().rowwise() *
                gamma.value().vec().transpose().array())
                   .rowwise() +
               beta.value().vec().transpose().array();

  return Tape<Scalar>::Record(
      std::move(y), {&x, &gamma, &beta},
      [x, gamma, beta, xhat = std::move(xhat), rstd = std::move(rstd)] {
        return [x, gamma, beta, xhat, rstd](const Tensor<Scalar>& g) {
          const auto gm = g.matrix();
          const auto hm = xhat.matrix();
          if (auto* gg = gamma.grad_sink()) {
            gg->vec() += (gm.array() * hm.array()).colwise().sum().transpose().matrix();
          }
          if (auto* gb = beta.grad_sink()) {
            gb->vec() += gm.colwise().sum().transpose();
          }
          if (auto* gx = x.grad_sink()) {
            const auto gamma_row = gamma.value().vec().transpose().array();
            for (Index r = 0; r < gm.rows(); ++r) {
              const auto dxhat = (gm.row(r).array() * gamma_row).eval();
              const Scalar mean_d = dxhat.mean();
              const Scalar mean_dh = (dxhat * hm.row(r).array()).mean();
              gx->matrix().row(r).array() +=
                  rstd[r] * (dxhat - mean_d - hm.row(r).array() * mean_dh);
            }
          }
        };
      });
}

template <typename Scalar>
Var<Scalar> LayerNorm(const Var<Scalar>& x, const NormParams<Scalar>& p,
                      ParamBinder<Scalar>& bind) {
  return LayerNorm(x, bind(p.gamma), bind(p.beta), p.epsilon);
}

template <typename Scalar>
Var<Scalar> Gelu(const Var<Scalar>& x) {
  constexpr Scalar kInvSqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  constexpr Scalar kInvSqrt2Pi =
      std::numbers::inv_sqrtpi_v<Scalar> / std::numbers::sqrt2_v<Scalar>;
  return Elementwise(
      x, "gelu",
      [](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * kInvSqrt2)); },
      [](Scalar v) {
        return Scalar(0.5) * (Scalar(1) + std::erf(v * kInvSqrt2)) +
               v * kInvSqrt2Pi * std::exp(Scalar(-0.5) * v * v);
      });
}

template <typename Scalar>
Var<Scalar> Silu(const Var<Scalar>& x) {
  return Elementwise(
      x, "silu", [](Scalar v) { return v * SigmoidOf(v); },
      [](Scalar v) {
        const Scalar s = SigmoidOf(v);
        return s * (Scalar(1) + v * (Scalar(1) - s));
      });
}

template <typename Scalar>
Var<Scalar> Sigmoid(const Var<Scalar>& x) {
  return Elementwise(
      x, "sigmoid", [](Scalar v) { return SigmoidOf(v); },
      [](Scalar v) {
        const Scalar s = SigmoidOf(v);
        return s * (Scalar(1) - s);
      });
}

template <typename Scalar>
Var<Scalar> Softplus(const Var<Scalar>& x) {
  return Elementwise(
      x, "softplus",
      [](Scalar v) {
        return std::max(v, Scalar(0)) + std::log1p(std::exp(-std::abs(v)));
      },
      [](Scalar v) { return SigmoidOf(v); });
}

template <typename Scalar>
Var<Scalar> Add(const Var<Scalar>& a, const Var<Scalar>& b) {
  CheckShape(a.shape() == b.shape(), "add", a.shape(), b.shape());
  Tensor<Scalar> y(a.shape(), a.value().vec() + b.value().vec());
  CheckFinite(y, "add");
  return Tape<Scalar>::Record(std::move(y), {&a, &b}, [a, b] {
    return [a, b](const Tensor<Scalar>& g) {
      if (auto* ga = a.grad_sink()) ga->vec() += g.vec();
      if (auto* gb = b.grad_sink()) gb->vec() += g.vec();
    };
  });
}

template <typename Scalar>
Var<Scalar> Mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  CheckShape(a.shape() == b.shape(), "mul", a.shape(), b.shape());
  Tensor<Scalar> y(a.shape(), a.value().vec().cwiseProduct(b.value().vec()));
  CheckFinite(y, "mul");
  return Tape<Scalar>::Record(std::move(y), {&a, &b}, [a, b] {
    return [a, b](const Tensor<Scalar>& g) {
      if (auto* ga = a.grad_sink()) ga->vec() += g.vec().cwiseProduct(b.value().vec());
      if (auto* gb = b.grad_sink()) gb->vec() += g.vec().cwiseProduct(a.value().vec());
    };
  });
}

template <typename Scalar>
Var<Scalar> Scale(const Var<Scalar>& x, Scalar factor) {
  Tensor<Scalar> y(x.shape(), x.value().vec() * factor);
  return Tape<Scalar>::Record(std::move(y), {&x}, [x, factor] {
    return [x, factor](const Tensor<Scalar>& g) {
      x.grad_sink()->vec() += g.vec() * factor;
    };
  });
}

template <typename Scalar>
Var<Scalar> AddN(std::span<const Var<Scalar>> terms) {
  if (terms.empty()) Fail(ErrorKind::kValue, "add_n: no terms");
  Var<Scalar> total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = Add(total, terms[i]);
  return total;
}

template <typename Scalar>
Var<Scalar> Sum(const Var<Scalar>& x) {
  Tensor<Scalar> y({1});
  y[0] = x.value().vec().sum();
  return Tape<Scalar>::Record(std::move(y), {&x}, [x] {
    return [x](const Tensor<Scalar>& g) {
      x.grad_sink()->vec().array() += g[0];
    };
  });
}

template <typename Scalar>
Var<Scalar> Dot(const Var<Scalar>& x, const Tensor<Scalar>& weights) {
  CheckShape(x.size() == weights.size(), "dot", x.shape(), weights.shape());
  Tensor<Scalar> y({1});
  y[0] = x.value().vec().dot(weights.vec());
  return Tape<Scalar>::Record(std::move(y), {&x}, [x, weights] {
    return [x, weights](const Tensor<Scalar>& g) {
      x.grad_sink()->vec() += g[0] * weights.vec();
    };
  });
}

template <typename Scalar>
Var<Scalar> Reshape(const Var<Scalar>& x, Shape shape) {
  Tensor<Scalar> y = x.value().Reshaped(std::move(shape));
  return Tape<Scalar>::Record(std::move(y), {&x}, [x] {
    return [x](const Tensor<Scalar>& g) { x.grad_sink()->vec() += g.vec(); };
  });
}

template <typename Scalar>
Var<Scalar> GatherRows(const Var<Scalar>& x, std::span<const Index> rows) {
  const auto xm = x.value().matrix();
  const Index cols = xm.cols();
  if (rows.empty()) Fail(ErrorKind::kDimension, "gather_rows: empty index list");
  Tensor<Scalar> y({static_cast<Index>(rows.size()), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xm.rows()) {
      Fail(ErrorKind::kIndex, "gather_rows: row " + std::to_string(rows[i]) +
                                  " out of range for " + ShapeString(x.shape()));
    }
    y.matrix().row(static_cast<Index>(i)) = xm.row(rows[i]);
  }
  std::vector<Index> index(rows.begin(), rows.end());
  return Tape<Scalar>::Record(std::move(y), {&x}, [x, index = std::move(index)] {
    return [x, index](const Tensor<Scalar>& g) {
      auto gx = x.grad_sink()->matrix();
      const auto gm = g.matrix();
      for (std::size_t i = 0; i < index.size(); ++i) {
        gx.row(index[i]) += gm.row(static_cast<Index>(i));
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> SliceChannels(const Var<Scalar>& x, Index begin, Index count) {
  const Index cols = x.value().cols();
  if (begin < 0 || count < 1 || begin + count > cols) {
    Fail(ErrorKind::kIndex, "slice_channels: [" + std::to_string(begin) + ", " +
                                std::to_string(begin + count) + ") out of range for " +
                                ShapeString(x.shape()));
  }
  Shape shape = x.shape();
  shape.back() = count;
  Tensor<Scalar> y(shape);
  y.matrix() = x.value().matrix().middleCols(begin, count);
  return Tape<Scalar>::Record(std::move(y), {&x}, [x, begin, count] {
    return [x, begin, count](const Tensor<Scalar>& g) {
      x.grad_sink()->matrix().middleCols(begin, count) += g.matrix();
    };
  });
}

template <typename Scalar>
Var<Scalar> AddTiled(const Var<Scalar>& x, const Var<Scalar>& table) {
  RequireGrid(x.shape(), "add_tiled");
  const Index a = x.dim(0), b = x.dim(1), c = x.dim(2);
  const Shape& ts = table.shape();
  const bool over_a = ts.size() == 3 && ts[0] == 1 && ts[1] == b && ts[2] == c;
  const bool over_b = ts.size() == 3 && ts[0] >= a && ts[1] == 1 && ts[2] == c;
  CheckShape(over_a || over_b, "add_tiled", x.shape(), ts);

  Tensor<Scalar> y = x.value();
  Eigen::Map<RowMatrix<Scalar>> ym(y.data(), a, b * c);
  const auto& tv = table.value().vec();
  if (over_a) {
    ym.rowwise() += tv.transpose();
  } else {
    for (Index i = 0; i < a; ++i) {
      Eigen::Map<RowMatrix<Scalar>> slab(ym.row(i).data(), b, c);
      slab.rowwise() += tv.segment(i * c, c).transpose();
    }
  }
  return Tape<Scalar>::Record(std::move(y), {&x, &table}, [x, table, over_a, a, b, c] {
    return [x, table, over_a, a, b, c](const Tensor<Scalar>& g) {
      if (auto* gx = x.grad_sink()) gx->vec() += g.vec();
      if (auto* gt = table.grad_sink()) {
        Eigen::Map<const RowMatrix<Scalar>> gm(g.data(), a, b * c);
        if (over_a) {
          gt->vec() += gm.colwise().sum().transpose();
        } else {
          for (Index i = 0; i < a; ++i) {
            Eigen::Map<const RowMatrix<Scalar>> slab(gm.row(i).data(), b, c);
            gt->vec().segment(i * c, c) += slab.colwise().sum().transpose();
          }
        }
      }
    };
  });
}

template <typename Scalar>
BilinearTap<Scalar> BilinearWeights(Index frames, Index joints, Scalar t,
                                    Scalar v) {
  if (CheckedMode() && !(std::isfinite(t) && std::isfinite(v))) {
    Fail(ErrorKind::kValue, "bilinear_sample: non-finite position");
  }
  auto axis = [](Scalar p, Index n, Index& lo, Index& hi, Scalar& frac,
                 Scalar& slope) {
    const Scalar top = Scalar(n - 1);
    slope = (p >= 0 && p <= top) ? Scalar(1) : Scalar(0);
    const Scalar pc = std::clamp(p, Scalar(0), top);
    lo = std::min<Index>(static_cast<Index>(std::floor(pc)), n - 1);
    hi = std::min<Index>(lo + 1, n - 1);
    frac = pc - Scalar(lo);
  };
  Index t0, t1, v0, v1;
  Scalar ft, fv, st, sv;
  axis(t, frames, t0, t1, ft, st);
  axis(v, joints, v0, v1, fv, sv);

  BilinearTap<Scalar> tap;
  tap.t = {t0, t0, t1, t1};
  tap.v = {v0, v1, v0, v1};
  tap.w = {(1 - ft) * (1 - fv), (1 - ft) * fv, ft * (1 - fv), ft * fv};
  tap.dw_dt = {-(1 - fv) * st, -fv * st, (1 - fv) * st, fv * st};
  tap.dw_dv = {-(1 - ft) * sv, (1 - ft) * sv, -ft * sv, ft * sv};
  return tap;
}

template <typename Scalar>
Var<Scalar> BilinearSample(const Var<Scalar>& x, const Var<Scalar>& pos) {
  RequireGrid(x.shape(), "bilinear_sample");
  if (pos.size() != 2) {
    Fail(ErrorKind::kDimension, "bilinear_sample: position must have 2 entries, got " +
                                    ShapeString(pos.shape()));
  }
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  const auto tap = BilinearWeights(frames, joints, pos.value()[0], pos.value()[1]);
  const auto xm = x.value().matrix();
  Tensor<Scalar> y({channels});
  for (int k = 0; k < 4; ++k) {
    y.vec() += tap.w[k] * xm.row(tap.t[k] * joints + tap.v[k]).transpose();
  }
  return Tape<Scalar>::Record(std::move(y), {&x, &pos}, [x, pos, tap, joints] {
    return [x, pos, tap, joints](const Tensor<Scalar>& g) {
      const auto xm = x.value().matrix();
      if (auto* gx = x.grad_sink()) {
        for (int k = 0; k < 4; ++k) {
          gx->matrix().row(tap.t[k] * joints + tap.v[k]) +=
              tap.w[k] * g.vec().transpose();
        }
      }
      if (auto* gp = pos.grad_sink()) {
        for (int k = 0; k < 4; ++k) {
          const Scalar proj = xm.row(tap.t[k] * joints + tap.v[k]).dot(g.vec());
          (*gp)[0] += tap.dw_dt[k] * proj;
          (*gp)[1] += tap.dw_dv[k] * proj;
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> DeformSample(const Var<Scalar>& x, const Var<Scalar>& pos) {
  RequireGrid(x.shape(), "deform_sample");
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  const Shape& ps = pos.shape();
  if (ps.size() != 4 || ps[0] != frames || ps[1] != joints || ps[3] != 2) {
    Fail(ErrorKind::kDimension, "deform_sample: positions " + ShapeString(ps) +
                                    " do not match features " +
                                    ShapeString(x.shape()));
  }
  CheckFinite(x.value(), "deform_sample");
  const Index taps = ps[2];
  const Index count = frames * joints * taps;
  const auto xm = x.value().matrix();
  const auto& pv = pos.value();
  Tensor<Scalar> y({frames, joints, taps, channels});
  auto ym = y.matrix();
  for (Index i = 0; i < count; ++i) {
    const auto tap = BilinearWeights(frames, joints, pv[2 * i], pv[2 * i + 1]);
    for (int k = 0; k < 4; ++k) {
      ym.row(i) += tap.w[k] * xm.row(tap.t[k] * joints + tap.v[k]);
    }
  }
  return Tape<Scalar>::Record(std::move(y), {&x, &pos}, [=] {
    return [=](const Tensor<Scalar>& g) {
      const auto xm = x.value().matrix();
      const auto gm = g.matrix();
      const auto& pv = pos.value();
      Tensor<Scalar>* gx = x.grad_sink();
      Tensor<Scalar>* gp = pos.grad_sink();
      for (Index i = 0; i < count; ++i) {
        const auto tap = BilinearWeights(frames, joints, pv[2 * i], pv[2 * i + 1]);
        for (int k = 0; k < 4; ++k) {
          const Index row = tap.t[k] * joints + tap.v[k];
          if (gx) gx->matrix().row(row) += tap.w[k] * gm.row(i);
          if (gp) {
            const Scalar proj = xm.row(row).dot(gm.row(i));
            (*gp)[2 * i] += tap.dw_dt[k] * proj;
            (*gp)[2 * i + 1] += tap.dw_dv[k] * proj;
          }
        }
      }
    };
  });
}

namespace {

// Rows of the clamp-padded kernel x kernel neighbourhood, (dt, dv) major.
void NeighbourRows(Index frames, Index joints, Index kernel, Index t, Index v,
                   std::vector<Index>& rows) {
  const Index half = kernel / 2;
  rows.clear();
  for (Index i = 0; i < kernel; ++i) {
    for (Index j = 0; j < kernel; ++j) {
      rows.push_back(ClampIndex(t + i - half, frames) * joints +
                     ClampIndex(v + j - half, joints));
    }
  }
}

template <typename Scalar>
RowMatrix<Scalar> Im2Col(const Tensor<Scalar>& x, Index kernel) {
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  const auto xm = x.matrix();
  RowMatrix<Scalar> cols(frames * joints, kernel * kernel * channels);
  std::vector<Index> rows;
  for (Index t = 0; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      NeighbourRows(frames, joints, kernel, t, v, rows);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        cols.row(t * joints + v).segment(static_cast<Index>(k) * channels, channels) =
            xm.row(rows[k]);
      }
    }
  }
  return cols;
}

void RequireOddKernel(Index kernel, std::string_view op) {
  if (kernel < 1 || kernel % 2 == 0) {
    Fail(ErrorKind::kDomain, std::string(op) + ": kernel must be odd and >= 1, got " +
                                 std::to_string(kernel));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> GridConv(const Var<Scalar>& x, const Var<Scalar>& weight,
                     const Var<Scalar>* bias, Index kernel) {
  RequireGrid(x.shape(), "grid_conv");
  RequireOddKernel(kernel, "grid_conv");
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  if (weight.value().rank() != 2 || weight.dim(1) != kernel * kernel * channels) {
    Fail(ErrorKind::kDimension, "grid_conv: weight " + ShapeString(weight.shape()) +
                                    " does not match input " + ShapeString(x.shape()) +
                                    " with kernel " + std::to_string(kernel));
  }
  const Index out = weight.dim(0);
  Var<Scalar> b = bias ? *bias : Var<Scalar>();
  if (b.defined() && b.size() != out) {
    Fail(ErrorKind::kDimension, "grid_conv: bias " + ShapeString(b.shape()) +
                                    " does not match weight " +
                                    ShapeString(weight.shape()));
  }
  CheckFinite(x.value(), "grid_conv");

  Tensor<Scalar> y({frames, joints, out});
  y.matrix().noalias() = Im2Col(x.value(), kernel) * weight.value().matrix().transpose();
  if (b.defined()) y.matrix().rowwise() += b.value().vec().transpose();

  return Tape<Scalar>::Record(std::move(y), {&x, &weight, &b}, [=] {
    return [=](const Tensor<Scalar>& g) {
      const auto gm = g.matrix();
      if (auto* gw = weight.grad_sink()) {
        gw->matrix().noalias() += gm.transpose() * Im2Col(x.value(), kernel);
      }
      if (auto* gb = b.grad_sink()) gb->vec() += gm.colwise().sum().transpose();
      if (auto* gx = x.grad_sink()) {
        const RowMatrix<Scalar> dcols = gm * weight.value().matrix();
        std::vector<Index> rows;
        for (Index t = 0; t < frames; ++t) {
          for (Index v = 0; v < joints; ++v) {
            NeighbourRows(frames, joints, kernel, t, v, rows);
            for (std::size_t k = 0; k < rows.size(); ++k) {
              gx->matrix().row(rows[k]) +=
                  dcols.row(t * joints + v).segment(static_cast<Index>(k) * channels,
                                                    channels);
            }
          }
        }
      }
    };
  });
}

template <typename Scalar>
Var<Scalar> DepthwiseGridConv(const Var<Scalar>& x, const Var<Scalar>& weight,
                              const Var<Scalar>* bias, Index kernel) {
  RequireGrid(x.shape(), "depthwise_grid_conv");
  RequireOddKernel(kernel, "depthwise_grid_conv");
  const Index frames = x.dim(0), joints = x.dim(1), channels = x.dim(2);
  const Shape expected{kernel * kernel, channels};
  CheckShape(weight.shape() == expected, "depthwise_grid_conv", x.shape(),
             weight.shape());
  Var<Scalar> b = bias ? *bias : Var<Scalar>();
  if (b.defined()) CheckShape(b.size() == channels, "depthwise_grid_conv", x.shape(), b.shape());
  CheckFinite(x.value(), "depthwise_grid_conv");

  const auto xm = x.value().matrix();
  const auto wm = weight.value().matrix();
  Tensor<Scalar> y({frames, joints, channels});
  auto ym = y.matrix();
  std::vector<Index> rows;
  for (Index t = 0; t < frames; ++t) {
    for (Index v = 0; v < joints; ++v) {
      NeighbourRows(frames, joints, kernel, t, v, rows);
      auto out = ym.row(t * joints + v);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        out += wm.row(static_cast<Index>(k)).cwiseProduct(xm.row(rows[k]));
      }
    }
  }
  if (b.defined()) ym.rowwise() += b.value().vec().transpose();

  return Tape<Scalar>::Record(std::move(y), {&x, &weight, &b}, [=] {
    return [=](const Tensor<Scalar>& g) {
      const auto xm = x.value().matrix();
      const auto wm = weight.value().matrix();
      const auto gm = g.matrix();
      Tensor<Scalar>* gx = x.grad_sink();
      Tensor<Scalar>* gw = weight.grad_sink();
      if (auto* gb = b.grad_sink()) gb->vec() += gm.colwise().sum().transpose();
      if (!gx && !gw) return;
      std::vector<Index> rows;
      for (Index t = 0; t < frames; ++t) {
        for (Index v = 0; v < joints; ++v) {
          NeighbourRows(frames, joints, kernel, t, v, rows);
          const auto grow = gm.row(t * joints + v);
          for (std::size_t k = 0; k < rows.size(); ++k) {
            const Index kk = static_cast<Index>(k);
            if (gx) gx->matrix().row(rows[k]) += wm.row(kk).cwiseProduct(grow);
            if (gw) gw->matrix().row(kk) += xm.row(rows[k]).cwiseProduct(grow);
          }
        }
      }
    };
  });
}

#define SASMAMBA_INSTANTIATE_OPS(S)                                            \
  template Var<S> Linear(const Var<S>&, const Var<S>&, const Var<S>*);         \
  template Var<S> Linear(const Var<S>&, const LinearParams<S>&, ParamBinder<S>&); \
  template Var<S> LayerNorm(const Var<S>&, const Var<S>&, const Var<S>&, S);   \
  template Var<S> LayerNorm(const Var<S>&, const NormParams<S>&, ParamBinder<S>&); \
  template Var<S> Gelu(const Var<S>&);                                         \
  template Var<S> Silu(const Var<S>&);                                         \
  template Var<S> Sigmoid(const Var<S>&);                                      \
  template Var<S> Softplus(const Var<S>&);                                     \
  template Var<S> Add(const Var<S>&, const Var<S>&);                           \
  template Var<S> Mul(const Var<S>&, const Var<S>&);                           \
  template Var<S> Scale(const Var<S>&, S);                                     \
  template Var<S> AddN(std::span<const Var<S>>);                               \
  template Var<S> Sum(const Var<S>&);                                          \
  template Var<S> Dot(const Var<S>&, const Tensor<S>&);                        \
  template Var<S> Reshape(const Var<S>&, Shape);                               \
  template Var<S> GatherRows(const Var<S>&, std::span<const Index>);           \
  template Var<S> SliceChannels(const Var<S>&, Index, Index);                  \
  template Var<S> AddTiled(const Var<S>&, const Var<S>&);                      \
  template BilinearTap<S> BilinearWeights(Index, Index, S, S);                 \
  template Var<S> BilinearSample(const Var<S>&, const Var<S>&);                \
  template Var<S> DeformSample(const Var<S>&, const Var<S>&);                  \
  template Var<S> GridConv(const Var<S>&, const Var<S>&, const Var<S>*, Index); \
  template Var<S> DepthwiseGridConv(const Var<S>&, const Var<S>&, const Var<S>*, Index);

SASMAMBA_INSTANTIATE_OPS(float)
SASMAMBA_INSTANTIATE_OPS(double)

}  // namespace sasmamba
