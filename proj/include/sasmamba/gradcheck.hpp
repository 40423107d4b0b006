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

// Finite-difference validation of recorded adjoints, in double precision.
//
// An operation's output y is reduced to the scalar sum(r * y) with a fixed
// random r. For each checked input element the analytic derivative is
// compared against (f(x + eps) - f(x - eps)) / 2 eps with the relative error
// |a - n| / max(|a|, |n|, floor). Where the one-sided differences disagree the
// step shrinks up to 100x and the best-matching estimate is kept.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sasmamba/autodiff.hpp"
#include "sasmamba/random.hpp"

namespace sasmamba {

using GradFn = std::function<Var<double>(std::span<const Var<double>>)>;

struct GradOp {
  std::string name;
  GradFn fn;
  std::function<std::vector<Tensor<double>>(Rng&)> make_inputs;
  /// Inputs excluded from checking (labels, targets); empty means all.
  std::vector<bool> differentiable;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double floor = 1e-3;
  /// Fraction of input elements probed, chosen by `sample_seed`.
  double sample_fraction = 1.0;
  std::uint64_t sample_seed = 0;
  std::uint64_t probe_seed = 0x5eed;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t worst_input = 0;
  Index worst_element = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  Index checked = 0;
  /// Elements whose one-sided differences disagreed (a kink or strong
  /// curvature near x); these were also compared against one-sided and
  /// smaller-step differences.
  Index kinks = 0;
};

/// Every registered operation, in registration order.
const std::vector<GradOp>& GradOpRegistry();

/// Throws an unsupported-op error for unknown names.
const GradOp& FindGradOp(std::string_view name);

GradCheckReport FiniteDiffCheck(const GradOp& op, std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& opts = {});

/// Maximum relative error of the named operation on the given inputs.
double FiniteDiffCheck(std::string_view op_id, std::vector<Tensor<double>> inputs,
                       double eps);

/// Checks the named operation on inputs drawn from `seed`.
GradCheckReport RunGradCheck(std::string_view op_id, std::uint64_t seed,
                             const GradCheckOptions& opts = {});

struct GradSuiteEntry {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

/// All registered operations on one seed.
std::vector<GradSuiteEntry> RunGradSuite(std::uint64_t seed, double tolerance = 1e-4);

}  // namespace sasmamba
