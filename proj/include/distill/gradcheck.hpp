// Copyright 2026  The distill Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

struct ParamCheck {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

// |analytic - numeric| / max(|analytic|, |numeric|, floor). The floor keeps
// gradients that are zero up to round-off from reporting huge ratios.
inline constexpr double kRelErrorFloor = 1e-6;
double relative_error(double analytic, double numeric, double floor = kRelErrorFloor);

// Compares backward() gradients of `loss` against central differences
// (f(p + eps) - f(p - eps)) / (2 eps), element by element. `loss` must be
// deterministic and rebuild its graph from the current parameter values on
// every call. Existing gradients on `params` are cleared.
GradCheckReport finite_difference_check(const std::function<Tensor()>& loss,
                                        std::vector<NamedTensor> params, double eps = 1e-5,
                                        double tol = 1e-4);

}  // namespace distill
