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

#include "distill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace distill {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport finite_difference_check(const std::function<Tensor()>& loss,
                                        std::vector<NamedTensor> params, double eps, double tol) {
  for (auto& p : params) p.tensor.zero_grad();
  backward(loss());

  GradCheckReport report;
  report.tolerance = tol;
  for (auto& p : params) {
    ParamCheck check{p.name, p.tensor.numel(), 0.0, 0.0};
    const Matrix analytic = p.tensor.has_grad()
                                ? p.tensor.grad()
                                : Matrix::Zero(p.tensor.rows(), p.tensor.cols());
    Matrix& values = p.tensor.mutable_value();
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        const double saved = values(i, j);
        values(i, j) = saved + eps;
        const double up = loss().item();
        values(i, j) = saved - eps;
        const double down = loss().item();
        values(i, j) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double a = analytic(i, j);
        check.max_abs_error = std::max(check.max_abs_error, std::abs(a - numeric));
        const double rel = relative_error(a, numeric);
        // NaN compares false; make it fail loudly instead.
        check.max_rel_error = std::isfinite(rel) ? std::max(check.max_rel_error, rel)
                                                 : std::numeric_limits<double>::infinity();
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.params.push_back(std::move(check));
    p.tensor.zero_grad();
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace distill
