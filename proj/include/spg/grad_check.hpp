#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "spg/errors.hpp"
#include "spg/tensor.hpp"

namespace spg {

/// Central-difference gradient oracle. `loss_and_grad` must rebuild the
/// computation at the parameters' current values, run backward, and return
/// the scalar loss; gradients land in the parameters' grad buffers. Returns
/// max over coordinates of |analytic - numeric| / max(1, |numeric|).
inline double grad_check(const std::function<double()>& loss_and_grad,
                         std::span<Tensor* const> params, double h = 1e-6) {
  for (Tensor* p : params) p->zero_grad();
  loss_and_grad();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor* p : params) analytic.push_back(p->grad());

  const auto value_at = [&]() {
    for (Tensor* p : params) p->zero_grad();
    const double v = loss_and_grad();
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss evaluation");
    return v;
  };

  double max_rel_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + h;
      const double lp = value_at();
      p[i] = saved - h;
      const double lm = value_at();
      p[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > max_rel_err) max_rel_err = err;
    }
  }
  for (Tensor* p : params) p->zero_grad();
  return max_rel_err;
}

}  // namespace spg
