#pragma once

#include <cstdint>
#include <functional>

#include "vfr/numcore/tensor.hpp"

namespace vfr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
  AdamConfig config;

  static AdamState for_param(const Tensor& param, AdamConfig config = {});
};

// Bias-corrected Adam. An all-zero gradient is skipped entirely (parameter,
// moments and step counter unchanged), as in lazy/sparse Adam.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

// param - lr * grad, elementwise.
void sgd_apply(Tensor& param, const Tensor& grad, double lr);

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
// `loss` must be deterministic; `analytic` is its gradient at `x`.
double finite_diff_check(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                         const Tensor& analytic, double h = 1e-5);

}  // namespace vfr
