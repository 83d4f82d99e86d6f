#include "vfr/numcore/optim.hpp"

#include <algorithm>
#include <cmath>

#include "vfr/errors.hpp"

namespace vfr {

AdamState AdamState::for_param(const Tensor& param, AdamConfig config) {
  AdamState s;
  s.m = Tensor::zeros_like(param);
  s.v = Tensor::zeros_like(param);
  s.config = config;
  return s;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, state.m, "adam_step state");
  require_same_shape(param, state.v, "adam_step state");
  const auto& c = state.config;
  if (std::all_of(grad.values().begin(), grad.values().end(), [](double g) { return g == 0.0; })) {
    return;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void sgd_apply(Tensor& param, const Tensor& grad, double lr) {
  require_same_shape(param, grad, "sgd_apply");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

double finite_diff_check(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                         const Tensor& analytic, double h) {
  require_same_shape(x, analytic, "finite_diff_check");
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = loss(probe);
    probe[i] = orig - h;
    const double down = loss(probe);
    probe[i] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace vfr
