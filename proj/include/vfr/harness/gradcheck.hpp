#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vfr/numcore/autodiff.hpp"
#include "vfr/numcore/tensor.hpp"

namespace vfr {

// Worst per-coordinate relative error of `analytic` against central
// differences of `loss`, |a - n| / max(|a|, |n|, 1e-6). Each coordinate tries
// the step sizes 1e-4, 1e-5, 1e-6 and keeps the best, so a step that happens
// to straddle a rectifier kink does not count against the gradient. Checks at
// most `max_coords` coordinates (chosen by `seed`), all when 0.
double relative_gradient_error(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                               const Tensor& analytic, std::uint64_t seed,
                               std::size_t max_coords = 0);

// A differentiable expression of one or more input tensors; non-scalar
// outputs are reduced against fixed random weights.
using GradcheckExpr = std::function<Var(Graph&, const std::vector<Var>&)>;

// Worst relative error over all inputs of `expr` at `inputs`.
double check_expression(const GradcheckExpr& expr, const std::vector<Tensor>& inputs,
                        std::uint64_t seed, std::size_t max_coords = 0);

struct GradcheckCase {
  std::string name;
  double worst = 0.0;  // over all seeds
  std::size_t checks = 0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  std::size_t seeds = 0;
  double worst() const;
  bool passed(double tolerance) const { return worst() < tolerance; }
};

// Every differentiable op, the extractor, the denoiser objective, the
// recommendation loss of each model kind and the attack loss (through item
// embeddings and through an image), each at `seeds` random draws.
GradcheckReport run_gradcheck(std::size_t seeds, std::uint64_t base_seed);

}  // namespace vfr
