#include "vfr/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vfr/attacks/attacks.hpp"
#include "vfr/gdmpd/diffusion.hpp"
#include "vfr/recmodels/model.hpp"
#include "vfr/rng.hpp"
#include "vfr/vision/extractor.hpp"

namespace vfr {

double relative_gradient_error(const std::function<double(const Tensor&)>& loss, const Tensor& x,
                               const Tensor& analytic, std::uint64_t seed,
                               std::size_t max_coords) {
  require_same_shape(x, analytic, "relative_gradient_error");
  std::vector<std::size_t> coords;
  if (max_coords == 0 || max_coords >= x.size()) {
    coords.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) coords[i] = i;
  } else {
    Rng rng(seed);
    coords = rng.sample_without_replacement(x.size(), max_coords);
  }
  Tensor probe = x;
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double orig = probe[i];
    double best = std::numeric_limits<double>::infinity();
    for (double h : {1e-4, 1e-5, 1e-6}) {
      probe[i] = orig + h;
      const double up = loss(probe);
      probe[i] = orig - h;
      const double down = loss(probe);
      probe[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6});
      best = std::min(best, std::abs(analytic[i] - numeric) / denom);
      if (best < 1e-7) break;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

namespace {

Tensor random_tensor(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values whose magnitude stays in [0.1, 1], away from rectifier kinks.
Tensor off_kink(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

Var reduce(Graph& g, Var out, const Tensor& weights) {
  if (out.size() == 1) return out;
  return sum(mul(out, g.constant(weights)));
}

}  // namespace

double check_expression(const GradcheckExpr& expr, const std::vector<Tensor>& inputs,
                        std::uint64_t seed, std::size_t max_coords) {
  Tensor weights;
  auto evaluate = [&](const std::vector<Tensor>& values, bool want_grad,
                      std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& v : values) vars.push_back(want_grad ? g.parameter(v) : g.constant(v));
    Var out = expr(g, vars);
    if (weights.empty() && out.size() != 1) {
      Rng rng(derive_seed(seed, "reduce"));
      weights = random_tensor(rng, out.shape());
    }
    Var loss = reduce(g, out, weights);
    if (want_grad) {
      Gradients gr = backward(g, loss);
      for (const Var& v : vars) grads->push_back(gr[v]);
    }
    return loss.value().item();
  };
  std::vector<Tensor> analytic;
  evaluate(inputs, true, &analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<Tensor> probe = inputs;
    auto loss = [&](const Tensor& x) {
      probe[k] = x;
      return evaluate(probe, false, nullptr);
    };
    worst = std::max(worst, relative_gradient_error(loss, inputs[k], analytic[k],
                                                    derive_seed(seed, "coords", k), max_coords));
  }
  return worst;
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& c : cases) w = std::max(w, c.worst);
  return w;
}

namespace {

struct Case {
  std::string name;
  // Draws inputs for one seed and returns the worst error.
  std::function<double(Rng&, std::uint64_t)> run;
};

Case op(std::string name, std::function<std::vector<Tensor>(Rng&)> draw, GradcheckExpr expr) {
  return {std::move(name), [draw, expr](Rng& rng, std::uint64_t seed) {
            return check_expression(expr, draw(rng), seed);
          }};
}

std::vector<InteractionRecord> toy_records(Rng& rng, std::size_t user, std::size_t items) {
  std::vector<InteractionRecord> recs;
  const auto picked = rng.sample_without_replacement(items, std::min<std::size_t>(items, 5));
  for (std::size_t i = 0; i < picked.size(); ++i) {
    recs.push_back({user, picked[i], i < 3 ? 1 : 0});
  }
  return recs;
}

// Relative error of the gradient of `objective` w.r.t. the user embedding and
// every public tensor.
double check_public(PublicParams params, const Tensor* features, Tensor user,
                    const std::function<Var(const BoundParams&, Var)>& objective,
                    std::uint64_t seed, std::size_t max_coords) {
  auto run = [&](const PublicParams& p, const Tensor& u, std::vector<Tensor>* grads) {
    Graph g;
    BoundParams b = BoundParams::bind(g, p, features, grads != nullptr);
    Var uv = grads ? g.parameter(u) : g.constant(u);
    Var loss = objective(b, uv);
    if (grads) {
      Gradients gr = backward(g, loss);
      grads->push_back(gr[uv]);
      grads->push_back(gr[b.item_embeddings]);
      if (b.visual_transform.valid()) grads->push_back(gr[b.visual_transform]);
      for (std::size_t l = 0; l < b.weights.size(); ++l) {
        grads->push_back(gr[b.weights[l]]);
        grads->push_back(gr[b.biases[l]]);
      }
      grads->push_back(gr[b.head]);
    }
    return loss.value().item();
  };
  std::vector<Tensor> analytic;
  run(params, user, &analytic);
  double worst = 0.0;
  worst = std::max(worst, relative_gradient_error(
                              [&](const Tensor& x) { return run(params, x, nullptr); }, user,
                              analytic[0], derive_seed(seed, "user"), max_coords));
  auto tensors = params.tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const Tensor original = *tensors[k];
    auto loss = [&](const Tensor& x) {
      *tensors[k] = x;
      const double v = run(params, user, nullptr);
      *tensors[k] = original;
      return v;
    };
    worst = std::max(worst, relative_gradient_error(loss, original, analytic[k + 1],
                                                    derive_seed(seed, "tensor", k), max_coords));
  }
  return worst;
}

constexpr std::size_t kToyItems = 6;
constexpr std::size_t kToyFeatures = 8;
constexpr std::size_t kModelCoords = 10;

PublicParams toy_params(ModelKind kind, std::uint64_t seed,
                        std::size_t feature_dim = kToyFeatures) {
  PublicParams p = PublicParams::init(kind, kToyItems, feature_dim, seed);
  // Trained-looking magnitudes so the head is not near zero.
  Rng rng(derive_seed(seed, "toy_scale"));
  for (Tensor* t : p.tensors()) {
    for (double& v : t->values()) v += rng.normal(0.0, 0.2);
  }
  return p;
}

std::vector<Case> all_cases() {
  std::vector<Case> cases;
  auto mat = [](std::size_t r, std::size_t c) {
    return [r, c](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {r, c})}; };
  };
  auto two = [](Shape a, Shape b) {
    return [a, b](Rng& rng) {
      return std::vector<Tensor>{random_tensor(rng, a), random_tensor(rng, b)};
    };
  };
  cases.push_back(op("add", two({3, 4}, {3, 4}), [](Graph&, auto v) { return add(v[0], v[1]); }));
  cases.push_back(op("sub", two({3, 4}, {3, 4}), [](Graph&, auto v) { return v[0] - v[1]; }));
  cases.push_back(op("mul", two({3, 4}, {3, 4}), [](Graph&, auto v) { return v[0] * v[1]; }));
  cases.push_back(op("mul_self", mat(3, 4), [](Graph&, auto v) { return mul(v[0], v[0]); }));
  cases.push_back(op("scale", mat(3, 4), [](Graph&, auto v) { return scale(v[0], -0.7); }));
  cases.push_back(op("neg", mat(3, 4), [](Graph&, auto v) { return neg(v[0]); }));
  cases.push_back(op("matmul", two({3, 4}, {4, 5}), [](Graph&, auto v) { return matmul(v[0], v[1]); }));
  cases.push_back(op("transpose", mat(3, 4), [](Graph&, auto v) { return transpose(v[0]); }));
  cases.push_back(op("add_bias", two({3, 4}, {4}), [](Graph&, auto v) { return add_bias(v[0], v[1]); }));
  cases.push_back(op("reshape", mat(3, 4), [](Graph&, auto v) { return reshape(v[0], {2, 6}); }));
  cases.push_back(op("sigmoid", [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {3, 4}, -4, 4)}; },
                     [](Graph&, auto v) { return sigmoid(v[0]); }));
  cases.push_back(op("relu", [](Rng& rng) { return std::vector<Tensor>{off_kink(rng, {3, 4})}; },
                     [](Graph&, auto v) { return relu(v[0]); }));
  cases.push_back(op("leaky_relu", [](Rng& rng) { return std::vector<Tensor>{off_kink(rng, {3, 4})}; },
                     [](Graph&, auto v) { return leaky_relu(v[0], 0.1); }));
  cases.push_back(op("square", mat(3, 4), [](Graph&, auto v) { return square(v[0]); }));
  cases.push_back(op("sum", mat(3, 4), [](Graph&, auto v) { return sum(v[0]); }));
  cases.push_back(op("mean", mat(3, 4), [](Graph&, auto v) { return mean(v[0]); }));
  cases.push_back(op("bce_loss",
                     [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {6}, 0.05, 0.95)}; },
                     [](Graph&, auto v) {
                       return bce_loss(v[0], Tensor::vector({1, 0, 1, 1, 0, 0}));
                     }));
  cases.push_back(op("mse_loss", two({2, 5}, {2, 5}), [](Graph&, auto v) { return mse_loss(v[0], v[1]); }));
  cases.push_back(op("concat_rows", two({2, 3}, {4, 3}), [](Graph&, auto v) { return concat({v[0], v[1]}, 0); }));
  cases.push_back(op("concat_cols", two({3, 2}, {3, 4}), [](Graph&, auto v) { return concat({v[0], v[1]}, 1); }));
  cases.push_back(op("concat_vectors", two({3}, {5}), [](Graph&, auto v) { return concat({v[0], v[1], v[0]}, 0); }));
  cases.push_back(op("gather_rows", mat(4, 3), [](Graph&, auto v) { return gather_rows(v[0], {2, 0, 2, 3}); }));
  cases.push_back(op("broadcast_rows", [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {4})}; },
                     [](Graph&, auto v) { return broadcast_rows(v[0], 3); }));
  cases.push_back(op("sum_rows", mat(4, 3), [](Graph&, auto v) { return sum_rows(v[0]); }));
  cases.push_back(op("gather", [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {5})}; },
                     [](Graph&, auto v) { return gather(v[0], {4, 1, 1, 0}); }));
  cases.push_back(op("conv2d_stride1", two({2, 5, 5}, {3, 2, 3, 3}),
                     [](Graph&, auto v) { return conv2d(v[0], v[1], 1, 1); }));
  cases.push_back(op("conv2d_stride2", two({2, 6, 6}, {3, 2, 3, 3}),
                     [](Graph&, auto v) { return conv2d(v[0], v[1], 2, 1); }));
  cases.push_back(op("add_channel_bias", two({3, 4, 4}, {3}),
                     [](Graph&, auto v) { return add_channel_bias(v[0], v[1]); }));
  cases.push_back(op("avg_pool", [](Rng& rng) { return std::vector<Tensor>{random_tensor(rng, {2, 4, 6})}; },
                     [](Graph&, auto v) { return avg_pool(v[0], 2, 3); }));

  cases.push_back({"extractor_image", [](Rng& rng, std::uint64_t seed) {
                     const Extractor ex(derive_seed(seed, "extractor"));
                     const Tensor img = random_tensor(rng, {3, 16, 16});
                     return check_expression(
                         [&](Graph& g, auto v) { return ex.extract(g, v[0]); }, {img}, seed, 24);
                   }});
  cases.push_back({"denoiser_objective", [](Rng& rng, std::uint64_t seed) {
                     const Denoiser den(derive_seed(seed, "denoiser"));
                     const std::size_t t = 1 + rng.below(50);
                     const Tensor eps = random_tensor(rng, {3, 4, 4});
                     std::vector<Tensor> inputs = den.weights();
                     inputs.push_back(random_tensor(rng, {3, 4, 4}));
                     return check_expression(
                         [&](Graph& g, auto v) {
                           std::vector<Var> w(v.begin(), v.begin() + 7);
                           return mse_loss(den.forward(g, v[7], t, w), g.constant(eps));
                         },
                         inputs, seed, 12);
                   }});

  for (ModelKind kind : {ModelKind::Ncf, ModelKind::Vncf, ModelKind::LightGcn, ModelKind::LightVgcn}) {
    cases.push_back({"local_loss_" + std::string(to_string(kind)),
                     [kind](Rng& rng, std::uint64_t seed) {
                       const PublicParams p = toy_params(kind, seed);
                       const Tensor features = random_tensor(rng, {kToyItems, kToyFeatures});
                       ClientState c = ClientState::init(0, toy_records(rng, 0, kToyItems), seed);
                       for (double& v : c.embedding.values()) v += rng.normal(0.0, 0.3);
                       return check_public(
                           p, &features, c.embedding,
                           [&](const BoundParams& b, Var u) { return local_loss(b, u, c); }, seed,
                           kModelCoords);
                     }});
  }
  for (ModelKind kind : {ModelKind::Ncf, ModelKind::Vncf, ModelKind::LightGcn, ModelKind::LightVgcn}) {
    cases.push_back({"attack_loss_" + std::string(to_string(kind)),
                     [kind](Rng& rng, std::uint64_t seed) {
                       const PublicParams p = toy_params(kind, seed);
                       const Tensor features = random_tensor(rng, {kToyItems, kToyFeatures});
                       SyntheticUser su;
                       su.embedding = random_tensor(rng, {kEmbeddingDim}, -0.5, 0.5);
                       su.positives = {1, 3};
                       const TargetSet targets{{5}};
                       const Scorer scorer(p, &features);
                       // The synthetic user's embedding is a constant of the
                       // attack loss; the user slot here is unused.
                       return check_public(
                           p, &features, Tensor({kEmbeddingDim}),
                           [&](const BoundParams& b, Var) {
                             return attack_loss(b, {su}, targets, 2, scorer);
                           },
                           seed, kModelCoords);
                     }});
  }
  cases.push_back({"attack_loss_through_image", [](Rng& rng, std::uint64_t seed) {
                     ExtractorConfig cfg;
                     cfg.image_side = 8;
                     const Extractor ex(derive_seed(seed, "extractor"), cfg);
                     const PublicParams q = toy_params(ModelKind::Vncf, seed, ex.output_dim());
                     const Tensor features = random_tensor(rng, {kToyItems, ex.output_dim()});
                     SyntheticUser su;
                     su.embedding = random_tensor(rng, {kEmbeddingDim}, -0.5, 0.5);
                     su.positives = {0, 2};
                     const TargetSet targets{{4}};
                     const Scorer scorer(q, &features);
                     const Tensor img = random_tensor(rng, {3, 8, 8});
                     return check_expression(
                         [&](Graph& g, auto v) {
                           BoundParams b = BoundParams::bind(g, q, &features, false);
                           FeatureOverride fo{4, ex.extract(g, v[0])};
                           return attack_loss(b, {su}, targets, 2, scorer, fo);
                         },
                         {img}, seed, 24);
                   }});
  return cases;
}

}  // namespace

GradcheckReport run_gradcheck(std::size_t seeds, std::uint64_t base_seed) {
  GradcheckReport report;
  report.seeds = seeds;
  for (const Case& c : all_cases()) {
    GradcheckCase out{c.name, 0.0, 0};
    for (std::size_t s = 0; s < seeds; ++s) {
      const std::uint64_t seed = derive_seed(base_seed, c.name, s);
      Rng rng(seed);
      out.worst = std::max(out.worst, c.run(rng, seed));
      ++out.checks;
    }
    report.cases.push_back(std::move(out));
  }
  return report;
}

}  // namespace vfr
