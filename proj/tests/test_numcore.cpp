#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "vfr/errors.hpp"
#include "vfr/harness/gradcheck.hpp"
#include "vfr/numcore/autodiff.hpp"
#include "vfr/numcore/optim.hpp"
#include "vfr/rng.hpp"

using namespace vfr;

namespace {

Tensor uniform(Rng& rng, Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul values") {
  const Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  const Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  CHECK(matmul_values(eye, a) == a);
  CHECK(matmul_values(Tensor(Shape{2, 2}), Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6})) ==
        Tensor(Shape{2, 3}));
  const auto& want = test::frozen()["matmul_2x2_2x1"];
  const Tensor got = matmul_values(a, Tensor::matrix(2, 1, {5, 6}));
  CHECK(got.at(0, 0) == want[0][0].get<double>());
  CHECK(got.at(1, 0) == want[1][0].get<double>());
  CHECK_THROWS_AS(matmul_values(a, Tensor::matrix(3, 1, {1, 2, 3})), ShapeMismatch);
}

TEST_CASE("sigmoid") {
  Graph g;
  Var x = g.constant(Tensor::vector({0.0, 50.0, 1.0, -700.0, 700.0}));
  const Tensor s = sigmoid(x).value();
  CHECK(s[0] == 0.5);
  CHECK(std::abs(s[1] - 1.0) < 1e-12);
  CHECK(test::rel_err(s[2], test::frozen()["sigmoid_1"].get<double>()) < 1e-15);
  CHECK(s[3] >= 0.0);
  CHECK(s[4] <= 1.0);
  CHECK(s.all_finite());
}

TEST_CASE("bce loss") {
  Graph g;
  const double ln2 = test::frozen()["ln2"].get<double>();
  CHECK(bce_loss(g.constant(Tensor::vector({1.0 - 1e-12})), Tensor::vector({1})).value().item() <
        1e-11);
  CHECK(test::rel_err(bce_loss(g.constant(Tensor::vector({0.5})), Tensor::vector({1})).value().item(),
                      ln2) < 1e-15);
  CHECK(test::rel_err(
            bce_loss(g.constant(Tensor::vector({0.5, 0.5})), Tensor::vector({1, 0})).value().item(),
            test::frozen()["bce_two_symmetric"].get<double>()) < 1e-15);
  // Clamped: exact zeros and ones stay finite.
  CHECK(std::isfinite(bce_loss(g.constant(Tensor::vector({0.0, 1.0})), Tensor::vector({1, 0}))
                          .value()
                          .item()));
  CHECK_THROWS_AS(bce_loss(g.constant(Tensor::vector({0.5})), Tensor::vector({0.5})), NonBinaryLabel);
  CHECK_THROWS_AS(bce_loss(g.constant(Tensor::vector({0.5, 0.5})), Tensor::vector({1})), ShapeMismatch);
}

TEST_CASE("concat") {
  Graph g;
  Var a = g.parameter(Tensor::vector({1}));
  Var b = g.parameter(Tensor::vector({2}));
  CHECK(concat({a}, 0).value() == a.value());
  CHECK(concat({a, b}, 0).value() == Tensor::vector({1, 2}));
  Gradients grads = backward(g, sum(concat({a, b}, 0)));
  CHECK(grads[a] == Tensor::vector({1}));
  CHECK(grads[b] == Tensor::vector({1}));
  CHECK_THROWS_AS(concat({g.constant(Tensor(Shape{2, 2})), g.constant(Tensor(Shape{2, 3}))}, 0),
                  ShapeMismatch);
}

TEST_CASE("backward basics") {
  Graph g;
  Var w = g.parameter(Tensor::scalar(0.0));
  CHECK(backward(g, sigmoid(w))[w][0] == 0.25);

  Graph g2;
  Var v = g2.parameter(Tensor::vector({3, -1, 2}));
  Var unused = g2.parameter(Tensor::vector({5, 5}));
  Gradients grads = backward(g2, sum(v));
  CHECK(grads[v] == Tensor::vector({1, 1, 1}));
  CHECK(grads[unused] == Tensor::vector({0, 0}));

  CHECK_THROWS_AS(backward(g2, v), NotScalarLoss);
}

TEST_CASE("backward matches central differences on bce(sigmoid(w.x))") {
  Rng rng(11);
  const Tensor x = uniform(rng, {4, 1}, -2, 2);
  const Tensor w0 = uniform(rng, {1, 4}, -2, 2);
  const Tensor r = Tensor::vector({1});
  auto value = [&](const Tensor& w) {
    Graph g;
    return bce_loss(reshape(sigmoid(matmul(g.constant(w), g.constant(x))), {1}), r).value().item();
  };
  Graph g;
  Var w = g.parameter(w0);
  const Tensor grad =
      backward(g, bce_loss(reshape(sigmoid(matmul(w, g.constant(x))), {1}), r))[w];
  CHECK(finite_diff_check(value, w0, grad, 1e-5) < 1e-6);
}

TEST_CASE("finite_diff_check reference cases") {
  const Tensor x = Tensor::vector({1, 2});
  CHECK(finite_diff_check([](const Tensor& t) { return t[0] + t[1]; }, x, Tensor::vector({1, 1})) ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(finite_diff_check([](const Tensor& t) { return 0.5 * (t[0] * t[0] + t[1] * t[1]); }, x, x) <
        1e-8);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(3);
    Graph g;
    Var a = g.parameter(uniform(rng, {3, 4}, -2, 2));
    Var b = g.parameter(uniform(rng, {4, 2}, -2, 2));
    Var loss = sum(square(relu(matmul(a, b))));
    Gradients gr = backward(g, loss);
    return std::make_pair(gr[a], gr[b]);
  };
  CHECK(run() == run());
}

TEST_CASE("every op matches central differences on inputs in [-2, 2]") {
  // Property over 100 seeds; the full suite also runs in the acceptance binary.
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(derive_seed(5, "ops", seed));
    const Tensor a = uniform(rng, {3, 4}, -2, 2);
    const Tensor b = uniform(rng, {3, 4}, -2, 2);
    const Tensor m = uniform(rng, {4, 2}, -2, 2);
    const auto chain = [](Graph&, const std::vector<Var>& v) {
      return sigmoid(add_bias(matmul(mul(v[0], v[1]), v[2]), sum_rows(v[2])));
    };
    CHECK(check_expression(chain, {a, b, m}, seed) < 1e-4);
    const auto sq = [](Graph&, const std::vector<Var>& v) { return mean(square(sub(v[0], v[1]))); };
    CHECK(check_expression(sq, {a, b}, seed) < 1e-4);
  }
  const GradcheckReport report = run_gradcheck(20, 99);
  for (const auto& c : report.cases) {
    CAPTURE(c.name);
    CHECK(c.worst < 1e-4);
  }
}

TEST_CASE("adam") {
  Tensor p = Tensor::vector({1.0, -2.0});
  AdamState s = AdamState::for_param(p);
  adam_step(p, Tensor::vector({0.0, 0.0}), s);
  CHECK(p == Tensor::vector({1.0, -2.0}));
  CHECK(s.t == 0);

  Tensor q = Tensor::scalar(0.5);
  AdamState sq = AdamState::for_param(q);
  adam_step(q, Tensor::scalar(3.0), sq);
  CHECK(std::abs(std::abs(q[0] - 0.5) - 1e-3) < 1e-10);
  CHECK(sq.t == 1);
  const double after_one = q[0];
  adam_step(q, Tensor::scalar(3.0), sq);
  CHECK(q[0] < after_one);
  CHECK(sq.t == 2);
  CHECK_THROWS_AS(adam_step(q, Tensor::vector({1, 2}), sq), ShapeMismatch);
}

TEST_CASE("sgd_apply") {
  Tensor p = Tensor::scalar(1.0);
  sgd_apply(p, Tensor::scalar(0.0), 0.001);
  CHECK(p[0] == 1.0);
  sgd_apply(p, Tensor::scalar(1.0), 0.001);
  CHECK(p[0] == 0.999);
  Tensor v = Tensor::vector({1, 2, 3});
  sgd_apply(v, Tensor::vector({1, -1, 0.5}), 0.1);
  CHECK(v == Tensor::vector({1 - 0.1 * 1, 2 - 0.1 * -1, 3 - 0.1 * 0.5}));
  CHECK_THROWS_AS(sgd_apply(v, Tensor::scalar(1), 0.1), ShapeMismatch);
}
