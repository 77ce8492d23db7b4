#include <cmath>

#include "doctest.h"
#include "mbmpo/diffcore/adam.hpp"
#include "mbmpo/diffcore/mlp.hpp"
#include "mbmpo/diffcore/tape.hpp"
#include "mbmpo/errors.hpp"
#include "support.hpp"

using namespace mbmpo;
using mbmpo::testing::fd_gradient;
using mbmpo::testing::rel_error;

namespace {

MlpSpec spec_of(int in, std::vector<int> hidden, int out, Activation act, bool wn = false) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden_sizes = std::move(hidden);
  s.output_dim = out;
  s.activation = act;
  s.weight_normalized = wn;
  return s;
}

ParameterVector random_params(const LayoutPtr& layout, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(layout->size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = scale * standard_normal(rng);
  return ParameterVector(layout, v);
}

}  // namespace

TEST_CASE("parameter vector flatten/unflatten round trip is bit-exact") {
  Rng rng(3);
  for (bool wn : {false, true}) {
    const MlpSpec spec = spec_of(3, {5, 4}, 2, Activation::kRelu, wn);
    const ParameterVector p = random_params(make_mlp_layout(spec), rng);
    const ParameterVector q = ParameterVector::flatten(p.layout(), p.unflatten());
    CHECK(q.values() == p.values());
    CHECK(*q.layout() == *p.layout());
    CHECK(p.size() == spec.num_params());
  }
}

TEST_CASE("layout order is deterministic") {
  const MlpSpec spec = spec_of(2, {4}, 1, Activation::kTanh);
  const LayoutPtr a = make_mlp_layout(spec);
  const LayoutPtr b = make_mlp_layout(spec);
  REQUIRE(a->entries().size() == b->entries().size());
  for (std::size_t i = 0; i < a->entries().size(); ++i) {
    CHECK(a->entries()[i].name == b->entries()[i].name);
    CHECK(a->entries()[i].offset == b->entries()[i].offset);
  }
}

TEST_CASE("parameter vector arithmetic rejects mismatched layouts") {
  const ParameterVector a = ParameterVector::zeros(make_mlp_layout(spec_of(2, {}, 1, Activation::kTanh)));
  const ParameterVector b = ParameterVector::zeros(make_mlp_layout(spec_of(3, {}, 1, Activation::kTanh)));
  CHECK_THROWS_AS(a + b, ConfigError);
}

TEST_CASE("mlp_forward: zero parameters give zero output") {
  const MlpSpec spec = spec_of(3, {8, 8}, 2, Activation::kTanh);
  const ParameterVector p = ParameterVector::zeros(make_mlp_layout(spec));
  Eigen::VectorXd x(3);
  x << 0.4, -1.2, 3.0;
  CHECK(mlp_forward(spec, p, x).isZero(0.0));
}

TEST_CASE("mlp_forward: identity linear layer") {
  const MlpSpec spec = spec_of(3, {}, 3, Activation::kTanh);
  ParameterVector p = ParameterVector::zeros(make_mlp_layout(spec));
  p = p.with_block("l0.w", Eigen::MatrixXd::Identity(3, 3));
  Eigen::VectorXd x(3);
  x << 0.4, -1.2, 3.0;
  CHECK(mlp_forward(spec, p, x) == x);
}

TEST_CASE("mlp_forward: 2-4-1 tanh net matches a by-hand evaluation") {
  const MlpSpec spec = spec_of(2, {4}, 1, Activation::kTanh);
  Rng rng(11);
  const ParameterVector p = random_params(make_mlp_layout(spec), rng);
  const Eigen::MatrixXd w0 = p.block("l0.w");
  const Eigen::MatrixXd b0 = p.block("l0.b");
  const Eigen::MatrixXd w1 = p.block("l1.w");
  const Eigen::MatrixXd b1 = p.block("l1.b");
  const double x[2] = {0.3, -0.7};
  double out = b1(0, 0);
  for (int j = 0; j < 4; ++j) {
    double pre = b0(0, j);
    for (int i = 0; i < 2; ++i) pre += x[i] * w0(i, j);
    out += std::tanh(pre) * w1(j, 0);
  }
  Eigen::VectorXd input(2);
  input << 0.3, -0.7;
  CHECK(std::abs(mlp_forward(spec, p, input)[0] - out) <= 1e-12);
}

TEST_CASE("mlp_forward: dimension mismatch is a configuration error") {
  const MlpSpec spec = spec_of(2, {4}, 1, Activation::kTanh);
  const ParameterVector p = ParameterVector::zeros(make_mlp_layout(spec));
  CHECK_THROWS_AS(mlp_forward(spec, p, Eigen::VectorXd::Zero(3)), ConfigError);
}

TEST_CASE("weight normalization: scaling a direction leaves the output unchanged") {
  const MlpSpec spec = spec_of(3, {6}, 2, Activation::kRelu, true);
  Rng rng(5);
  const ParameterVector p = init_mlp(spec, rng);
  Eigen::MatrixXd inputs(4, 3);
  for (Eigen::Index i = 0; i < inputs.size(); ++i) inputs(i) = standard_normal(rng);
  const Eigen::MatrixXd before = mlp_forward_batch(spec, p, inputs);
  for (double c : {0.01, 3.0, 250.0}) {
    const ParameterVector q = p.with_block("l0.v", c * Eigen::MatrixXd(p.block("l0.v")))
                                  .with_block("l1.v", c * Eigen::MatrixXd(p.block("l1.v")));
    CHECK((mlp_forward_batch(spec, q, inputs) - before).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("weight-normalized init has effective weight equal to the direction") {
  const MlpSpec spec = spec_of(3, {6}, 2, Activation::kRelu, true);
  Rng rng(6);
  const ParameterVector p = init_mlp(spec, rng);
  const Eigen::MatrixXd v = p.block("l0.v");
  const Eigen::MatrixXd g = p.block("l0.g");
  for (Eigen::Index j = 0; j < v.cols(); ++j) CHECK(g(0, j) == doctest::Approx(v.col(j).norm()));
}

TEST_CASE("grad: quadratic and linear objectives") {
  const MlpSpec spec = spec_of(2, {3}, 1, Activation::kTanh);
  Rng rng(1);
  const ParameterVector p = random_params(make_mlp_layout(spec), rng);
  const ParameterVector sq = ad::grad(
      [](ad::Tape&, const ad::ParamVar& v) { return ad::sum(ad::square(v.flat())); }, p);
  CHECK((sq.values() - 2.0 * p.values()).cwiseAbs().maxCoeff() <= 1e-14);

  const ParameterVector c = random_params(p.layout(), rng);
  const ParameterVector lin = ad::grad(
      [&](ad::Tape& t, const ad::ParamVar& v) {
        return ad::sum(ad::mul(v.flat(), t.constant(c.values())));
      },
      p);
  CHECK(lin.values() == c.values());
}

TEST_CASE("grad: Gaussian negative log-likelihood of a policy net matches finite differences") {
  const MlpSpec spec = spec_of(3, {8, 8}, 2, Activation::kTanh);
  Rng rng(21);
  const ParameterVector p = init_mlp(spec, rng);
  Eigen::MatrixXd states(10, 3), actions(10, 2);
  for (Eigen::Index i = 0; i < states.size(); ++i) states(i) = standard_normal(rng);
  for (Eigen::Index i = 0; i < actions.size(); ++i) actions(i) = standard_normal(rng);
  auto nll = [&](ad::Tape& t, const ad::ParamVar& v) {
    const ad::Var mu = mlp_forward(spec, v, t.constant(states));
    return ad::scale(ad::mean(ad::row_sum(ad::square(ad::sub(t.constant(actions), mu)))), 0.5);
  };
  const ParameterVector g = ad::grad(nll, p);
  const Eigen::VectorXd fd = fd_gradient(
      [&](const ParameterVector& q) { return ad::value_and_grad(nll, q).value; }, p, 1e-5);
  CHECK(rel_error(g.values(), fd) <= 1e-5);
}

TEST_CASE("grad: every primitive matches finite differences") {
  const MlpSpec spec = spec_of(2, {5}, 3, Activation::kRelu, true);
  Rng rng(8);
  const ParameterVector p = init_mlp(spec, rng);
  Eigen::MatrixXd x(6, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = standard_normal(rng);
  Eigen::MatrixXd row(1, 3);
  row << 0.5, -1.0, 2.0;
  auto f = [&](ad::Tape& t, const ad::ParamVar& v) {
    ad::Var y = mlp_forward(spec, v, t.constant(x));
    ad::Var a = ad::add_row(ad::mul_row(y, t.constant(row)), t.constant(row));
    ad::Var b = ad::log(ad::add_scalar(ad::square(a), 1.0));
    ad::Var c = ad::exp(ad::scale(ad::tanh(a), 0.3));
    ad::Var d = ad::mean(ad::row_sum(ad::add(b, ad::mul(c, a))));
    return ad::add(d, ad::sum(ad::sub(ad::relu(y), ad::scale(y, 0.1))));
  };
  const ParameterVector g = ad::grad(f, p);
  const Eigen::VectorXd fd = fd_gradient(
      [&](const ParameterVector& q) { return ad::value_and_grad(f, q).value; }, p, 1e-5);
  CHECK(rel_error(g.values(), fd) <= 1e-5);
}

TEST_CASE("unsupported primitive raises") {
  ad::Tape tape;
  const ad::Var x = tape.constant(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(ad::unary("sigmoid", x), UnsupportedOperation);
  CHECK_NOTHROW(ad::unary("tanh", x));
}

TEST_CASE("backward requires a scalar output") {
  ad::Tape tape;
  const ad::Var x = tape.variable(Eigen::MatrixXd::Ones(2, 2));
  CHECK_THROWS_AS(tape.backward(ad::square(x)), PreconditionError);
}

TEST_CASE("hvp_fd on a quadratic recovers A v") {
  const MlpSpec spec = spec_of(2, {}, 1, Activation::kTanh);  // 3 parameters
  const LayoutPtr layout = make_mlp_layout(spec);
  Eigen::VectorXd diag(3);
  diag << 1.0, 2.0, 3.0;
  const ad::GradFn g = [&](const ParameterVector& p) {
    return p.with_values(diag.cwiseProduct(p.values()));
  };
  Eigen::VectorXd base(3);
  base << 0.3, -0.2, 0.9;
  const ParameterVector p(layout, base);
  const ParameterVector v(layout, Eigen::VectorXd::Ones(3));
  const double eps = 1e-4;
  const ParameterVector hv = ad::hvp_fd(g, p, v, eps);
  CHECK((hv.values() - diag).cwiseAbs().maxCoeff() <= 10 * eps * eps);
  CHECK(ad::hvp_fd(g, p, ParameterVector::zeros(layout), eps).values().isZero(0.0));
  CHECK_THROWS_AS(ad::hvp_fd(g, p, v, 0.0), PreconditionError);
}

TEST_CASE("hvp_fd on an MLP loss matches a dense finite-difference Hessian") {
  const MlpSpec spec = spec_of(2, {4}, 1, Activation::kTanh);
  Rng rng(12);
  const ParameterVector p = init_mlp(spec, rng);
  Eigen::MatrixXd x(8, 2), y(8, 1);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = standard_normal(rng);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = standard_normal(rng);
  const ad::Objective loss = [&](ad::Tape& t, const ad::ParamVar& v) {
    return ad::mean(ad::square(ad::sub(mlp_forward(spec, v, t.constant(x)), t.constant(y))));
  };
  const auto value = [&](const ParameterVector& q) { return ad::value_and_grad(loss, q).value; };
  // dense Hessian from second differences of the loss itself
  const Eigen::Index n = p.size();
  const double h = 1e-4;
  Eigen::MatrixXd hess(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd ei = Eigen::VectorXd::Zero(n);
    ei[i] = h;
    const Eigen::VectorXd gp = fd_gradient(value, p.with_values(p.values() + ei), 1e-5);
    const Eigen::VectorXd gm = fd_gradient(value, p.with_values(p.values() - ei), 1e-5);
    hess.col(i) = (gp - gm) / (2 * h);
  }
  const ParameterVector v = random_params(p.layout(), rng);
  const ad::GradFn g = [&](const ParameterVector& q) { return ad::grad(loss, q); };
  const ParameterVector hv = ad::hvp_fd(g, p, v, ad::default_fd_eps(p));
  CHECK(rel_error(hv.values(), hess * v.values()) <= 1e-3);
}

TEST_CASE("adam minimizes a quadratic") {
  const LayoutPtr layout = make_mlp_layout(spec_of(1, {}, 1, Activation::kTanh));
  ParameterVector p(layout, Eigen::Vector2d(3.0, -2.0));
  AdamConfig cfg;
  cfg.learning_rate = 0.05;
  Adam adam(p.size(), cfg);
  for (int i = 0; i < 2000; ++i) p = adam.step(p, 2.0 * p);
  CHECK(p.norm() < 1e-3);
  CHECK(adam.steps_taken() == 2000);
}
