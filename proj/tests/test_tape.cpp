#include "doctest.h"
#include "fd_check.hpp"
#include "nvi/tape.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace nvi::ad;
using nvi::testing::finite_difference_check;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = u(rng);
  }
  return m;
}

// Weighted sum with fixed pseudo-random coefficients, so every output entry
// contributes a distinct amount to the scalar root.
Var mix(Tape& t, Var x) {
  Matrix w(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    w.data()[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * static_cast<double>(i % 3);
  }
  return sum(x * t.constant(w));
}

void check_unary(const char* label, const std::function<Var(Var)>& op, double lo, double hi) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter p{"x", random_matrix(rng, 3, 4, lo, hi), {}};
    auto res = finite_difference_check({&p}, [&](Tape& t) { return mix(t, op(t.parameter(p))); });
    INFO(label << " trial " << trial << " rel " << res.max_rel_err);
    CHECK(res.failures == 0);
  }
}

}  // namespace

TEST_CASE("forward values of fused ops") {
  Tape t;
  const Var x = t.constant(0.0);
  CHECK(gaussian_logpdf(x, t.constant(0.0), t.constant(1.0)).scalar() ==
        doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-14));
  CHECK(gaussian_logpdf(x, t.constant(0.0), t.constant(1.0)).scalar() == doctest::Approx(-0.91894).epsilon(1e-5));
  CHECK(softplus(x).scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double a = 3.7;
  Matrix pair(1, 2);
  pair << a, a;
  CHECK(logsumexp(t.constant(pair)).scalar() == doctest::Approx(a + std::log(2.0)).epsilon(1e-15));
  Matrix huge(1, 2);
  huge << 1000.0, 1000.0;
  CHECK(logsumexp(t.constant(huge)).scalar() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(800.0) == doctest::Approx(800.0));
  CHECK(softplus(-800.0) >= 0.0);
}

TEST_CASE("product rule and identity composition") {
  Tape t;
  Var x = t.variable(Matrix::Constant(1, 1, 2.0));
  Var y = t.variable(Matrix::Constant(1, 1, 3.0));
  t.backward(x * y);
  CHECK(x.grad()(0, 0) == 3.0);
  CHECK(y.grad()(0, 0) == 2.0);

  for (double v : {-3.0, -0.2, 0.0, 1.3, 9.0}) {
    Tape u;
    Var z = u.variable(Matrix::Constant(1, 1, v));
    u.backward(log(exp(z)));
    CHECK(z.grad()(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("detach severs exactly one path") {
  Tape t;
  Var x = t.variable(Matrix::Constant(1, 1, 2.0));
  t.backward(t.detach(x) * x);
  CHECK(x.grad()(0, 0) == 2.0);

  // w * log q with w detached: gradient is w times the score.
  Parameter mu{"mu", Matrix::Constant(1, 1, 0.4), {}};
  Tape u;
  Var m = u.parameter(mu);
  Var lq = gaussian_logpdf(u.constant(1.5), m, u.constant(1.0));
  Var w = u.detach(exp(lq));
  u.backward(w * lq);
  const double wv = std::exp(-0.5 * 1.1 * 1.1 - 0.5 * std::log(2 * std::numbers::pi));
  CHECK(mu.grad(0, 0) == doctest::Approx(wv * 1.1).epsilon(1e-12));
}

TEST_CASE("detach is absorbing") {
  Parameter p{"p", Matrix::Constant(2, 2, 0.7), {}};
  Tape t;
  Var a = tanh(t.parameter(p));
  Var b = t.detach(a * 3.0);
  t.backward(sum(exp(b) * b));
  CHECK(p.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward is additive over repeated calls") {
  Parameter p{"p", Matrix::Constant(1, 3, 0.5), {}};
  p.grad = Matrix::Zero(1, 3);
  Tape t;
  Var root = sum(softplus(t.parameter(p)) * 2.0);
  t.backward(root);
  const Matrix once = p.grad;
  t.backward(root);
  CHECK((p.grad - 2.0 * once).cwiseAbs().maxCoeff() == 0.0);

  Tape u;
  Var x = u.variable(Matrix::Constant(1, 1, 1.5));
  Var r = x * x;
  u.backward(r);
  u.backward(r);
  CHECK(x.grad()(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("non-scalar root and shape mismatches are rejected") {
  Tape t;
  Var x = t.variable(Matrix::Zero(2, 3));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
  Var y = t.variable(Matrix::Zero(3, 2));
  try {
    (void)(x + y);
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
  CHECK_THROWS_AS(matvec(x, x), std::invalid_argument);
  CHECK_THROWS_AS(concat({x, y}), std::invalid_argument);
}

TEST_CASE("nodes without requires_grad never accumulate") {
  Tape t;
  Var c = t.constant(Matrix::Constant(1, 1, 2.0));
  Var x = t.variable(Matrix::Constant(1, 1, 3.0));
  t.backward(c * x);
  CHECK_FALSE(c.requires_grad());
  CHECK(t.node(c.id()).grad.size() == 0);
  Parameter frozen{"f", Matrix::Constant(1, 1, 1.0), Matrix::Zero(1, 1)};
  Tape u;
  u.backward(sum(u.parameter(frozen, false) * u.variable(Matrix::Constant(1, 1, 2.0))));
  CHECK(frozen.grad(0, 0) == 0.0);
}

TEST_CASE("grad shape equals value shape") {
  Parameter p{"p", Matrix::Constant(3, 2, 0.1), {}};
  Tape t;
  Var a = t.parameter(p);
  Var b = tanh(a) * t.constant(Matrix::Constant(1, 2, 2.0));
  Var c = row_sum(b);
  t.backward(sum(c));
  for (int id = 0; id < static_cast<int>(t.size()); ++id) {
    const auto& n = t.node(id);
    if (n.requires_grad) {
      CHECK(n.grad.rows() == n.value.rows());
      CHECK(n.grad.cols() == n.value.cols());
    }
  }
}

TEST_CASE("finite differences: elementwise ops") {
  check_unary("tanh", [](Var x) { return tanh(x); }, -2, 2);
  check_unary("exp", [](Var x) { return exp(x); }, -2, 2);
  check_unary("log", [](Var x) { return log(x); }, 0.2, 3);
  check_unary("softplus", [](Var x) { return softplus(x); }, -3, 3);
  check_unary("lgamma", [](Var x) { return lgamma(x); }, 0.3, 6);
  check_unary("softmax", [](Var x) { return softmax(x); }, -2, 2);
  check_unary("log_softmax", [](Var x) { return log_softmax(x); }, -2, 2);
  check_unary("cumsum", [](Var x) { return cumsum(x); }, -2, 2);
  check_unary("transpose", [](Var x) { return transpose(x); }, -2, 2);
  check_unary("scale+shift", [](Var x) { return 2.5 - x * 0.3 + 1.0; }, -2, 2);
  check_unary("columns", [](Var x) { return columns(x, 1, 2); }, -2, 2);
  check_unary("reshape", [](Var x) { return reshape(x, 2, 6); }, -2, 2);
  check_unary("row_sum", [](Var x) { return row_sum(x * x); }, -2, 2);
  check_unary("pick", [](Var x) { return pick(x, {3, 0, 2}); }, -2, 2);
  check_unary("gather", [](Var x) { return gather(x, {2, 2, 0, 1, 2}); }, -2, 2);
}

TEST_CASE("finite differences: binary ops with broadcasting") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter a{"a", random_matrix(rng, 3, 2), {}};
    Parameter row{"row", random_matrix(rng, 1, 2, 0.5, 2.0), {}};
    Parameter col{"col", random_matrix(rng, 3, 1, 0.5, 2.0), {}};
    Parameter s{"s", random_matrix(rng, 1, 1, 0.5, 2.0), {}};
    auto res = finite_difference_check({&a, &row, &col, &s}, [&](Tape& t) {
      Var A = t.parameter(a);
      Var R = t.parameter(row);
      Var C = t.parameter(col);
      Var S = t.parameter(s);
      Var y = (A + R) * C - A / R + C / S + (S - A) / C;
      return mix(t, y);
    });
    CHECK(res.failures == 0);
  }
}

TEST_CASE("finite differences: logsumexp and gaussian_logpdf") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter x{"x", random_matrix(rng, 4, 3), {}};
    Parameter mu{"mu", random_matrix(rng, 4, 3), {}};
    Parameter sd{"sd", random_matrix(rng, 1, 3, 0.4, 2.0), {}};
    auto res = finite_difference_check({&x, &mu, &sd}, [&](Tape& t) {
      Var X = t.parameter(x);
      Var lp = gaussian_logpdf(X, t.parameter(mu), t.parameter(sd));
      return mix(t, lp) + mix(t, logsumexp(X * 3.0));
    });
    CHECK(res.failures == 0);
  }
}

TEST_CASE("finite differences: 50-unit MLP") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Parameter W1{"W1", random_matrix(rng, 2, 50, -0.7, 0.7), {}};
    Parameter b1{"b1", random_matrix(rng, 1, 50, -0.5, 0.5), {}};
    Parameter W2{"W2", random_matrix(rng, 50, 2, -0.2, 0.2), {}};
    Parameter b2{"b2", random_matrix(rng, 1, 2, -0.5, 0.5), {}};
    Parameter W3{"W3", random_matrix(rng, 50, 2, -0.2, 0.2), {}};
    const Matrix z = random_matrix(rng, 5, 2, -2, 2);
    auto res = finite_difference_check({&W1, &b1, &W2, &b2, &W3}, [&](Tape& t) {
      Var Z = t.constant(z);
      Var h = tanh(matvec(Z, t.parameter(W1)) + t.parameter(b1));
      Var mean = matvec(h, t.parameter(W2)) + t.parameter(b2);
      Var sd = softplus(matvec(h, t.parameter(W3)));
      Var lp = gaussian_logpdf(Z * 0.5, mean, sd);
      return sum(concat({lp, logsumexp(mean)}));
    });
    INFO("trial " << trial << " rel " << res.max_rel_err);
    CHECK(res.failures == 0);
  }
}

TEST_CASE("weighted_sum and tape reuse") {
  Tape t;
  for (int round = 0; round < 3; ++round) {
    t.clear();
    Var x = t.variable(Matrix::Constant(3, 1, 2.0));
    Vector w(3);
    w << 0.2, 0.3, 0.5;
    Var s = weighted_sum(x * x, w);
    CHECK(s.scalar() == doctest::Approx(4.0));
    t.backward(s);
    CHECK(x.grad()(2, 0) == doctest::Approx(2.0));
  }
}
