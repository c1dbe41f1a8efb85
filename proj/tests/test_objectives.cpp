#include "doctest.h"
#include "gaussian_chain.hpp"
#include "nvi/objectives.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace nvi;
using nvi::testing::Chain;
using nvi::testing::ChainParams;
using nvi::testing::chain_kl;
using nvi::testing::chain_kl_derivative;
using nvi::testing::MeanSe;
using nvi::testing::replicate_gradient;

namespace {

constexpr int kS = 2000;
constexpr int kReplicates = 50;

struct Field {
  const char* parameter;
  double ChainParams::*field;
};

const Field kForwardB{"q2.b_mu", &ChainParams::b};
const Field kForwardSd{"q2.b_sigma", &ChainParams::bs};
const Field kReverseC{"r1.b_mu", &ChainParams::c};
const Field kReverseSd{"r1.b_sigma", &ChainParams::cs};
const Field kTargetPrev{"target1.mean", &ChainParams::m1};
const Field kTarget{"target2.mean", &ChainParams::m2};

using Op = std::function<GradientEstimate(const LevelInputs&, ParameterStore&)>;

void check_against_oracle(const Op& op, const std::vector<Field>& fields, bool reverse_kl, std::uint64_t seed) {
  const ChainParams p;
  Chain chain(p);
  for (const Field& f : fields) {
    const double oracle = chain_kl_derivative(p, f.field, reverse_kl);
    const MeanSe est = replicate_gradient(chain, kS, kReplicates, seed, [&](const LevelInputs& in) {
      const GradientEstimate g = op(in, chain.store);
      const ad::Matrix m = g.get(f.parameter);
      REQUIRE(m.size() == 1);
      return m(0, 0);
    });
    INFO(f.parameter << ": estimate " << est.mean << " +- " << est.se << ", oracle " << oracle);
    CHECK(std::abs(est.mean - oracle) < 3.0 * est.se);
  }
}

}  // namespace

TEST_CASE("closed-form chain KL agrees with direct Monte Carlo") {
  const ChainParams p;
  const double sigma = ad::softplus(p.bs);
  const double rho = ad::softplus(p.cs);
  const auto log_n = [](double x, double m, double sd) {
    return -0.5 * std::pow((x - m) / sd, 2) - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
  };
  rng::Stream s = rng::stream(3, rng::Purpose::misc);
  std::normal_distribution<double> n(0.0, 1.0);
  for (bool reverse : {true, false}) {
    std::vector<double> xs;
    for (int i = 0; i < 200000; ++i) {
      double z = 0.0;
      double zn = 0.0;
      if (reverse) {
        z = p.m1 + p.s1 * n(s);
        zn = z + p.b + sigma * n(s);
      } else {
        zn = p.m2 + p.s2 * n(s);
        z = zn + p.c + rho * n(s);
      }
      const double log_hat = log_n(z, p.m1, p.s1) + log_n(zn, z + p.b, sigma);
      const double log_chk = log_n(zn, p.m2, p.s2) + log_n(z, zn + p.c, rho);
      xs.push_back(reverse ? log_hat - log_chk : log_chk - log_hat);
    }
    const MeanSe est = nvi::testing::mean_se(xs);
    CHECK(std::abs(est.mean - chain_kl(p, reverse)) < 3.0 * est.se);
  }
}

TEST_CASE("reverse KL gradient w.r.t. the forward side matches the analytic oracle") {
  for (bool stl : {true, false}) {
    EstimatorOptions opt;
    opt.stl = stl;
    check_against_oracle([&](const LevelInputs& in, ParameterStore& s) { return grad_rev_kl_wrt_forward(in, s, opt); },
                         {kForwardB, kForwardSd, kTargetPrev}, true, stl ? 1 : 2);
  }
}

TEST_CASE("reverse KL gradient w.r.t. the reverse side matches the analytic oracle") {
  check_against_oracle([](const LevelInputs& in, ParameterStore& s) { return grad_rev_kl_wrt_reverse(in, s); },
                       {kReverseC, kReverseSd, kTarget}, true, 3);
}

TEST_CASE("forward KL gradient w.r.t. the forward side matches the analytic oracle") {
  check_against_oracle([](const LevelInputs& in, ParameterStore& s) { return grad_fwd_kl_wrt_forward(in, s); },
                       {kForwardB, kForwardSd, kTargetPrev}, false, 4);
}

TEST_CASE("forward KL gradient w.r.t. the reverse side is gated and matches the oracle") {
  const ChainParams p;
  Chain chain(p);
  CHECK_THROWS_AS(grad_fwd_kl_wrt_reverse(chain.inputs(10, 0, 0), chain.store), std::logic_error);
  EstimatorOptions opt;
  opt.experimental = true;
  check_against_oracle([&](const LevelInputs& in, ParameterStore& s) { return grad_fwd_kl_wrt_reverse(in, s, opt); },
                       {kReverseC, kReverseSd, kTarget}, false, 5);
}

TEST_CASE("a constant baseline leaves the score terms unbiased") {
  EstimatorOptions opt;
  opt.use_baseline = true;
  opt.baseline = 1.7;
  opt.experimental = true;
  check_against_oracle([&](const LevelInputs& in, ParameterStore& s) { return grad_rev_kl_wrt_forward(in, s, opt); },
                       {kTargetPrev}, true, 6);
  check_against_oracle([&](const LevelInputs& in, ParameterStore& s) { return grad_fwd_kl_wrt_reverse(in, s, opt); },
                       {kReverseC, kTarget}, false, 7);
}

TEST_CASE("general f-divergence gradients match the analytic oracles") {
  const LevelTargets all{true, true, true, true};
  const std::vector<Field> fields{kForwardB, kForwardSd, kReverseC, kReverseSd, kTargetPrev, kTarget};
  check_against_oracle(
      [&](const LevelInputs& in, ParameterStore& s) { return grad_f_divergence(in, FDivergence::reverse_kl, s, all); },
      fields, true, 8);
  check_against_oracle(
      [&](const LevelInputs& in, ParameterStore& s) { return grad_f_divergence(in, FDivergence::forward_kl, s, all); },
      fields, false, 9);
}

TEST_CASE("general f-divergence reduces to the specialised estimators") {
  const ChainParams p;
  Chain chain(p);
  const LevelInputs in = chain.inputs(500, 21, 0);
  const LevelTargets all{true, true, true, true};
  const std::vector<std::string> names{"q2.b_mu", "q2.b_sigma", "r1.b_mu", "r1.b_sigma", "target1.mean",
                                       "target2.mean", "q2.W_mu", "r1.W_sigma"};

  EstimatorOptions rev;
  rev.stl = false;
  const GradientEstimate f_rev = grad_f_divergence(in, FDivergence::reverse_kl, chain.store, all);
  const GradientEstimate a = grad_rev_kl_wrt_forward(in, chain.store, rev);
  const GradientEstimate b = grad_rev_kl_wrt_reverse(in, chain.store, rev);

  // The forward-KL score term of the reverse kernel uses the baseline log R - 1.
  EstimatorOptions fwd;
  fwd.experimental = true;
  fwd.use_baseline = true;
  ad::Tape tape;
  LevelGraph g(tape, *in.seq, in.transition, in.z_prev, in.noise, in.level, LiveSet{});
  const ad::Vector lv = g.log_v();
  const double log_R = ad::log_sum_exp(lv) - std::log(static_cast<double>(lv.size()));
  fwd.baseline = log_R - 1.0;
  const GradientEstimate f_fwd = grad_f_divergence(in, FDivergence::forward_kl, chain.store, all);
  const GradientEstimate c = grad_fwd_kl_wrt_forward(in, chain.store);
  const GradientEstimate d = grad_fwd_kl_wrt_reverse(in, chain.store, fwd);

  for (const std::string& n : names) {
    const bool forward_side = n.rfind("q2", 0) == 0 || n == "target1.mean";
    const ad::Matrix special_rev = forward_side ? a.get(n) : b.get(n);
    const ad::Matrix special_fwd = forward_side ? c.get(n) : d.get(n);
    INFO(n);
    REQUIRE(special_rev.size() == f_rev.get(n).size());
    REQUIRE(special_fwd.size() == f_fwd.get(n).size());
    CHECK((special_rev - f_rev.get(n)).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + special_rev.cwiseAbs().maxCoeff()));
    CHECK((special_fwd - f_fwd.get(n)).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + special_fwd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("proposal weighting equals incoming weighting for uniform incoming weights") {
  const ChainParams p;
  Chain chain(p);
  const LevelInputs in = chain.inputs(300, 31, 0);
  EstimatorOptions nested;
  EstimatorOptions avo;
  avo.weighting = Weighting::proposal;
  const GradientEstimate x = grad_rev_kl_wrt_forward(in, chain.store, nested);
  const GradientEstimate y = grad_rev_kl_wrt_forward(in, chain.store, avo);
  for (const auto& [name, m] : x.grads) {
    CHECK((m - y.get(name)).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + m.cwiseAbs().maxCoeff()));
  }
  // With non-uniform incoming weights the two differ.
  LevelInputs skewed = in;
  for (Eigen::Index s = 0; s < skewed.log_w_prev.size(); ++s) {
    skewed.log_w_prev(s) = 0.5 * skewed.z_prev(s, 0);
  }
  const GradientEstimate u = grad_rev_kl_wrt_forward(skewed, chain.store, nested);
  const GradientEstimate v = grad_rev_kl_wrt_forward(skewed, chain.store, avo);
  CHECK(std::abs(u.get("q2.b_mu")(0, 0) - v.get("q2.b_mu")(0, 0)) > 1e-6);
}

TEST_CASE("level loss estimates recover the analytic divergences") {
  const ChainParams p;
  Chain chain(p);
  for (bool reverse : {true, false}) {
    std::vector<double> xs;
    for (int r = 0; r < kReplicates; ++r) {
      const LevelInputs in = chain.inputs(kS, 41, static_cast<std::uint64_t>(r));
      ad::Tape tape;
      LevelGraph g(tape, *in.seq, in.transition, in.z_prev, in.noise, in.level, LiveSet{});
      xs.push_back(level_loss_estimate(in.log_w_prev, g.log_v(),
                                       reverse ? Divergence::reverse_kl : Divergence::forward_kl, Weighting::incoming));
    }
    const MeanSe est = nvi::testing::mean_se(xs);
    INFO("reverse " << reverse << " estimate " << est.mean << " +- " << est.se);
    CHECK(std::abs(est.mean - chain_kl(p, reverse)) < 3.0 * est.se + 1e-3);
  }
}

TEST_CASE("incremental weights average to the normalizer ratio") {
  const ChainParams p;
  Chain chain(p);
  std::vector<double> xs;
  for (int r = 0; r < kReplicates; ++r) {
    const LevelInputs in = chain.inputs(kS, 51, static_cast<std::uint64_t>(r));
    ad::Tape tape;
    LevelGraph g(tape, *in.seq, in.transition, in.z_prev, in.noise, in.level, LiveSet{});
    xs.push_back(g.log_v().array().exp().mean());
  }
  const MeanSe est = nvi::testing::mean_se(xs);
  CHECK(std::abs(est.mean - std::exp(p.log_Z2 - p.log_Z1)) < 3.0 * est.se);
}

TEST_CASE("gradient operations reject empty selections and leave store grads untouched") {
  const ChainParams p;
  Chain chain(p);
  const LevelInputs in = chain.inputs(20, 0, 0);
  for (ad::Parameter* prm : chain.store.all()) {
    prm->grad = ad::Matrix::Constant(prm->value.rows(), prm->value.cols(), 7.0);
  }
  (void)grad_rev_kl_wrt_forward(in, chain.store);
  for (ad::Parameter* prm : chain.store.all()) {
    CHECK(prm->grad.cwiseAbs().minCoeff() == 7.0);
  }
  CHECK_THROWS_AS(grad_f_divergence(in, FDivergence::reverse_kl, chain.store, LevelTargets{}), std::invalid_argument);
  CHECK(parse_f_divergence("forward_kl") == FDivergence::forward_kl);
  CHECK_THROWS_AS(parse_f_divergence("chi2"), std::invalid_argument);
}

TEST_CASE("snis expectation and baseline state") {
  ad::Vector lw(3);
  lw << 0.0, std::log(2.0), std::log(3.0);
  ad::Vector lv(3);
  lv << std::log(3.0), 0.0, 0.0;
  ad::Vector g(3);
  g << 1.0, 2.0, 3.0;
  CHECK(snis_expectation(lw, lv, g, ExpectationKind::proposal) == doctest::Approx((1 + 4 + 9) / 6.0));
  CHECK(snis_expectation(lw, lv, g, ExpectationKind::target) == doctest::Approx((3 + 4 + 9) / 8.0));

  BaselineState b(0.9);
  CHECK_FALSE(b.initialized(2));
  b.update(2, 4.0);
  CHECK(b.value(2) == 4.0);
  b.update(2, 2.0);
  CHECK(b.value(2) == doctest::Approx(0.9 * 4.0 + 0.1 * 2.0));
  b.update(2, std::nan(""));
  CHECK(b.value(2) == doctest::Approx(3.8));
}

TEST_CASE("adam step matches a hand computation") {
  ad::Parameter x{"x", ad::Matrix::Constant(1, 1, 1.0), ad::Matrix::Constant(1, 1, 2.0)};
  AdamOptions opt;
  AdamState state;
  adam_step({&x}, opt, state);
  CHECK(x.value(0, 0) == doctest::Approx(1.0 - 1e-3).epsilon(1e-9));
  x.grad(0, 0) = -1.0;
  adam_step({&x}, opt, state);
  const double m = 0.9 * 0.2 + 0.1 * -1.0;
  const double v = 0.999 * 0.004 + 0.001 * 1.0;
  const double step = 1e-3 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(x.value(0, 0) == doctest::Approx(1.0 - 1e-3 - step).epsilon(1e-9));
  ad::Parameter y{"y", ad::Matrix::Zero(2, 2), ad::Matrix::Zero(2, 2)};
  CHECK_THROWS_AS(adam_step({&y}, opt, state), std::invalid_argument);
}
