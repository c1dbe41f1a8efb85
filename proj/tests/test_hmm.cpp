#include "doctest.h"
#include "gaussian_chain.hpp"
#include "nvi/hmm.hpp"

#include <cmath>
#include <numbers>

using namespace nvi;
using namespace nvi::hmm;
using nvi::testing::MeanSe;
using nvi::testing::mean_se;

namespace {

/// Small model with an informative prior so prior draws of η are usable.
HmmSpec small_spec(int K, int M, double stay) {
  HmmSpec spec = HmmSpec::standard(K, M, stay);
  spec.nu0 = 1.0;
  return spec;
}

/// Two-state, three-step model whose states are i.i.d. draws from π.
HmmSpec iid_spec() {
  HmmSpec spec = small_spec(3, 2, 0.5);
  spec.pi << 0.3, 0.7;
  spec.A.row(0) = spec.pi.transpose();
  spec.A.row(1) = spec.pi.transpose();
  return spec;
}

Eta make_eta(std::initializer_list<double> mu, std::initializer_list<double> tau) {
  Eta e;
  e.mu = ad::Vector::Map(std::data(mu), static_cast<Eigen::Index>(mu.size()));
  e.tau = ad::Vector::Map(std::data(tau), static_cast<Eigen::Index>(tau.size()));
  return e;
}

double normal_logpdf(double x, double mu, double tau) {
  return 0.5 * std::log(tau / (2.0 * std::numbers::pi)) - 0.5 * tau * (x - mu) * (x - mu);
}

double normal_gamma_oracle(double mu, double tau, double mu0, double nu, double alpha, double beta) {
  return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(tau) - beta * tau +
         normal_logpdf(mu, mu0, nu * tau);
}

/// Mixture heuristic Π_l Σ_m softmax(θ)_m N(x_l; μ_m, τ_m) with learnable θ.
class LearnableMixtureHeuristic : public PointwiseHeuristic {
 public:
  explicit LearnableMixtureHeuristic(const ad::Vector& weights)
      : theta{"theta", weights.array().log().matrix().transpose(), ad::Matrix::Zero(1, weights.size())} {}

  ad::Var log_point_terms(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                          bool live) const override {
    const ad::Var table = tape.constant(emission_table(x, mu, tau));
    const ad::Var lw = ad::log_softmax(tape.parameter(theta, live));
    return ad::reshape(ad::logsumexp(table + lw), mu.rows(), x.size());
  }

  mutable ad::Parameter theta;
};

/// q(z_k = m) ∝ exp(θ_m) T(z_{k-1}, m) N(x_k; μ_m, τ_m) with T = π at k = 1 and A afterwards.
class TiltedExactProposal : public StateProposal {
 public:
  explicit TiltedExactProposal(const HmmSpec& spec)
      : spec_(spec), theta{"theta", ad::Matrix::Zero(1, spec.M), ad::Matrix::Zero(1, spec.M)} {}

  ad::Var log_probs(ad::Tape& tape, const ad::Vector& x, int k, const std::vector<int>& z_prev, const ad::Matrix& mu,
                    const ad::Matrix& tau, bool live) const override {
    ad::Matrix base(mu.rows(), spec_.M);
    for (Eigen::Index s = 0; s < mu.rows(); ++s) {
      for (int m = 0; m < spec_.M; ++m) {
        const double t = k == 1 ? spec_.pi(m) : spec_.A(z_prev[static_cast<std::size_t>(s)], m);
        base(s, m) = std::log(t) + normal_logpdf(x(k - 1), mu(s, m), tau(s, m));
      }
    }
    return ad::log_softmax(tape.constant(base) + tape.parameter(theta, live));
  }

  mutable ad::Parameter theta;

 private:
  HmmSpec spec_;
};

}  // namespace

TEST_CASE("model settings are validated") {
  HmmSpec spec = HmmSpec::standard(20, 4);
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.A.rowwise().sum().isApprox(ad::Vector::Ones(4)));
  spec.A(0, 0) += 0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = HmmSpec::standard();
  spec.alpha0 = 0.0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  CHECK(parse_heuristic("gmm_handcoded") == HeuristicKind::gmm);
  CHECK(heuristic_name(parse_heuristic("neural")) == "neural");
  CHECK_THROWS_AS(parse_heuristic("twisted"), std::invalid_argument);
}

TEST_CASE("simulation reproduces the generative process") {
  const HmmSpec spec = HmmSpec::standard(20, 4);
  const std::vector<HmmInstance> data = simulate(spec, 11, 2500);
  std::vector<double> tau;
  for (const HmmInstance& inst : data) {
    REQUIRE(inst.x.size() == 20);
    REQUIRE(inst.z.size() == 20);
    for (int m = 0; m < 4; ++m) {
      tau.push_back(inst.eta.tau(m));
    }
  }
  const MeanSe t = mean_se(tau);
  INFO("E[tau] " << t.mean << " +- " << t.se);
  CHECK(std::abs(t.mean - spec.alpha0 / spec.beta0) < 3.0 * t.se);

  // Transition frequencies over the first 500 instances (9500 steps).
  ad::Matrix counts = ad::Matrix::Zero(4, 4);
  for (int i = 0; i < 500; ++i) {
    for (int k = 1; k < 20; ++k) {
      counts(data[i].z[k - 1], data[i].z[k]) += 1.0;
    }
  }
  for (int a = 0; a < 4; ++a) {
    const double n = counts.row(a).sum();
    for (int b = 0; b < 4; ++b) {
      const double p = spec.A(a, b);
      CHECK(std::abs(counts(a, b) / n - p) < 3.0 * std::sqrt(p * (1.0 - p) / n));
    }
  }

  // Prefixes of a larger simulation are reproduced exactly.
  const std::vector<HmmInstance> prefix = simulate(spec, 11, 3);
  CHECK(prefix[2].x == data[2].x);

  HmmSpec frozen = spec;
  frozen.A = ad::Matrix::Identity(4, 4);
  for (const HmmInstance& inst : simulate(frozen, 3, 20)) {
    for (int k = 1; k < 20; ++k) {
      CHECK(inst.z[k] == inst.z[0]);
    }
  }
}

TEST_CASE("joint density with no heuristic matches a direct evaluation") {
  HmmSpec spec = small_spec(3, 2, 0.8);
  spec.pi << 0.25, 0.75;
  const ad::Vector x = (ad::Vector(3) << 0.4, -1.2, 2.0).finished();
  const std::vector<int> z{1, 0, 0};
  const Eta eta = make_eta({0.5, -1.0}, {2.0, 0.7});
  const double direct = normal_gamma_oracle(0.5, 2.0, 0.0, 1.0, 8.0, 8.0) +
                        normal_gamma_oracle(-1.0, 0.7, 0.0, 1.0, 8.0, 8.0) + std::log(0.75) +
                        normal_logpdf(0.4, -1.0, 0.7) + std::log(0.2) + normal_logpdf(-1.2, 0.5, 2.0) +
                        std::log(0.8) + normal_logpdf(2.0, 0.5, 2.0);
  const NoHeuristic none;
  ad::Tape tape;
  CHECK(log_gamma(tape, spec, none, x, z, eta, 3, false).scalar() == doctest::Approx(direct).epsilon(1e-12));
  CHECK(log_prior(spec, eta) + log_joint_given_eta(spec, x, z, eta, 3) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(log_gamma(tape, spec, none, x, z, eta, 0, false).scalar() == doctest::Approx(log_prior(spec, eta)));
  CHECK_THROWS_AS(log_gamma(tape, spec, none, x, z, eta, 4, false), std::out_of_range);
  CHECK_THROWS_AS(log_gamma(tape, spec, none, x, z, eta, -1, false), std::out_of_range);
}

TEST_CASE("hand-coded mixture heuristic at level zero") {
  HmmSpec spec = small_spec(3, 2, 0.8);
  spec.pi << 0.25, 0.75;
  const ad::Vector x = (ad::Vector(3) << 0.4, -1.2, 2.0).finished();
  const Eta eta = make_eta({0.5, -1.0}, {2.0, 0.7});
  double expected = log_prior(spec, eta);
  for (int l = 0; l < 3; ++l) {
    expected += std::log(0.25 * std::exp(normal_logpdf(x(l), 0.5, 2.0)) + 0.75 * std::exp(normal_logpdf(x(l), -1.0, 0.7)));
  }
  const GmmHeuristic gmm(spec.pi);
  ad::Tape tape;
  CHECK(log_gamma(tape, spec, gmm, x, {}, eta, 0, false).scalar() == doctest::Approx(expected).epsilon(1e-12));
  // At level K the heuristic contributes nothing.
  const std::vector<int> z{1, 0, 0};
  const NoHeuristic none;
  CHECK(log_gamma(tape, spec, gmm, x, z, eta, 3, false).scalar() ==
        doctest::Approx(log_gamma(tape, spec, none, x, z, eta, 3, false).scalar()).epsilon(1e-12));
}

TEST_CASE("incremental weights telescope to the joint over the proposal") {
  const HmmSpec spec = small_spec(6, 3, 0.7);
  const HmmInstance inst = simulate(spec, 4, 1).front();
  const PriorEtaProposal eta(spec);
  const PriorStateProposal states(spec);
  const GmmHeuristic gmm(spec.pi);
  const HmmModel model{&spec, &eta, &states, &gmm};
  RunOptions opt;
  opt.S = 5;
  opt.resample = false;
  opt.seed = 2;
  ad::Tape tape;
  const RunResult r = run_instance(model, inst.x, opt, tape);
  REQUIRE(r.log_v.size() == 7);
  for (int s = 0; s < 5; ++s) {
    double sum = 0.0;
    for (const ad::Vector& lv : r.log_v) {
      sum += lv(s);
    }
    // With prior proposals everything but the emissions cancels.
    double emissions = 0.0;
    for (int k = 0; k < 6; ++k) {
      const int m = r.paths[s][k];
      emissions += log_normal_precision(inst.x(k), r.mu(s, m), r.tau(s, m));
    }
    CHECK(sum == doctest::Approx(emissions).epsilon(1e-10));
    CHECK(r.log_w(s) == doctest::Approx(sum).epsilon(1e-12));
  }
}

TEST_CASE("exact conditional proposals at fixed parameters recover the forward algorithm") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const HmmSpec spec = HmmSpec::standard(8, 3, 0.8);
    const HmmInstance inst = simulate(spec, seed, 1).front();
    const FixedEtaProposal eta(inst.eta);
    const ExactStateProposal states(spec);
    const NoHeuristic none;
    const HmmModel model{&spec, &eta, &states, &none};
    RunOptions opt;
    opt.S = 6;
    opt.resample = false;
    opt.seed = seed;
    ad::Tape tape;
    const RunResult r = run_instance(model, inst.x, opt, tape);
    const double oracle = log_marginal_likelihood(spec, inst.x, inst.eta);
    for (int s = 0; s < opt.S; ++s) {
      double sum = 0.0;
      for (std::size_t k = 1; k < r.log_v.size(); ++k) {
        sum += r.log_v[k](s);
      }
      CHECK(std::abs(std::exp(sum - oracle) - 1.0) < 1e-6);
    }
    CHECK(r.ess == doctest::Approx(opt.S));
    CHECK(r.log_Z_hat == doctest::Approx(oracle + log_prior(spec, inst.eta)).epsilon(1e-9));
  }
}

TEST_CASE("backward messages agree with enumeration") {
  const HmmSpec spec = small_spec(3, 2, 0.6);
  const HmmInstance inst = simulate(spec, 9, 1).front();
  const ad::Matrix msg = log_backward_messages(spec, inst.x, inst.eta);
  REQUIRE(msg.rows() == 3);
  CHECK(msg.row(2).cwiseAbs().maxCoeff() == 0.0);
  for (int m = 0; m < 2; ++m) {
    double total = 0.0;
    for (int a = 0; a < 2; ++a) {
      for (int b = 0; b < 2; ++b) {
        total += spec.A(m, a) * std::exp(log_normal_precision(inst.x(1), inst.eta.mu(a), inst.eta.tau(a))) *
                 spec.A(a, b) * std::exp(log_normal_precision(inst.x(2), inst.eta.mu(b), inst.eta.tau(b)));
      }
    }
    CHECK(msg(0, m) == doctest::Approx(std::log(total)).epsilon(1e-12));
  }
  double evidence = 0.0;
  for (int a = 0; a < 2; ++a) {
    evidence += spec.pi(a) * std::exp(log_normal_precision(inst.x(0), inst.eta.mu(a), inst.eta.tau(a)) + msg(0, a));
  }
  CHECK(log_marginal_likelihood(spec, inst.x, inst.eta) == doctest::Approx(std::log(evidence)).epsilon(1e-12));
}

TEST_CASE("optimal heuristic has zero expected partial gradient") {
  // With i.i.d. states the future likelihood depends on η alone and equals
  // the mixture heuristic at θ = log π.
  const HmmSpec spec = iid_spec();
  const HmmInstance inst = simulate(spec, 21, 1).front();
  const PriorEtaProposal eta(spec);
  const PriorStateProposal states(spec);
  const LearnableMixtureHeuristic psi(spec.pi);
  const HmmModel model{&spec, &eta, &states, &psi};
  GradientRequest req;
  req.proposals = false;
  std::vector<double> g0;
  std::vector<double> g1;
  ad::Tape tape;
  for (int r = 0; r < 400; ++r) {
    RunOptions opt;
    opt.S = 2000;
    opt.resample = false;
    opt.seed = 17;
    opt.iteration = static_cast<std::uint64_t>(r);
    psi.theta.grad.setZero();
    run_instance(model, inst.x, opt, tape, &req);
    g0.push_back(psi.theta.grad(0, 0));
    g1.push_back(psi.theta.grad(0, 1));
  }
  const MeanSe a = mean_se(g0);
  const MeanSe b = mean_se(g1);
  INFO("grad theta " << a.mean << " +- " << a.se << ", " << b.mean << " +- " << b.se);
  CHECK(std::abs(a.mean) < 3.0 * a.se);
  CHECK(std::abs(b.mean) < 3.0 * b.se);
  CHECK(a.se > 0.0);

  // A mis-specified heuristic receives a gradient well away from zero.
  psi.theta.value << std::log(0.9), std::log(0.1);
  std::vector<double> off;
  for (int r = 0; r < 100; ++r) {
    RunOptions opt;
    opt.S = 2000;
    opt.resample = false;
    opt.seed = 17;
    opt.iteration = static_cast<std::uint64_t>(r);
    psi.theta.grad.setZero();
    run_instance(model, inst.x, opt, tape, &req);
    off.push_back(psi.theta.grad(0, 0));
  }
  const MeanSe c = mean_se(off);
  INFO("mis-specified grad " << c.mean << " +- " << c.se);
  CHECK(std::abs(c.mean) > 5.0 * c.se);
}

TEST_CASE("exact conditional state proposal has zero expected partial gradient") {
  const HmmSpec spec = small_spec(3, 2, 0.7);
  const HmmInstance inst = simulate(spec, 5, 1).front();
  const FixedEtaProposal eta(inst.eta);
  const TiltedExactProposal states(spec);
  const NoHeuristic none;
  const HmmModel model{&spec, &eta, &states, &none};
  GradientRequest req;
  req.heuristic = false;
  std::vector<double> g;
  ad::Tape tape;
  for (int r = 0; r < 2000; ++r) {
    RunOptions opt;
    opt.S = 16;
    opt.resample = r % 2 == 0;
    opt.seed = 3;
    opt.iteration = static_cast<std::uint64_t>(r);
    states.theta.grad.setZero();
    run_instance(model, inst.x, opt, tape, &req);
    g.push_back(states.theta.grad(0, 0));
  }
  const MeanSe m = mean_se(g);
  INFO("grad theta " << m.mean << " +- " << m.se);
  CHECK(std::abs(m.mean) < 3.0 * m.se);
  CHECK(m.se > 0.0);

  // Tilting away from the exact conditional produces a restoring gradient:
  // descent lowers θ_0 again.
  states.theta.value << 1.0, 0.0;
  std::vector<double> tilted;
  for (int r = 0; r < 500; ++r) {
    RunOptions opt;
    opt.S = 16;
    opt.resample = false;
    opt.seed = 3;
    opt.iteration = static_cast<std::uint64_t>(r);
    states.theta.grad.setZero();
    run_instance(model, inst.x, opt, tape, &req);
    tilted.push_back(states.theta.grad(0, 0));
  }
  const MeanSe t = mean_se(tilted);
  INFO("tilted grad " << t.mean << " +- " << t.se);
  CHECK(t.mean > 5.0 * t.se);
}

TEST_CASE("one gradient step lowers the forward KL estimate on average") {
  const HmmSpec spec = small_spec(8, 3, 0.8);
  const std::vector<HmmInstance> data = simulate(spec, 31, 4);
  std::vector<const HmmInstance*> batch;
  for (const HmmInstance& inst : data) {
    batch.push_back(&inst);
  }
  const auto total_kl = [&](const HmmExperiment& ex, std::uint64_t seed) {
    double kl = 0.0;
    ad::Tape tape;
    for (std::size_t i = 0; i < data.size(); ++i) {
      RunOptions opt;
      opt.S = 256;
      opt.resample = false;
      opt.seed = seed;
      opt.instance = i;
      for (double v : run_instance(ex.model(), data[i].x, opt, tape).level_kl) {
        kl += v;
      }
    }
    return kl;
  };
  std::vector<double> before;
  std::vector<double> after;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    HmmConfig cfg;
    cfg.heuristic = HeuristicKind::neural;
    cfg.S = 64;
    cfg.hidden = 16;
    cfg.lr = 1e-2;
    cfg.seed = seed;
    HmmExperiment ex(spec, cfg);
    before.push_back(total_kl(ex, 1000 + seed));
    ex.partial_grad_step(batch, 0);
    after.push_back(total_kl(ex, 1000 + seed));
  }
  double mean_change = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    mean_change += (after[i] - before[i]) / static_cast<double>(before.size());
  }
  INFO("mean change in the KL estimate " << mean_change);
  CHECK(mean_change < 0.0);
  CHECK(paired_t_test_greater(before, after) < 0.01);
}

TEST_CASE("full optimization is gated behind the experimental flag") {
  const HmmSpec spec = small_spec(5, 2, 0.8);
  const std::vector<HmmInstance> data = simulate(spec, 2, 2);
  const std::vector<const HmmInstance*> batch{&data[0], &data[1]};
  HmmConfig cfg;
  cfg.hidden = 8;
  cfg.S = 8;
  cfg.mode = GradientMode::full;
  HmmExperiment gated(spec, cfg);
  CHECK_THROWS_AS(gated.partial_grad_step(batch, 0), std::logic_error);
  GradientRequest req;
  req.mode = GradientMode::full;
  ad::Tape tape;
  CHECK_THROWS_AS(run_instance(gated.model(), data[0].x, {}, tape, &req), std::logic_error);
  cfg.experimental = true;
  HmmExperiment open(spec, cfg);
  const HmmStepDiagnostics d = open.partial_grad_step(batch, 0);
  CHECK(d.finite);
}

TEST_CASE("proposal outputs are valid distributions for any input") {
  const HmmSpec spec = HmmSpec::standard(10, 4);
  ParameterStore store;
  const NeuralEtaProposal eta(store, 4, 16, 3);
  const NeuralStateProposal states(store, 16, 3);
  for (double scale : {1e-3, 1.0, 1e3}) {
    ad::Vector x = simulate(spec, 8, 1).front().x * scale;
    ad::Tape tape;
    const NormalGammaParams p = eta.parameters(tape, x, false);
    CHECK((p.alpha.value().array() > 0.0).all());
    CHECK((p.beta.value().array() > 0.0).all());
    CHECK((p.nu.value().array() > 0.0).all());
    CHECK(p.mu.value().allFinite());
    rng::Stream s = rng::stream(1, rng::Purpose::misc);
    const EtaDraw d = eta.draw(tape, x, 7, s, false);
    CHECK((d.tau.array() > 0.0).all());
    CHECK(d.log_q.value().allFinite());
    const ad::Var first = states.log_probs(tape, x, 1, {}, d.mu, d.tau, false);
    const ad::Var next = states.log_probs(tape, x, 2, {0, 1, 2, 3, 0, 1, 2}, d.mu, d.tau, false);
    for (Eigen::Index r = 0; r < 7; ++r) {
      CHECK(first.value().row(r).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(next.value().row(r).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("NormalGamma sampling matches its moments and density") {
  ad::Tape tape;
  NormalGammaParams p{tape.constant(ad::Matrix::Constant(1, 2, 4.0)), tape.constant(ad::Matrix::Constant(1, 2, 2.0)),
                      tape.constant((ad::Matrix(1, 2) << -1.0, 3.0).finished()),
                      tape.constant(ad::Matrix::Constant(1, 2, 0.5))};
  rng::Stream s = rng::stream(4, rng::Purpose::misc);
  ad::Matrix mu;
  ad::Matrix tau;
  const int n = 20000;
  sample_normal_gamma(p, n, s, mu, tau);
  const double tau_mean = tau.col(0).mean();
  CHECK(std::abs(tau_mean - 2.0) < 3.0 * std::sqrt(4.0 / 4.0 / n));
  CHECK(std::abs(mu.col(1).mean() - 3.0) < 0.05);
  const ad::Var lp = normal_gamma_log_density(p, mu.topRows(3), tau.topRows(3));
  for (Eigen::Index r = 0; r < 3; ++r) {
    const double expected = normal_gamma_oracle(mu(r, 0), tau(r, 0), -1.0, 0.5, 4.0, 2.0) +
                            normal_gamma_oracle(mu(r, 1), tau(r, 1), 3.0, 0.5, 4.0, 2.0);
    CHECK(lp.value()(r, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(normal_gamma_log_density(mu(r, 0), tau(r, 0), -1.0, 0.5, 4.0, 2.0) ==
          doctest::Approx(normal_gamma_oracle(mu(r, 0), tau(r, 0), -1.0, 0.5, 4.0, 2.0)));
  }
}

TEST_CASE("normalizer estimates agree across heuristic variants") {
  const HmmSpec spec = small_spec(5, 2, 0.8);
  const PriorEtaProposal eta(spec);
  const PriorStateProposal states(spec);
  ParameterStore store;
  const NoHeuristic none;
  const GmmHeuristic gmm(spec.pi);
  const NeuralHeuristic neural(store, 8, 5);
  const Heuristic* variants[] = {&none, &gmm, &neural};
  ad::Tape tape;
  for (const HmmInstance& inst : simulate(spec, 6, 3)) {
    std::vector<MeanSe> est;
    for (const Heuristic* h : variants) {
      std::vector<double> z;
      for (int r = 0; r < 20; ++r) {
        RunOptions opt;
        opt.S = 4000;
        opt.seed = 8;
        opt.iteration = static_cast<std::uint64_t>(r);
        z.push_back(run_instance({&spec, &eta, &states, h}, inst.x, opt, tape).log_Z_hat);
      }
      est.push_back(mean_se(z));
    }
    for (std::size_t i = 1; i < est.size(); ++i) {
      INFO("variant " << i << ": " << est[i].mean << " +- " << est[i].se << " vs " << est[0].mean << " +- "
                      << est[0].se);
      const double joint = std::sqrt(est[i].se * est[i].se + est[0].se * est[0].se);
      CHECK(std::abs(est[i].mean - est[0].mean) < 3.0 * joint + 0.01);
    }
  }
}

TEST_CASE("evaluation rows report ESS within [1, S]") {
  const HmmSpec spec = HmmSpec::standard(10, 3);
  HmmConfig cfg;
  cfg.hidden = 8;
  HmmExperiment ex(spec, cfg);
  const std::vector<HmmInstance> data = simulate(spec, 3, 6);
  for (bool resample : {false, true}) {
    const std::vector<HmmEvalRow> rows = ex.evaluate(data, 50, 4, resample);
    REQUIRE(rows.size() == data.size());
    for (const HmmEvalRow& row : rows) {
      CHECK(row.ess >= 1.0 - 1e-12);
      CHECK(row.ess <= 50.0 + 1e-9);
      CHECK(std::isfinite(row.log_Z_hat));
    }
  }
  CHECK(ex.evaluate(data, 50, 4).size() == 6);
}

TEST_CASE("paired one-sided t-test") {
  const std::vector<double> a{2.0, 4.0, 6.0, 8.0, 10.0};
  const std::vector<double> b{1.0, 2.0, 3.0, 4.0, 5.0};
  // Differences 1..5: t = 3 / (sqrt(2.5) / sqrt(5)) with 4 degrees of freedom.
  CHECK(paired_t_test_greater(a, b) == doctest::Approx(0.006624).epsilon(1e-3));
  CHECK(paired_t_test_greater(b, a) == doctest::Approx(1.0 - 0.006624).epsilon(1e-3));
  CHECK_THROWS_AS(paired_t_test_greater(a, {1.0}), std::invalid_argument);
}
