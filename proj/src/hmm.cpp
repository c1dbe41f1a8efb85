#include "nvi/hmm.hpp"

#include "nvi/sampler.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nvi::hmm {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using ad::Vector;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

int draw_categorical(const double* probs, int M, rng::Stream& s) {
  const double u = rng::uniform01(s);
  double acc = 0.0;
  for (int m = 0; m < M; ++m) {
    acc += probs[m];
    if (u < acc) {
      return m;
    }
  }
  // Rounding can leave the cumulative sum just below one.
  for (int m = M - 1; m >= 0; --m) {
    if (probs[m] > 0.0) {
      return m;
    }
  }
  return M - 1;
}

Matrix gaussian_init(rng::Stream& s, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = n(s);
  }
  return m;
}

Eta eta_row(const Matrix& mu, const Matrix& tau, Eigen::Index s) {
  return {mu.row(s).transpose(), tau.row(s).transpose()};
}

double lse(const Vector& v) { return ad::log_sum_exp(v); }

// Precision expressed in standardized units, fed to networks on a log scale.
double log_tau_input(double tau, const InputScaling& sc) { return std::log(tau) + 2.0 * std::log(sc.scale); }

void check_particles(const Matrix& mu, const Matrix& tau, const char* where) {
  if (mu.rows() != tau.rows() || mu.cols() != tau.cols()) {
    throw std::invalid_argument(std::string(where) + ": mu and tau shapes differ");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

HmmSpec HmmSpec::standard(int K, int M, double stay) {
  HmmSpec s;
  s.K = K;
  s.M = M;
  s.pi = Vector::Constant(M, 1.0 / M);
  const double off = M > 1 ? (1.0 - stay) / (M - 1) : 0.0;
  s.A = Matrix::Constant(M, M, off);
  s.A.diagonal().setConstant(M > 1 ? stay : 1.0);
  return s;
}

void HmmSpec::validate() const {
  if (M < 1 || K < 1) {
    throw std::invalid_argument("HmmSpec: M and K must be positive");
  }
  if (!(alpha0 > 0.0) || !(beta0 > 0.0) || !(nu0 > 0.0)) {
    throw std::invalid_argument("HmmSpec: alpha0, beta0 and nu0 must be positive");
  }
  if (pi.size() != M || A.rows() != M || A.cols() != M) {
    throw std::invalid_argument("HmmSpec: pi must have M entries and A must be M x M");
  }
  if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("HmmSpec: pi must be a probability vector");
  }
  for (int i = 0; i < M; ++i) {
    if ((A.row(i).array() < 0.0).any() || std::abs(A.row(i).sum() - 1.0) > 1e-9) {
      throw std::invalid_argument("HmmSpec: row " + std::to_string(i) + " of A does not sum to 1");
    }
  }
}

std::vector<HmmInstance> simulate(const HmmSpec& spec, std::uint64_t seed, int n) {
  spec.validate();
  std::vector<HmmInstance> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    rng::Stream s = rng::stream(seed, rng::Purpose::simulate, static_cast<std::uint64_t>(i));
    HmmInstance inst;
    inst.eta.mu.resize(spec.M);
    inst.eta.tau.resize(spec.M);
    std::gamma_distribution<double> gamma(spec.alpha0, 1.0 / spec.beta0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int m = 0; m < spec.M; ++m) {
      const double tau = std::max(gamma(s), std::numeric_limits<double>::min());
      inst.eta.tau(m) = tau;
      inst.eta.mu(m) = spec.mu0 + normal(s) / std::sqrt(spec.nu0 * tau);
    }
    inst.x.resize(spec.K);
    inst.z.resize(static_cast<std::size_t>(spec.K));
    int prev = draw_categorical(spec.pi.data(), spec.M, s);
    for (int k = 0; k < spec.K; ++k) {
      if (k > 0) {
        const Vector row = spec.A.row(prev).transpose();
        prev = draw_categorical(row.data(), spec.M, s);
      }
      inst.z[static_cast<std::size_t>(k)] = prev;
      inst.x(k) = inst.eta.mu(prev) + normal(s) / std::sqrt(inst.eta.tau(prev));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

double normal_gamma_log_density(double mu, double tau, double mu0, double nu, double alpha, double beta) {
  return alpha * std::log(beta) - std::lgamma(alpha) + (alpha - 1.0) * std::log(tau) - beta * tau +
         0.5 * std::log(nu) + 0.5 * std::log(tau) - kHalfLog2Pi - 0.5 * nu * tau * (mu - mu0) * (mu - mu0);
}

double log_prior(const HmmSpec& spec, const Eta& eta) {
  double total = 0.0;
  for (int m = 0; m < spec.M; ++m) {
    total += normal_gamma_log_density(eta.mu(m), eta.tau(m), spec.mu0, spec.nu0, spec.alpha0, spec.beta0);
  }
  return total;
}

double log_normal_precision(double x, double mu, double tau) {
  return 0.5 * std::log(tau) - kHalfLog2Pi - 0.5 * tau * (x - mu) * (x - mu);
}

double log_joint_given_eta(const HmmSpec& spec, const Vector& x, const std::vector<int>& z, const Eta& eta, int k) {
  if (k < 0 || k > spec.K || static_cast<int>(z.size()) < k || x.size() < k) {
    throw std::out_of_range("log_joint_given_eta: level " + std::to_string(k) + " out of range");
  }
  double total = 0.0;
  for (int t = 0; t < k; ++t) {
    const int m = z[static_cast<std::size_t>(t)];
    total += t == 0 ? safe_log(spec.pi(m)) : safe_log(spec.A(z[static_cast<std::size_t>(t - 1)], m));
    total += log_normal_precision(x(t), eta.mu(m), eta.tau(m));
  }
  return total;
}

double log_marginal_likelihood(const HmmSpec& spec, const Vector& x, const Eta& eta) {
  const int M = spec.M;
  Vector alpha(M);
  for (int m = 0; m < M; ++m) {
    alpha(m) = safe_log(spec.pi(m)) + log_normal_precision(x(0), eta.mu(m), eta.tau(m));
  }
  Vector next(M);
  Vector tmp(M);
  for (Eigen::Index t = 1; t < x.size(); ++t) {
    for (int m = 0; m < M; ++m) {
      for (int j = 0; j < M; ++j) {
        tmp(j) = alpha(j) + safe_log(spec.A(j, m));
      }
      next(m) = lse(tmp) + log_normal_precision(x(t), eta.mu(m), eta.tau(m));
    }
    alpha = next;
  }
  return lse(alpha);
}

Matrix log_backward_messages(const HmmSpec& spec, const Vector& x, const Eta& eta) {
  const int M = spec.M;
  const Eigen::Index K = x.size();
  Matrix beta = Matrix::Zero(K, M);
  Vector tmp(M);
  for (Eigen::Index t = K - 2; t >= 0; --t) {
    for (int j = 0; j < M; ++j) {
      for (int m = 0; m < M; ++m) {
        tmp(m) = safe_log(spec.A(j, m)) + log_normal_precision(x(t + 1), eta.mu(m), eta.tau(m)) + beta(t + 1, m);
      }
      beta(t, j) = lse(tmp);
    }
  }
  return beta;
}

InputScaling InputScaling::of(const Vector& x) {
  InputScaling s;
  if (x.size() == 0) {
    return s;
  }
  s.center = x.mean();
  const double var = (x.array() - s.center).square().mean();
  s.scale = std::max(std::sqrt(var), 1e-3);
  return s;
}

// ---------------------------------------------------------------------------
// Heuristics
// ---------------------------------------------------------------------------

HeuristicKind parse_heuristic(const std::string& name) {
  if (name == "none") {
    return HeuristicKind::none;
  }
  if (name == "gmm" || name == "gmm_handcoded") {
    return HeuristicKind::gmm;
  }
  if (name == "neural") {
    return HeuristicKind::neural;
  }
  throw std::invalid_argument("unknown heuristic: " + name);
}

std::string heuristic_name(HeuristicKind kind) {
  switch (kind) {
    case HeuristicKind::none: return "none";
    case HeuristicKind::gmm: return "gmm";
    case HeuristicKind::neural: return "neural";
  }
  return "unknown";
}

Matrix emission_table(const Vector& x, const Matrix& mu, const Matrix& tau) {
  check_particles(mu, tau, "emission_table");
  const Eigen::Index S = mu.rows();
  const Eigen::Index M = mu.cols();
  const Eigen::Index K = x.size();
  Matrix out(S * K, M);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index l = 0; l < K; ++l) {
      for (Eigen::Index m = 0; m < M; ++m) {
        out(s * K + l, m) = log_normal_precision(x(l), mu(s, m), tau(s, m));
      }
    }
  }
  return out;
}

Var PointwiseHeuristic::log_suffix(Tape& tape, const Vector& x, const Matrix& mu, const Matrix& tau,
                                   bool live) const {
  const Eigen::Index K = x.size();
  Var terms = log_point_terms(tape, x, mu, tau, live);
  // upper(l, j) = 1 for l >= j, so column j sums terms l = j..K-1.
  Matrix upper = Matrix::Zero(K, K + 1);
  for (Eigen::Index l = 0; l < K; ++l) {
    for (Eigen::Index j = 0; j <= l; ++j) {
      upper(l, j) = 1.0;
    }
  }
  return ad::matvec(terms, tape.constant(upper));
}

Var NoHeuristic::log_suffix(Tape& tape, const Vector& x, const Matrix& mu, const Matrix& tau, bool) const {
  check_particles(mu, tau, "NoHeuristic");
  return tape.constant(Matrix::Zero(mu.rows(), x.size() + 1));
}

GmmHeuristic::GmmHeuristic(const Vector& weights) : log_weights_(weights.array().log()) {}

Var GmmHeuristic::log_point_terms(Tape& tape, const Vector& x, const Matrix& mu, const Matrix& tau, bool) const {
  if (mu.cols() != log_weights_.size()) {
    throw std::invalid_argument("GmmHeuristic: expected " + std::to_string(log_weights_.size()) + " clusters");
  }
  Matrix table = emission_table(x, mu, tau);
  table.rowwise() += log_weights_.transpose();
  Matrix out(mu.rows(), x.size());
  for (Eigen::Index s = 0; s < mu.rows(); ++s) {
    for (Eigen::Index l = 0; l < x.size(); ++l) {
      out(s, l) = lse(table.row(s * x.size() + l).transpose());
    }
  }
  return tape.constant(out);
}

Mlp::Mlp(ParameterStore& store, const GroupId& group, const std::string& prefix, int in, int hidden, int out,
         rng::Stream& init) {
  W1_ = &store.add(group, prefix + ".W1", gaussian_init(init, in, hidden, 1.0 / std::sqrt(static_cast<double>(in))));
  b1_ = &store.add(group, prefix + ".b1", Matrix::Zero(1, hidden));
  W2_ = &store.add(group, prefix + ".W2",
                   gaussian_init(init, hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden))));
  b2_ = &store.add(group, prefix + ".b2", Matrix::Zero(1, out));
}

Var Mlp::operator()(Tape& tape, Var x, bool live) const {
  Var h = ad::tanh(ad::matvec(x, tape.parameter(*W1_, live)) + tape.parameter(*b1_, live));
  return ad::matvec(h, tape.parameter(*W2_, live)) + tape.parameter(*b2_, live);
}

namespace {

rng::Stream init_stream(std::uint64_t seed, std::uint64_t tag) { return rng::stream(seed, rng::Purpose::init, 100 + tag); }

}  // namespace

NeuralHeuristic::NeuralHeuristic(ParameterStore& store, int hidden, std::uint64_t init_seed)
    : net_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 1);
        return Mlp(store, heuristic_group(), "psi", 3, hidden, 1, s);
      }()) {}

Var NeuralHeuristic::log_point_terms(Tape& tape, const Vector& x, const Matrix& mu, const Matrix& tau,
                                     bool live) const {
  check_particles(mu, tau, "NeuralHeuristic");
  const InputScaling sc = InputScaling::of(x);
  const Eigen::Index S = mu.rows();
  const Eigen::Index M = mu.cols();
  const Eigen::Index K = x.size();
  Matrix in(S * K * M, 3);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index l = 0; l < K; ++l) {
      for (Eigen::Index m = 0; m < M; ++m) {
        const Eigen::Index r = (s * K + l) * M + m;
        in(r, 0) = (x(l) - sc.center) / sc.scale;
        in(r, 1) = (mu(s, m) - sc.center) / sc.scale;
        in(r, 2) = log_tau_input(tau(s, m), sc);
      }
    }
  }
  Var logits = ad::reshape(net_(tape, tape.constant(in), live), S * K, M);
  Var mix = ad::log_softmax(logits) + tape.constant(emission_table(x, mu, tau));
  return ad::reshape(ad::logsumexp(mix), S, K);
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

void sample_normal_gamma(const NormalGammaParams& p, int S, rng::Stream& rng, Matrix& mu, Matrix& tau) {
  const Matrix& a = p.alpha.value();
  const Matrix& b = p.beta.value();
  const Matrix& m0 = p.mu.value();
  const Matrix& nu = p.nu.value();
  const Eigen::Index M = a.cols();
  mu.resize(S, M);
  tau.resize(S, M);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int s = 0; s < S; ++s) {
    for (Eigen::Index m = 0; m < M; ++m) {
      std::gamma_distribution<double> gamma(a(0, m), 1.0 / b(0, m));
      const double t = std::max(gamma(rng), std::numeric_limits<double>::min());
      tau(s, m) = t;
      mu(s, m) = m0(0, m) + normal(rng) / std::sqrt(nu(0, m) * t);
    }
  }
}

Var normal_gamma_log_density(const NormalGammaParams& p, const Matrix& mu, const Matrix& tau) {
  Tape& t = p.alpha.tape();
  Var log_tau = t.constant(tau.array().log().matrix());
  Var tau_c = t.constant(tau);
  Var diff = t.constant(mu) - p.mu;
  Var d = p.alpha * ad::log(p.beta) - ad::lgamma(p.alpha) + (p.alpha - 1.0) * log_tau - p.beta * tau_c +
          0.5 * ad::log(p.nu) + 0.5 * log_tau - kHalfLog2Pi - 0.5 * (p.nu * tau_c * diff * diff);
  return ad::row_sum(d);
}

EtaDraw PriorEtaProposal::draw(Tape& tape, const Vector&, int S, rng::Stream& rng, bool) const {
  const auto row = [&](double v) { return tape.constant(Matrix::Constant(1, spec_.M, v)); };
  NormalGammaParams p{row(spec_.alpha0), row(spec_.beta0), row(spec_.mu0), row(spec_.nu0)};
  EtaDraw d;
  sample_normal_gamma(p, S, rng, d.mu, d.tau);
  d.log_q = tape.constant(normal_gamma_log_density(p, d.mu, d.tau).value());
  return d;
}

EtaDraw FixedEtaProposal::draw(Tape& tape, const Vector&, int S, rng::Stream&, bool) const {
  EtaDraw d;
  d.mu = eta_.mu.transpose().replicate(S, 1);
  d.tau = eta_.tau.transpose().replicate(S, 1);
  d.log_q = tape.constant(Matrix::Zero(S, 1));
  return d;
}

NeuralEtaProposal::NeuralEtaProposal(ParameterStore& store, int M, int hidden, std::uint64_t init_seed)
    : M_(M),
      assign_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 2);
        return Mlp(store, proposal_group(), "q_eta.assign", 1, hidden, M, s);
      }()),
      head_alpha_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 3);
        return Mlp(store, proposal_group(), "q_eta.alpha", 3, hidden, 1, s);
      }()),
      head_beta_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 4);
        return Mlp(store, proposal_group(), "q_eta.beta", 3, hidden, 1, s);
      }()),
      head_mu_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 5);
        return Mlp(store, proposal_group(), "q_eta.mu", 3, hidden, 1, s);
      }()),
      head_nu_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 6);
        return Mlp(store, proposal_group(), "q_eta.nu", 3, hidden, 1, s);
      }()) {}

NormalGammaParams NeuralEtaProposal::parameters(Tape& tape, const Vector& x, bool live) const {
  const InputScaling sc = InputScaling::of(x);
  const Eigen::Index K = x.size();
  const Vector xs = (x.array() - sc.center) / sc.scale;
  Var t = ad::softmax(assign_(tape, tape.constant(Matrix(xs)), live));
  Matrix moments(K, 3);
  moments.col(0).setConstant(1.0 / static_cast<double>(K));
  moments.col(1) = xs / static_cast<double>(K);
  moments.col(2) = xs.array().square().matrix() / static_cast<double>(K);
  // M x 3 per-cluster statistics; each head maps a row to one parameter.
  Var stats = ad::matvec(ad::transpose(t), tape.constant(moments));
  NormalGammaParams p;
  p.alpha = ad::exp(ad::transpose(head_alpha_(tape, stats, live)));
  p.beta = ad::exp(ad::transpose(head_beta_(tape, stats, live))) * (sc.scale * sc.scale);
  p.mu = ad::transpose(head_mu_(tape, stats, live)) * sc.scale + sc.center;
  p.nu = ad::exp(ad::transpose(head_nu_(tape, stats, live)));
  if (p.alpha.cols() != M_) {
    throw std::logic_error("NeuralEtaProposal: cluster count mismatch");
  }
  return p;
}

EtaDraw NeuralEtaProposal::draw(Tape& tape, const Vector& x, int S, rng::Stream& rng, bool live) const {
  const NormalGammaParams p = parameters(tape, x, live);
  EtaDraw d;
  sample_normal_gamma(p, S, rng, d.mu, d.tau);
  d.log_q = normal_gamma_log_density(p, d.mu, d.tau);
  return d;
}

Var PriorStateProposal::log_probs(Tape& tape, const Vector&, int k, const std::vector<int>& z_prev, const Matrix& mu,
                                  const Matrix&, bool) const {
  const Eigen::Index S = mu.rows();
  Matrix out(S, spec_.M);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (int m = 0; m < spec_.M; ++m) {
      out(s, m) = k == 1 ? safe_log(spec_.pi(m)) : safe_log(spec_.A(z_prev[static_cast<std::size_t>(s)], m));
    }
  }
  return tape.constant(out);
}

Var ExactStateProposal::log_probs(Tape& tape, const Vector& x, int k, const std::vector<int>& z_prev,
                                  const Matrix& mu, const Matrix& tau, bool) const {
  check_particles(mu, tau, "ExactStateProposal");
  const Eigen::Index S = mu.rows();
  Matrix out(S, spec_.M);
  Matrix beta;
  for (Eigen::Index s = 0; s < S; ++s) {
    if (s == 0 || mu.row(s) != mu.row(s - 1) || tau.row(s) != tau.row(s - 1)) {
      beta = log_backward_messages(spec_, x, eta_row(mu, tau, s));
    }
    Vector row(spec_.M);
    for (int m = 0; m < spec_.M; ++m) {
      const double prior =
          k == 1 ? safe_log(spec_.pi(m)) : safe_log(spec_.A(z_prev[static_cast<std::size_t>(s)], m));
      row(m) = prior + log_normal_precision(x(k - 1), mu(s, m), tau(s, m)) + beta(k - 1, m);
    }
    out.row(s) = (row.array() - lse(row)).matrix().transpose();
  }
  return tape.constant(out);
}

NeuralStateProposal::NeuralStateProposal(ParameterStore& store, int hidden, std::uint64_t init_seed)
    : first_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 7);
        return Mlp(store, proposal_group(), "q_z1", 3, hidden, 1, s);
      }()),
      next_([&]() -> Mlp {
        rng::Stream s = init_stream(init_seed, 8);
        return Mlp(store, proposal_group(), "q_zk", 4, hidden, 1, s);
      }()) {}

Var NeuralStateProposal::log_probs(Tape& tape, const Vector& x, int k, const std::vector<int>& z_prev,
                                   const Matrix& mu, const Matrix& tau, bool live) const {
  check_particles(mu, tau, "NeuralStateProposal");
  const InputScaling sc = InputScaling::of(x);
  const Eigen::Index S = mu.rows();
  const Eigen::Index M = mu.cols();
  const bool first = k == 1;
  Matrix in(S * M, first ? 3 : 4);
  const double xk = (x(k - 1) - sc.center) / sc.scale;
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index m = 0; m < M; ++m) {
      const Eigen::Index r = s * M + m;
      Eigen::Index c = 0;
      in(r, c++) = xk;
      if (!first) {
        in(r, c++) = z_prev[static_cast<std::size_t>(s)] == m ? 1.0 : 0.0;
      }
      in(r, c++) = (mu(s, m) - sc.center) / sc.scale;
      in(r, c) = log_tau_input(tau(s, m), sc);
    }
  }
  const Mlp& net = first ? first_ : next_;
  return ad::log_softmax(ad::reshape(net(tape, tape.constant(in), live), S, M));
}

// ---------------------------------------------------------------------------
// Density sequence and sampler
// ---------------------------------------------------------------------------

Var log_gamma(Tape& tape, const HmmSpec& spec, const Heuristic& heuristic, const Vector& x, const std::vector<int>& z,
              const Eta& eta, int k, bool live) {
  if (k < 0 || k > spec.K) {
    throw std::out_of_range("log_gamma: level " + std::to_string(k) + " outside [0, " + std::to_string(spec.K) + "]");
  }
  const double joint = log_prior(spec, eta) + log_joint_given_eta(spec, x, z, eta, k);
  Var suffix = heuristic.log_suffix(tape, x, eta.mu.transpose(), eta.tau.transpose(), live);
  return ad::columns(suffix, k, 1) + joint;
}

namespace {

struct Particles {
  Matrix mu;
  Matrix tau;
  std::vector<std::vector<int>> paths;
  std::vector<int> origin;
  Vector log_w;

  void resample(rng::Stream& stream) {
    const Eigen::Index S = log_w.size();
    const std::vector<int> idx = systematic_indices(normalized_weights(log_w), rng::uniform01(stream));
    Matrix mu2(mu.rows(), mu.cols());
    Matrix tau2(tau.rows(), tau.cols());
    std::vector<std::vector<int>> paths2(paths.size());
    std::vector<int> origin2(origin.size());
    for (Eigen::Index s = 0; s < S; ++s) {
      const int a = idx[static_cast<std::size_t>(s)];
      mu2.row(s) = mu.row(a);
      tau2.row(s) = tau.row(a);
      paths2[static_cast<std::size_t>(s)] = paths[static_cast<std::size_t>(a)];
      origin2[static_cast<std::size_t>(s)] = origin[static_cast<std::size_t>(a)];
    }
    mu.swap(mu2);
    tau.swap(tau2);
    paths.swap(paths2);
    origin.swap(origin2);
    log_w.setConstant(log_Z_hat(log_w));
  }
};

double forward_kl_estimate(const Vector& log_w, const Vector& lv) {
  const Vector target = log_w + lv;
  const double lse_t = lse(target);
  if (!std::isfinite(lse_t)) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const Vector w_tilde = (target.array() - lse_t).exp();
  double expect = 0.0;
  for (Eigen::Index s = 0; s < lv.size(); ++s) {
    if (w_tilde(s) > 0.0) {
      expect += w_tilde(s) * lv(s);
    }
  }
  return expect - (lse_t - lse(log_w));
}

bool all_finite_or_neg_inf(const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::isnan(v(i)) || v(i) == std::numeric_limits<double>::infinity()) {
      return false;
    }
  }
  return true;
}

// Sum over particles of weight * x, with zero-weight rows skipped so that
// -inf entries never meet a zero coefficient.
Vector masked(const Vector& coef) {
  Vector c = coef;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    if (!std::isfinite(c(i))) {
      c(i) = 0.0;
    }
  }
  return c;
}

}  // namespace

RunResult run_instance(const HmmModel& model, const Vector& x, const RunOptions& options, Tape& tape,
                       const GradientRequest* grad) {
  if (model.spec == nullptr || model.eta == nullptr || model.states == nullptr || model.heuristic == nullptr) {
    throw std::invalid_argument("run_instance: incomplete model");
  }
  const HmmSpec& spec = *model.spec;
  if (x.size() != spec.K) {
    throw std::invalid_argument("run_instance: expected " + std::to_string(spec.K) + " observations, got " +
                                std::to_string(x.size()));
  }
  if (options.S < 1) {
    throw std::invalid_argument("run_instance: S must be positive");
  }
  if (grad != nullptr && grad->mode == GradientMode::full && !grad->experimental) {
    throw std::logic_error("full optimization of the heuristic is experimental; set the experimental flag");
  }
  const bool live_phi = grad != nullptr && grad->proposals;
  const bool live_theta = grad != nullptr && grad->heuristic;
  const bool full = grad != nullptr && grad->mode == GradientMode::full;
  const int S = options.S;
  const int K = spec.K;
  const std::uint64_t run_id = rng::combine(options.iteration, options.instance);

  tape.clear();
  RunResult result;
  std::vector<Var> terms;

  // Level 0: η from its proposal, weighted against p(η) ψ(x_{1:K} | η).
  rng::Stream eta_rng = rng::stream(options.seed, rng::Purpose::noise, run_id, 0);
  EtaDraw draw = model.eta->draw(tape, x, S, eta_rng, live_phi);
  Var suffix = model.heuristic->log_suffix(tape, x, draw.mu, draw.tau, live_theta);
  const Matrix& suffix_v = suffix.value();

  Particles p;
  p.mu = draw.mu;
  p.tau = draw.tau;
  p.paths.assign(static_cast<std::size_t>(S), {});
  p.origin.resize(static_cast<std::size_t>(S));
  std::iota(p.origin.begin(), p.origin.end(), 0);

  Vector lv0(S);
  for (int s = 0; s < S; ++s) {
    lv0(s) = log_prior(spec, eta_row(p.mu, p.tau, s)) + suffix_v(s, 0) - draw.log_q.value()(s, 0);
  }
  result.log_v.push_back(lv0);
  result.level_kl.push_back(forward_kl_estimate(Vector::Zero(S), lv0));
  bool finite = all_finite_or_neg_inf(lv0) && std::isfinite(lse(lv0));
  if (grad != nullptr && finite) {
    const Vector w_tilde = normalized_weights(lv0);
    if (live_phi) {
      terms.push_back(-ad::weighted_sum(draw.log_q, w_tilde));
    }
    if (live_theta && full) {
      const double m = masked(w_tilde.cwiseProduct(lv0)).sum();
      terms.push_back(ad::weighted_sum(ad::columns(suffix, 0, 1), masked(w_tilde.cwiseProduct(lv0.array().matrix() -
                                                                                            Vector::Constant(S, m)))));
    }
  }
  p.log_w = lv0;

  const auto suffix_col = [&](int j) {
    Var col = ad::columns(suffix, j, 1);
    return ad::gather(col, p.origin);
  };

  std::vector<int> z_prev;
  for (int k = 0; k <= K && finite; ++k) {
    if (k > 0) {
      Var lp = model.states->log_probs(tape, x, k, z_prev, p.mu, p.tau, live_phi);
      const Matrix& lpv = lp.value();
      rng::Stream zs = rng::stream(options.seed, rng::Purpose::discrete, run_id, static_cast<std::uint64_t>(k));
      std::vector<int> z(static_cast<std::size_t>(S));
      Vector probs(spec.M);
      for (int s = 0; s < S; ++s) {
        probs = lpv.row(s).array().exp().transpose();
        z[static_cast<std::size_t>(s)] = draw_categorical(probs.data(), spec.M, zs);
      }
      Var lq = ad::pick(lp, z);
      Var psi_k = suffix_col(k - 1);
      Var psi_next = suffix_col(k);
      Vector lv(S);
      for (int s = 0; s < S; ++s) {
        const int m = z[static_cast<std::size_t>(s)];
        const double trans = k == 1 ? safe_log(spec.pi(m)) : safe_log(spec.A(z_prev[static_cast<std::size_t>(s)], m));
        lv(s) = trans + log_normal_precision(x(k - 1), p.mu(s, m), p.tau(s, m)) + psi_next.value()(s, 0) -
                psi_k.value()(s, 0) - lq.value()(s, 0);
      }
      result.log_v.push_back(lv);
      result.level_kl.push_back(forward_kl_estimate(p.log_w, lv));
      const Vector target = p.log_w + lv;
      finite = all_finite_or_neg_inf(lv) && std::isfinite(lse(target));
      if (!finite) {
        break;
      }
      if (grad != nullptr) {
        const Vector w_prev = normalized_weights(p.log_w);
        const Vector w_tilde = normalized_weights(target);
        if (live_phi) {
          terms.push_back(-ad::weighted_sum(lq, w_tilde));
        }
        if (live_theta) {
          terms.push_back(ad::weighted_sum(psi_k, w_prev - w_tilde));
          if (full) {
            const double m = masked(w_tilde.cwiseProduct(lv)).sum();
            terms.push_back(ad::weighted_sum(psi_next, masked(w_tilde.cwiseProduct(lv - Vector::Constant(S, m)))));
          }
        }
      }
      p.log_w = target;
      for (int s = 0; s < S; ++s) {
        p.paths[static_cast<std::size_t>(s)].push_back(z[static_cast<std::size_t>(s)]);
      }
      z_prev = std::move(z);
    }
    if (options.resample && k < K) {
      rng::Stream rs = rng::stream(options.seed, rng::Purpose::resample, run_id, static_cast<std::uint64_t>(k));
      p.resample(rs);
      for (int s = 0; s < S; ++s) {
        if (!p.paths[static_cast<std::size_t>(s)].empty()) {
          z_prev[static_cast<std::size_t>(s)] = p.paths[static_cast<std::size_t>(s)].back();
        }
      }
    }
  }

  result.log_w = p.log_w;
  result.log_Z_hat = finite ? log_Z_hat(p.log_w) : std::numeric_limits<double>::quiet_NaN();
  result.ess = finite ? ess(p.log_w) : 0.0;
  result.finite = finite;
  result.paths = std::move(p.paths);
  result.mu = std::move(p.mu);
  result.tau = std::move(p.tau);

  if (grad != nullptr && finite && !terms.empty()) {
    Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) {
      total = total + terms[i];
    }
    tape.backward(total * grad->scale);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

HmmExperiment::HmmExperiment(const HmmSpec& spec, const HmmConfig& config) : spec_(spec), config_(config) {
  spec_.validate();
  if (config.S < 1 || config.batch < 1 || config.hidden < 1) {
    throw std::invalid_argument("HmmExperiment: S, batch and hidden must be positive");
  }
  eta_ = std::make_unique<NeuralEtaProposal>(store_, spec_.M, config.hidden, config.seed);
  states_ = std::make_unique<NeuralStateProposal>(store_, config.hidden, config.seed);
  switch (config.heuristic) {
    case HeuristicKind::none: heuristic_ = std::make_unique<NoHeuristic>(); break;
    case HeuristicKind::gmm: heuristic_ = std::make_unique<GmmHeuristic>(spec_.pi); break;
    case HeuristicKind::neural: heuristic_ = std::make_unique<NeuralHeuristic>(store_, config.hidden, config.seed); break;
  }
  trainable_ = store_.all();
  adam_.lr = config.lr;
}

HmmModel HmmExperiment::model() const { return {&spec_, eta_.get(), states_.get(), heuristic_.get()}; }

HmmStepDiagnostics HmmExperiment::partial_grad_step(const std::vector<const HmmInstance*>& batch,
                                                    std::uint64_t iteration) {
  if (config_.mode == GradientMode::full && !config_.experimental) {
    throw std::logic_error("full optimization of the heuristic is experimental; set the experimental flag");
  }
  if (batch.empty()) {
    throw std::invalid_argument("partial_grad_step: empty batch");
  }
  store_.zero_grads();
  GradientRequest req;
  req.mode = config_.mode;
  req.experimental = config_.experimental;
  req.scale = 1.0 / static_cast<double>(batch.size());
  req.heuristic = config_.heuristic == HeuristicKind::neural;
  const HmmModel m = model();
  HmmStepDiagnostics d;
  Tape tape;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    RunOptions opt;
    opt.S = config_.S;
    opt.resample = config_.resample;
    opt.seed = config_.seed;
    opt.iteration = iteration;
    opt.instance = b;
    const RunResult r = run_instance(m, batch[b]->x, opt, tape, &req);
    d.finite = d.finite && r.finite;
    d.mean_log_Z_hat += r.log_Z_hat / static_cast<double>(batch.size());
    d.mean_ess += r.ess / static_cast<double>(batch.size());
    double kl = 0.0;
    for (double v : r.level_kl) {
      kl += v;
    }
    d.mean_kl += kl / static_cast<double>(batch.size());
  }
  for (const ad::Parameter* prm : trainable_) {
    if (!prm->grad.allFinite()) {
      d.finite = false;
    }
  }
  if (d.finite) {
    adam_step(trainable_, adam_, adam_state_);
  }
  return d;
}

void HmmExperiment::train(const std::vector<HmmInstance>& train,
                          const std::function<bool(std::uint64_t, const HmmStepDiagnostics&)>& callback) {
  if (train.empty()) {
    throw std::invalid_argument("HmmExperiment::train: no training instances");
  }
  std::vector<const HmmInstance*> batch(static_cast<std::size_t>(config_.batch));
  for (int it = 0; it < config_.iterations; ++it) {
    rng::Stream s = rng::stream(config_.seed, rng::Purpose::batch, static_cast<std::uint64_t>(it));
    std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
    for (auto& ptr : batch) {
      ptr = &train[pick(s)];
    }
    const HmmStepDiagnostics d = partial_grad_step(batch, static_cast<std::uint64_t>(it));
    if (callback && !callback(static_cast<std::uint64_t>(it), d)) {
      return;
    }
  }
}

std::vector<HmmEvalRow> HmmExperiment::evaluate(const std::vector<HmmInstance>& instances, int S, std::uint64_t seed,
                                                bool resample) const {
  std::vector<HmmEvalRow> rows;
  const HmmModel m = model();
  Tape tape;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    RunOptions opt;
    opt.S = S;
    opt.resample = resample;
    opt.seed = seed;
    opt.instance = i;
    const RunResult r = run_instance(m, instances[i].x, opt, tape);
    rows.push_back({static_cast<int>(i), r.log_Z_hat, r.ess});
  }
  return rows;
}

double paired_t_test_greater(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("paired_t_test_greater: need two equal-length samples of size >= 2");
  }
  const std::size_t n = a.size();
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean += (a[i] - b[i]) / static_cast<double>(n);
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    return mean > 0.0 ? 0.0 : 1.0;
  }
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::cdf(boost::math::complement(dist, t));
}

}  // namespace nvi::hmm
