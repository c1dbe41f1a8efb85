#include "nvi/targets.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nvi {

// ---------------------------------------------------------------------------
// UnnormalizedDensity

ad::Vector UnnormalizedDensity::log_density(const ad::Matrix& z) const {
  ad::Tape tape;
  ad::Var out = log_density(tape, tape.constant(z), false);
  return Eigen::Map<const ad::Vector>(out.value().data(), out.rows());
}

void UnnormalizedDensity::check_dim(ad::Var z, const char* who) const {
  if (z.cols() != dim()) {
    throw std::invalid_argument(std::string(who) + ": expected dimension " + std::to_string(dim()) + ", got " +
                                std::to_string(z.cols()));
  }
}

// ---------------------------------------------------------------------------
// DiagGaussianDensity

DiagGaussianDensity::DiagGaussianDensity(ad::Vector mean, ad::Vector stddev)
    : mean_(std::move(mean)), stddev_(std::move(stddev)) {
  if (mean_.size() != stddev_.size() || mean_.size() == 0) {
    throw std::invalid_argument("DiagGaussianDensity: mean and stddev sizes differ");
  }
  if ((stddev_.array() <= 0).any()) {
    throw std::invalid_argument("DiagGaussianDensity: stddev must be positive");
  }
}

void DiagGaussianDensity::make_learnable(ParameterStore& store, const GroupId& group, const std::string& prefix) {
  mean_param_ = &store.add(group, prefix + ".mean", ad::Matrix(mean_.transpose()));
  log_std_param_ = &store.add(group, prefix + ".log_std", ad::Matrix(stddev_.array().log().matrix().transpose()));
}

ad::Vector DiagGaussianDensity::mean() const {
  if (mean_param_ != nullptr) {
    return mean_param_->value.row(0).transpose();
  }
  return mean_;
}

ad::Vector DiagGaussianDensity::stddev() const {
  if (log_std_param_ != nullptr) {
    return log_std_param_->value.row(0).transpose().array().exp();
  }
  return stddev_;
}

ad::Var DiagGaussianDensity::mean_var(ad::Tape& tape, bool live) const {
  if (mean_param_ != nullptr) {
    return tape.parameter(*mean_param_, live);
  }
  return tape.constant(ad::Matrix(mean_.transpose()));
}

ad::Var DiagGaussianDensity::stddev_var(ad::Tape& tape, bool live) const {
  if (log_std_param_ != nullptr) {
    return exp(tape.parameter(*log_std_param_, live));
  }
  return tape.constant(ad::Matrix(stddev_.transpose()));
}

ad::Var DiagGaussianDensity::log_density(ad::Tape& tape, ad::Var z, bool live) const {
  check_dim(z, "DiagGaussianDensity");
  return gaussian_logpdf(z, mean_var(tape, live), stddev_var(tape, live));
}

ad::Var DiagGaussianDensity::sample(ad::Tape& tape, ad::Var noise, bool live) const {
  check_dim(noise, "DiagGaussianDensity::sample");
  return mean_var(tape, live) + stddev_var(tape, live) * noise;
}

std::unique_ptr<DiagGaussianDensity> make_initial_proposal(int dim, double stddev) {
  return std::make_unique<DiagGaussianDensity>(ad::Vector::Zero(dim), ad::Vector::Constant(dim, stddev));
}

// ---------------------------------------------------------------------------
// RingGmm

RingGmm::RingGmm(int modes, double radius, double variance)
    : modes_(modes), radius_(radius), variance_(variance), means_(modes, 2) {
  if (modes < 1 || variance <= 0) {
    throw std::invalid_argument("RingGmm: need at least one mode and positive variance");
  }
  for (int m = 0; m < modes; ++m) {
    const double angle = 2.0 * std::numbers::pi * (m + 1) / modes;
    means_(m, 0) = radius * std::sin(angle);
    means_(m, 1) = radius * std::cos(angle);
  }
}

ad::Var RingGmm::log_density(ad::Tape& tape, ad::Var z, bool /*live*/) const {
  check_dim(z, "RingGmm");
  const ad::Var sd = tape.constant(std::sqrt(variance_));
  std::vector<ad::Var> parts;
  parts.reserve(static_cast<std::size_t>(modes_));
  for (int m = 0; m < modes_; ++m) {
    parts.push_back(gaussian_logpdf(z, tape.constant(ad::Matrix(means_.row(m))), sd));
  }
  return logsumexp(ad::concat(parts));
}

std::vector<int> RingGmm::nearest_mode(const ad::Matrix& z) const {
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    Eigen::Index best = 0;
    (means_.rowwise() - z.row(s)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(s)] = static_cast<int>(best);
  }
  return out;
}

double ring_log_Z(const RingGmm& target) { return std::log(static_cast<double>(target.modes())); }

// ---------------------------------------------------------------------------
// AnnealingPath

AnnealingPath::AnnealingPath(int K) : K_(K) {
  if (K < 2) {
    throw std::invalid_argument("AnnealingPath: K must be at least 2");
  }
}

AnnealingPath::AnnealingPath(int K, ParameterStore& store, const std::string& name) : AnnealingPath(K) {
  raw_ = &store.add(schedule_group(), name, ad::Matrix::Zero(1, K - 1));
}

ad::Vector AnnealingPath::betas() const {
  ad::Tape tape;
  ad::Var b = betas(tape, false);
  return b.value().row(0).transpose();
}

ad::Var AnnealingPath::betas(ad::Tape& tape, bool live) const {
  const int n = K_ - 1;
  if (raw_ == nullptr) {
    ad::Matrix lin(1, n);
    for (int i = 0; i < n; ++i) {
      lin(0, i) = static_cast<double>(i + 1) / n;
    }
    lin(0, n - 1) = 1.0;
    return tape.constant(lin);
  }
  if (n == 1) {
    return tape.constant(1.0);
  }
  ad::Var inc = softmax(tape.parameter(*raw_, live));
  ad::Var partial = cumsum(columns(inc, 0, n - 1));
  return ad::concat({partial, tape.constant(1.0)});
}

ad::Var AnnealingPath::beta(ad::Tape& tape, int k, bool live) const {
  if (k < 1 || k > K_) {
    throw std::out_of_range("AnnealingPath::beta: level " + std::to_string(k) + " outside 1.." + std::to_string(K_));
  }
  if (k == 1) {
    return tape.constant(0.0);
  }
  return columns(betas(tape, live), k - 2, 1);
}

// ---------------------------------------------------------------------------
// DensitySequence

ad::Vector DensitySequence::log_gamma(int k, const ad::Matrix& z) const {
  ad::Tape tape;
  ad::Var out = log_gamma(tape, k, tape.constant(z), false);
  return Eigen::Map<const ad::Vector>(out.value().data(), out.rows());
}

void DensitySequence::check_level(int k) const {
  if (k < 1 || k > length()) {
    throw std::out_of_range("density level " + std::to_string(k) + " outside 1.." + std::to_string(length()));
  }
}

AnnealedSequence::AnnealedSequence(const UnnormalizedDensity& initial, const UnnormalizedDensity& final_target,
                                   const AnnealingPath& path)
    : initial_(initial), final_(final_target), path_(path) {
  if (initial.dim() != final_target.dim()) {
    throw std::invalid_argument("AnnealedSequence: endpoint dimensions differ");
  }
}

ad::Var AnnealedSequence::interpolate(ad::Tape& tape, ad::Var z, ad::Var beta) const {
  ad::Var lq = initial_.log_density(tape, z, false);
  ad::Var lg = final_.log_density(tape, z, false);
  return lq + beta * (lg - lq);
}

ad::Var AnnealedSequence::log_gamma(ad::Tape& tape, int k, ad::Var z, bool live) const {
  check_level(k);
  if (k == 1) {
    return initial_.log_density(tape, z, false);
  }
  if (k == length()) {
    return final_.log_density(tape, z, false);
  }
  return interpolate(tape, z, path_.beta(tape, k, live));
}

std::vector<GroupId> AnnealedSequence::target_groups(int k) const {
  check_level(k);
  if (path_.learnable() && k > 1 && k < length()) {
    return {schedule_group()};
  }
  return {};
}

// ---------------------------------------------------------------------------
// GaussianSequence

GaussianSequence::GaussianSequence(std::vector<Level> levels, ParameterStore* store) : levels_(std::move(levels)) {
  if (levels_.size() < 2) {
    throw std::invalid_argument("GaussianSequence: need at least two levels");
  }
  means_.assign(levels_.size(), nullptr);
  if (store != nullptr) {
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      const int k = static_cast<int>(i) + 1;
      means_[i] = &store->add(target_group(k), "target" + std::to_string(k) + ".mean",
                              ad::Matrix(levels_[i].mean.transpose()));
    }
  }
}

ad::Var GaussianSequence::log_gamma(ad::Tape& tape, int k, ad::Var z, bool live) const {
  check_level(k);
  const Level& lv = levels_[static_cast<std::size_t>(k - 1)];
  ad::Parameter* p = means_[static_cast<std::size_t>(k - 1)];
  ad::Var mean = p != nullptr ? tape.parameter(*p, live) : tape.constant(ad::Matrix(lv.mean.transpose()));
  return gaussian_logpdf(z, mean, tape.constant(ad::Matrix(lv.stddev.transpose()))) + lv.log_scale;
}

std::vector<GroupId> GaussianSequence::target_groups(int k) const {
  check_level(k);
  if (means_[static_cast<std::size_t>(k - 1)] != nullptr) {
    return {target_group(k)};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Quadrature

ad::Matrix Grid2d::points() const {
  ad::Matrix out(static_cast<Eigen::Index>(n) * n, 2);
  const double h = step();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      out(static_cast<Eigen::Index>(i) * n + j, 0) = lo + i * h;
      out(static_cast<Eigen::Index>(i) * n + j, 1) = lo + j * h;
    }
  }
  return out;
}

ad::Vector Grid2d::log_weights() const {
  ad::Vector out(static_cast<Eigen::Index>(n) * n);
  const double log_h2 = 2.0 * std::log(step());
  for (int i = 0; i < n; ++i) {
    const double wi = (i == 0 || i == n - 1) ? std::log(0.5) : 0.0;
    for (int j = 0; j < n; ++j) {
      const double wj = (j == 0 || j == n - 1) ? std::log(0.5) : 0.0;
      out(static_cast<Eigen::Index>(i) * n + j) = log_h2 + wi + wj;
    }
  }
  return out;
}

double quadrature_log_integral(const Grid2d& grid, const ad::Vector& log_f) {
  return ad::log_sum_exp(log_f + grid.log_weights());
}

std::vector<double> quadrature_stepwise_kl(const DensitySequence& seq, const Grid2d& grid) {
  if (seq.dim() != 2) {
    throw std::invalid_argument("quadrature_stepwise_kl: grid quadrature is two-dimensional");
  }
  const ad::Matrix pts = grid.points();
  const ad::Vector lw = grid.log_weights();
  std::vector<ad::Vector> log_pi;
  for (int k = 1; k <= seq.length(); ++k) {
    ad::Vector lg = seq.log_gamma(k, pts);
    lg.array() -= ad::log_sum_exp(lg + lw);
    log_pi.push_back(std::move(lg));
  }
  std::vector<double> kl;
  for (std::size_t k = 1; k < log_pi.size(); ++k) {
    const ad::Vector& p = log_pi[k - 1];
    const ad::Vector& q = log_pi[k];
    kl.push_back(((p + lw).array().exp() * (p - q).array()).sum());
  }
  return kl;
}

double coefficient_of_variation(const std::vector<double>& values) {
  if (values.empty()) {
    return 0.0;
  }
  const Eigen::Map<const ad::Vector> v(values.data(), static_cast<Eigen::Index>(values.size()));
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  return std::sqrt(var) / mean;
}

}  // namespace nvi
