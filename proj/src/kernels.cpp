#include "nvi/kernels.hpp"

#include "nvi/rng.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace nvi {

namespace {

ad::Matrix gaussian_init(rng::Stream& s, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> n(0.0, stddev);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = n(s);
  }
  return m;
}

void check_width(ad::Var v, int dim, const char* who) {
  if (v.cols() != dim) {
    throw std::invalid_argument(std::string(who) + ": expected dimension " + std::to_string(dim) + ", got " +
                                std::to_string(v.cols()));
  }
}

const double kLogEMinus1 = std::log(std::numbers::e - 1.0);

}  // namespace

double inverse_softplus(double y) {
  if (y <= 0) {
    throw std::invalid_argument("inverse_softplus: argument must be positive");
  }
  return y > 30 ? y : std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// GaussianMlpKernel

GaussianMlpKernel::GaussianMlpKernel(ParameterStore& store, const GroupId& group, const std::string& prefix, int dim,
                                     std::uint64_t init_seed, const MlpKernelOptions& options)
    : dim_(dim), group_(group), options_(options) {
  const int H = options.hidden;
  rng::Stream s = rng::stream(init_seed, rng::Purpose::init, static_cast<std::uint64_t>(group.kind),
                              static_cast<std::uint64_t>(group.level + 1));
  const double in_sd = 1.0 / std::sqrt(static_cast<double>(dim));
  const double out_sd = options.output_scale / std::sqrt(static_cast<double>(H));
  W_h_ = &store.add(group, prefix + ".W_h", gaussian_init(s, dim, H, in_sd));
  b_h_ = &store.add(group, prefix + ".b_h", ad::Matrix::Zero(1, H));
  W_mu_ = &store.add(group, prefix + ".W_mu", gaussian_init(s, H, dim, out_sd));
  b_mu_ = &store.add(group, prefix + ".b_mu", ad::Matrix::Zero(1, dim));
  W_sigma_ = &store.add(group, prefix + ".W_sigma", gaussian_init(s, H, dim, out_sd));
  b_sigma_ = &store.add(group, prefix + ".b_sigma",
                        ad::Matrix::Constant(1, dim, inverse_softplus(options.initial_stddev)));
}

GaussianMlpKernel::Moments GaussianMlpKernel::moments(ad::Tape& tape, ad::Var z, bool live) const {
  check_width(z, dim_, "GaussianMlpKernel");
  ad::Var pre = matvec(z, tape.parameter(*W_h_, live)) + tape.parameter(*b_h_, live);
  ad::Var h = options_.activation == HiddenActivation::tanh ? tanh(pre) : pre;
  ad::Var mean = z + matvec(h, tape.parameter(*W_mu_, live)) + tape.parameter(*b_mu_, live);
  ad::Var sd = softplus(matvec(h, tape.parameter(*W_sigma_, live)) + tape.parameter(*b_sigma_, live));
  return {mean, sd};
}

KernelSample GaussianMlpKernel::propose(ad::Tape& tape, ad::Var z_prev, ad::Var noise, bool live) const {
  check_width(noise, dim_, "GaussianMlpKernel::propose");
  const Moments m = moments(tape, z_prev, live);
  ad::Var z = m.mean + m.stddev * noise;
  return {z, gaussian_logpdf(z, m.mean, m.stddev)};
}

ad::Var GaussianMlpKernel::log_prob(ad::Tape& tape, ad::Var z_new, ad::Var z_given, bool live) const {
  check_width(z_new, dim_, "GaussianMlpKernel::log_prob");
  const Moments m = moments(tape, z_given, live);
  return gaussian_logpdf(z_new, m.mean, m.stddev);
}

// ---------------------------------------------------------------------------
// PlanarFlowStack

PlanarFlowStack::PlanarFlowStack(ParameterStore& store, const GroupId& group, const std::string& prefix, int dim,
                                 int layers, std::uint64_t init_seed, double u_scale)
    : dim_(dim) {
  rng::Stream s = rng::stream(init_seed, rng::Purpose::init, static_cast<std::uint64_t>(group.kind),
                              static_cast<std::uint64_t>(group.level + 1));
  const double w_sd = 1.0 / std::sqrt(static_cast<double>(dim));
  for (int l = 0; l < layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    w_.push_back(&store.add(group, base + ".w", gaussian_init(s, dim, 1, w_sd)));
    u_.push_back(&store.add(group, base + ".u",
                            u_scale > 0 ? gaussian_init(s, 1, dim, u_scale) : ad::Matrix(ad::Matrix::Zero(1, dim))));
    b_.push_back(&store.add(group, base + ".b", ad::Matrix::Zero(1, 1)));
  }
}

ad::Var PlanarFlowStack::corrected_u(ad::Tape& tape, int layer, bool live) const {
  ad::Var w = tape.parameter(*w_[static_cast<std::size_t>(layer)], live);
  ad::Var u = tape.parameter(*u_[static_cast<std::size_t>(layer)], live);
  ad::Var wu = matvec(u, w);
  ad::Var m = softplus(wu + kLogEMinus1) - 1.0;
  ad::Var norm2 = sum(w * w);
  return u + (m - wu) / norm2 * transpose(w);
}

KernelSample PlanarFlowStack::forward(ad::Tape& tape, ad::Var z, bool live) const {
  check_width(z, dim_, "PlanarFlowStack");
  ad::Var log_det = tape.constant(ad::Matrix::Zero(z.rows(), 1));
  for (int l = 0; l < layers(); ++l) {
    ad::Var w = tape.parameter(*w_[static_cast<std::size_t>(l)], live);
    ad::Var b = tape.parameter(*b_[static_cast<std::size_t>(l)], live);
    ad::Var uh = corrected_u(tape, l, live);
    ad::Var t = tanh(matvec(z, w) + b);
    ad::Var wu = matvec(uh, w);
    log_det = log_det + log(1.0 + (1.0 - t * t) * wu);
    z = z + t * uh;
  }
  return {z, log_det};
}

KernelSample PlanarFlowStack::propose(ad::Tape& tape, ad::Var z_prev, ad::Var /*noise*/, bool live) const {
  return forward(tape, z_prev, live);
}

ad::Var PlanarFlowStack::log_prob(ad::Tape&, ad::Var, ad::Var, bool) const {
  throw std::logic_error("PlanarFlowStack::log_prob: a deterministic flow has no conditional density");
}

}  // namespace nvi
