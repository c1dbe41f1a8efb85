#include "nvi/sampler.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nvi {

namespace {

ad::Vector column(ad::Var v) { return Eigen::Map<const ad::Vector>(v.value().data(), v.rows()); }

void require_reverse(const Transition& t, int level) {
  if (t.forward == nullptr) {
    throw std::invalid_argument("level " + std::to_string(level) + ": missing forward kernel");
  }
  if (!t.forward->deterministic() && t.reverse == nullptr) {
    throw std::invalid_argument("level " + std::to_string(level) + ": stochastic forward kernel needs a reverse kernel");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LevelGraph

LevelGraph::LevelGraph(ad::Tape& tape, const DensitySequence& seq, const Transition& transition,
                       const ad::Matrix& z_prev, const ad::Matrix& noise, int level, const LiveSet& live)
    : tape_(tape), seq_(seq), transition_(transition), level_(level), live_(live) {
  require_reverse(transition, level);
  if (level < 2 || level > seq.length()) {
    throw std::out_of_range("LevelGraph: level " + std::to_string(level) + " outside 2.." +
                            std::to_string(seq.length()));
  }
  if (noise.rows() != z_prev.rows()) {
    throw std::invalid_argument("LevelGraph: noise rows do not match particle count");
  }
  z_prev_ = tape.constant(z_prev);
  const KernelSample s = transition.forward->propose(tape, z_prev_, tape.constant(noise), live.forward_kernel);
  z_bar_ = tape.detach(s.z);
  z_ = live.reparameterize ? s.z : z_bar_;
  sample_log_term_ = s.log_term;
}

ad::Var LevelGraph::log_gamma() {
  if (!log_gamma_) {
    log_gamma_ = seq_.log_gamma(tape_, level_, z_, live_.target);
  }
  return *log_gamma_;
}

ad::Var LevelGraph::log_gamma_bar() {
  if (!log_gamma_bar_) {
    log_gamma_bar_ = seq_.log_gamma(tape_, level_, z_bar_, live_.target);
  }
  return *log_gamma_bar_;
}

ad::Var LevelGraph::log_gamma_prev() {
  if (!log_gamma_prev_) {
    log_gamma_prev_ = seq_.log_gamma(tape_, level_ - 1, z_prev_, live_.target_prev);
  }
  return *log_gamma_prev_;
}

ad::Var LevelGraph::log_forward() {
  if (live_.reparameterize || deterministic()) {
    return sample_log_term_;
  }
  return log_forward_bar();
}

ad::Var LevelGraph::log_forward_stl() {
  if (deterministic()) {
    throw std::logic_error("log_forward_stl: flow kernels have no conditional density");
  }
  if (!log_forward_stl_) {
    log_forward_stl_ = transition_.forward->log_prob(tape_, z_, z_prev_, false);
  }
  return *log_forward_stl_;
}

ad::Var LevelGraph::log_forward_bar() {
  if (deterministic()) {
    throw std::logic_error("log_forward_bar: flow kernels have no conditional density");
  }
  if (!log_forward_bar_) {
    log_forward_bar_ = transition_.forward->log_prob(tape_, z_bar_, z_prev_, live_.forward_kernel);
  }
  return *log_forward_bar_;
}

ad::Var LevelGraph::log_reverse() {
  if (deterministic()) {
    throw std::logic_error("log_reverse: flow kernels carry no reverse kernel");
  }
  if (!log_reverse_) {
    log_reverse_ = transition_.reverse->log_prob(tape_, z_prev_, z_, live_.reverse_kernel);
  }
  return *log_reverse_;
}

ad::Var LevelGraph::log_reverse_bar() {
  if (deterministic()) {
    throw std::logic_error("log_reverse_bar: flow kernels carry no reverse kernel");
  }
  if (!log_reverse_bar_) {
    log_reverse_bar_ = transition_.reverse->log_prob(tape_, z_prev_, z_bar_, live_.reverse_kernel);
  }
  return *log_reverse_bar_;
}

const ad::Vector& LevelGraph::log_v() {
  if (!log_v_) {
    const IncrementalWeightRecord r = record();
    log_v_ = r.log_v;
  }
  return *log_v_;
}

IncrementalWeightRecord LevelGraph::record() {
  IncrementalWeightRecord r;
  r.level = level_;
  if (deterministic()) {
    r.log_reverse_density = column(log_gamma()) + column(sample_log_term_);
    r.log_forward_density = column(log_gamma_prev());
  } else {
    r.log_reverse_density = column(log_gamma()) + column(log_reverse());
    r.log_forward_density = column(log_gamma_prev()) + column(sample_log_term_);
  }
  r.log_v = r.log_reverse_density - r.log_forward_density;
  return r;
}

// ---------------------------------------------------------------------------
// Sampler operations

ParticleSystem init(const DiagGaussianDensity& initial, const DensitySequence& seq, const ad::Matrix& noise) {
  if (noise.rows() < 1) {
    throw std::invalid_argument("init: need at least one particle");
  }
  ad::Tape tape;
  ad::Var z = initial.sample(tape, tape.constant(noise), false);
  ad::Var lq = initial.log_density(tape, z, false);
  ad::Var lg = seq.log_gamma(tape, 1, z, false);
  ParticleSystem ps;
  ps.z = z.value();
  ps.log_w = column(lg) - column(lq);
  ps.level = 1;
  ps.ancestors.resize(static_cast<std::size_t>(noise.rows()));
  for (std::size_t i = 0; i < ps.ancestors.size(); ++i) {
    ps.ancestors[i] = static_cast<int>(i);
  }
  return ps;
}

std::pair<ParticleSystem, IncrementalWeightRecord> extend(const ParticleSystem& ps, const DensitySequence& seq,
                                                          const Transition& transition, const ad::Matrix& noise,
                                                          int level) {
  if (ps.level != level - 1) {
    throw std::invalid_argument("extend: system is at level " + std::to_string(ps.level) + ", cannot extend to " +
                                std::to_string(level));
  }
  ad::Tape tape;
  LevelGraph g(tape, seq, transition, ps.z, noise, level, LiveSet{});
  IncrementalWeightRecord rec = g.record();
  ParticleSystem out;
  out.z = g.z().value();
  out.log_w = ps.log_w + rec.log_v;
  out.level = level;
  out.ancestors = ps.ancestors;
  return {std::move(out), std::move(rec)};
}

std::vector<int> systematic_indices(const ad::Vector& w, double u) {
  const Eigen::Index S = w.size();
  std::vector<int> idx(static_cast<std::size_t>(S));
  double cum = w(0);
  Eigen::Index j = 0;
  for (Eigen::Index s = 0; s < S; ++s) {
    const double point = (static_cast<double>(s) + u) / static_cast<double>(S);
    while (point > cum && j < S - 1) {
      ++j;
      cum += w(j);
    }
    idx[static_cast<std::size_t>(s)] = static_cast<int>(j);
  }
  return idx;
}

ad::Vector normalized_weights(const ad::Vector& log_w) {
  const double lse = ad::log_sum_exp(log_w);
  if (!std::isfinite(lse)) {
    throw DegenerateWeightsError("degenerate particle system");
  }
  return (log_w.array() - lse).exp();
}

ParticleSystem resample_systematic(const ParticleSystem& ps, rng::Stream& stream) {
  const Eigen::Index S = ps.size();
  if (S < 1) {
    throw std::invalid_argument("resample_systematic: empty particle system");
  }
  const ad::Vector w = normalized_weights(ps.log_w);
  const double u = rng::uniform01(stream);
  const std::vector<int> idx = systematic_indices(w, u);
  ParticleSystem out;
  out.z.resize(ps.z.rows(), ps.z.cols());
  out.level = ps.level;
  out.ancestors = idx;
  for (Eigen::Index s = 0; s < S; ++s) {
    out.z.row(s) = ps.z.row(idx[static_cast<std::size_t>(s)]);
  }
  out.log_w = ad::Vector::Constant(S, log_Z_hat(ps.log_w));
  return out;
}

double ess(const ad::Vector& log_w) {
  const double a = ad::log_sum_exp(log_w);
  if (!std::isfinite(a)) {
    return 0.0;
  }
  const double b = ad::log_sum_exp(2.0 * log_w);
  return std::exp(2.0 * a - b);
}

double ess(const ParticleSystem& ps) { return ess(ps.log_w); }

double log_Z_hat(const ad::Vector& log_w) {
  return ad::log_sum_exp(log_w) - std::log(static_cast<double>(log_w.size()));
}

double log_Z_hat(const ParticleSystem& ps) { return log_Z_hat(ps.log_w); }

bool should_resample(ResamplePolicy policy, double ess_value, Eigen::Index S, double threshold) {
  switch (policy) {
    case ResamplePolicy::never: return false;
    case ResamplePolicy::always: return true;
    case ResamplePolicy::adaptive: return ess_value < threshold * static_cast<double>(S);
  }
  return false;
}

SequenceResult run_sequence(const SamplerConfig& config, const DiagGaussianDensity& initial,
                            const DensitySequence& seq, const std::vector<Transition>& transitions) {
  const int K = seq.length();
  if (K < 2 || static_cast<int>(transitions.size()) != K - 1) {
    throw std::invalid_argument("run_sequence: need K >= 2 and one transition per level 2..K");
  }
  const int d = seq.dim();
  SequenceResult out;
  ParticleSystem ps =
      init(initial, seq, rng::normal_noise(config.seed, rng::Purpose::noise, config.iteration, 1, config.S, d));
  for (int k = 2; k <= K; ++k) {
    out.pre_resample.push_back(ps);
    const bool resample = should_resample(config.resample, ess(ps), ps.size(), config.adaptive_threshold);
    out.resampled.push_back(resample);
    if (resample) {
      rng::Stream s = rng::stream(config.seed, rng::Purpose::resample, config.iteration, static_cast<std::uint64_t>(k - 1));
      ps = resample_systematic(ps, s);
    }
    const ad::Matrix noise =
        rng::normal_noise(config.seed, rng::Purpose::noise, config.iteration, static_cast<std::uint64_t>(k), config.S, d);
    auto [next, rec] = extend(ps, seq, transitions[static_cast<std::size_t>(k - 2)], noise, k);
    out.records.push_back(std::move(rec));
    ps = std::move(next);
  }
  out.pre_resample.push_back(ps);
  out.resampled.push_back(false);
  out.final = std::move(ps);
  return out;
}

}  // namespace nvi
