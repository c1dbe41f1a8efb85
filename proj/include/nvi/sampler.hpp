#ifndef NVI_SAMPLER_HPP
#define NVI_SAMPLER_HPP

#include "nvi/kernels.hpp"
#include "nvi/rng.hpp"
#include "nvi/targets.hpp"

#include <optional>
#include <stdexcept>
#include <vector>

namespace nvi {

/// S weighted particles at level k. Rows of z are particles.
struct ParticleSystem {
  ad::Matrix z;
  ad::Vector log_w;
  int level = 1;
  /// Ancestor index of each particle after the most recent resampling.
  std::vector<int> ancestors;

  [[nodiscard]] Eigen::Index size() const { return log_w.size(); }
};

/// Per-particle incremental weight and its two halves.
struct IncrementalWeightRecord {
  int level = 0;
  ad::Vector log_v;
  /// log γ_k(z_k) + log r_{k-1}(z_{k-1} | z_k), or log γ_k(f(z)) + log|det J| for flows.
  ad::Vector log_reverse_density;
  /// log γ_{k-1}(z_{k-1}) + log q_k(z_k | z_{k-1}), or log γ_{k-1}(z_{k-1}) for flows.
  ad::Vector log_forward_density;
};

/// Forward proposal q_k and reverse kernel r_{k-1} for one level. Flow
/// kernels need no reverse kernel.
struct Transition {
  const TransitionKernel* forward = nullptr;
  const TransitionKernel* reverse = nullptr;
};

/// Which parameter groups are live when recording one level.
struct LiveSet {
  bool forward_kernel = false;
  bool reverse_kernel = false;
  /// θ_k, the parameters of γ_k.
  bool target = false;
  /// θ_{k-1}, the parameters of γ_{k-1}.
  bool target_prev = false;
  /// Keep the sampled z_k attached to the forward-kernel parameters.
  bool reparameterize = true;
};

/// Recording of one level of the nested sampler on a tape. Incoming samples
/// enter as constants, so no gradient crosses into earlier levels. Terms are
/// recorded on first use.
class LevelGraph {
 public:
  LevelGraph(ad::Tape& tape, const DensitySequence& seq, const Transition& transition, const ad::Matrix& z_prev,
             const ad::Matrix& noise, int level, const LiveSet& live);

  [[nodiscard]] int level() const { return level_; }
  [[nodiscard]] bool deterministic() const { return transition_.forward->deterministic(); }
  [[nodiscard]] const LiveSet& live() const { return live_; }
  ad::Tape& tape() const { return tape_; }

  /// New states, attached to the forward kernel when reparameterized.
  [[nodiscard]] ad::Var z() const { return z_; }
  /// New states as constants.
  [[nodiscard]] ad::Var z_bar() const { return z_bar_; }
  [[nodiscard]] ad::Var z_prev() const { return z_prev_; }

  /// log γ_k(z).
  ad::Var log_gamma();
  /// log γ_k(z̄).
  ad::Var log_gamma_bar();
  /// log γ_{k-1}(z_{k-1}).
  ad::Var log_gamma_prev();
  /// log q_k(z | z_{k-1}); for flows, log|det J|.
  ad::Var log_forward();
  /// log q_k(z | z_{k-1}) with the kernel parameters held constant.
  ad::Var log_forward_stl();
  /// log q_k(z̄ | z_{k-1}).
  ad::Var log_forward_bar();
  /// log r_{k-1}(z_{k-1} | z).
  ad::Var log_reverse();
  /// log r_{k-1}(z_{k-1} | z̄).
  ad::Var log_reverse_bar();

  /// Incremental log-weights (values).
  const ad::Vector& log_v();
  [[nodiscard]] IncrementalWeightRecord record();

 private:
  ad::Tape& tape_;
  const DensitySequence& seq_;
  Transition transition_;
  int level_;
  LiveSet live_;
  ad::Var z_prev_;
  ad::Var z_;
  ad::Var z_bar_;
  ad::Var sample_log_term_;
  std::optional<ad::Var> log_gamma_;
  std::optional<ad::Var> log_gamma_bar_;
  std::optional<ad::Var> log_gamma_prev_;
  std::optional<ad::Var> log_forward_stl_;
  std::optional<ad::Var> log_forward_bar_;
  std::optional<ad::Var> log_reverse_;
  std::optional<ad::Var> log_reverse_bar_;
  std::optional<ad::Vector> log_v_;
};

/// Draws S particles from the initial proposal and weights them against γ_1.
ParticleSystem init(const DiagGaussianDensity& initial, const DensitySequence& seq, const ad::Matrix& noise);

/// Extends a level-(k-1) system to level k. Throws on level mismatch or when
/// a stochastic forward kernel has no reverse kernel.
std::pair<ParticleSystem, IncrementalWeightRecord> extend(const ParticleSystem& ps, const DensitySequence& seq,
                                                          const Transition& transition, const ad::Matrix& noise,
                                                          int level);

/// Systematic resampling offsets for normalized weights and a single uniform u.
std::vector<int> systematic_indices(const ad::Vector& normalized_weights, double u);

/// Systematic resampling. New log-weights all equal the log-mean of the
/// incoming weights so the running normalizer estimate is preserved.
ParticleSystem resample_systematic(const ParticleSystem& ps, rng::Stream& stream);

/// (Σ w)^2 / Σ w^2 from log-weights.
double ess(const ad::Vector& log_w);
double ess(const ParticleSystem& ps);

/// log of the mean weight.
double log_Z_hat(const ad::Vector& log_w);
double log_Z_hat(const ParticleSystem& ps);

/// Raised when no particle carries finite weight, typically after parameters diverge.
class DegenerateWeightsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalized weights exp(log_w - logsumexp(log_w)). Throws
/// DegenerateWeightsError when the log weights have no finite mass.
ad::Vector normalized_weights(const ad::Vector& log_w);

enum class ResamplePolicy { never, always, adaptive };

struct SamplerConfig {
  int S = 100;
  ResamplePolicy resample = ResamplePolicy::never;
  double adaptive_threshold = 0.5;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
};

struct SequenceResult {
  ParticleSystem final;
  std::vector<IncrementalWeightRecord> records;
  /// System at each level before any resampling, levels 1..K.
  std::vector<ParticleSystem> pre_resample;
  /// Whether the system was resampled after level k (index k-1).
  std::vector<bool> resampled;
};

/// Whether a policy resamples a system with the given ESS.
bool should_resample(ResamplePolicy policy, double ess_value, Eigen::Index S, double threshold);

/// init, then extend and optionally resample for levels 2..K. Never resamples
/// after the final level. `transitions[k-2]` holds the kernels of level k.
SequenceResult run_sequence(const SamplerConfig& config, const DiagGaussianDensity& initial,
                            const DensitySequence& seq, const std::vector<Transition>& transitions);

}  // namespace nvi

#endif
