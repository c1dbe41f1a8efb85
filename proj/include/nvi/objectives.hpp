#ifndef NVI_OBJECTIVES_HPP
#define NVI_OBJECTIVES_HPP

#include "nvi/parameters.hpp"
#include "nvi/sampler.hpp"

#include <map>
#include <string>
#include <vector>

namespace nvi {

enum class Divergence { reverse_kl, forward_kl };

/// How expectations under the incoming samples are weighted. `incoming`
/// uses the normalized incoming importance weights (nested VI); `proposal`
/// treats the incoming samples as unweighted draws, as annealed variational
/// objectives do.
enum class Weighting { incoming, proposal };

/// Per-level exponential moving average of log v_k, fed only detached values.
class BaselineState {
 public:
  explicit BaselineState(double decay = 0.99) : decay_(decay) {}
  [[nodiscard]] double value(int level) const;
  [[nodiscard]] bool initialized(int level) const { return values_.count(level) != 0; }
  void update(int level, double mean_log_v);
  [[nodiscard]] double decay() const { return decay_; }

 private:
  double decay_;
  std::map<int, double> values_;
};

enum class ExpectationKind {
  /// E under π̂_k, i.e. the incoming weights w_{k-1}.
  proposal,
  /// E under π̌_k, i.e. the outgoing weights w_{k-1} v_k.
  target,
};

/// Self-normalized estimate of E[g] from detached log-weights.
double snis_expectation(const ad::Vector& log_w_prev, const ad::Vector& log_v, const ad::Vector& g,
                        ExpectationKind kind);

/// Everything needed to record one level: incoming particles, their
/// weights and the noise for the new draws.
struct LevelInputs {
  const DensitySequence* seq = nullptr;
  Transition transition;
  ad::Matrix z_prev;
  ad::Vector log_w_prev;
  ad::Matrix noise;
  int level = 2;
};

struct EstimatorOptions {
  /// Sever the score term of q_k inside the pathwise reverse-KL gradient.
  bool stl = true;
  /// Subtract `baseline` from log v_k in score-function terms.
  bool use_baseline = false;
  double baseline = 0.0;
  /// Permit the forward-KL gradients w.r.t. reverse kernels and targets.
  bool experimental = false;
  Weighting weighting = Weighting::incoming;
  /// Use the score-function form for the forward kernel even when a
  /// reparameterized path exists.
  bool score_forward = false;
};

/// Gradient (of the level divergence, i.e. the descent direction) for every
/// parameter that received one, keyed by parameter name.
struct GradientEstimate {
  std::map<std::string, ad::Matrix> grads;
  double loss_estimate = 0.0;
  double mean_log_v = 0.0;
  double baseline = 0.0;
  double ess = 0.0;

  /// Gradient of the named parameter, or an empty matrix.
  [[nodiscard]] ad::Matrix get(const std::string& name) const;
};

/// Which sides of a level divergence receive gradient.
struct LevelTargets {
  /// ρ̂_k: forward kernel φ̂_k and previous target θ_{k-1}.
  bool forward_kernel = false;
  bool target_prev = false;
  /// ρ̌_k: reverse kernel φ̌_k and current target θ_k.
  bool reverse_kernel = false;
  bool target = false;
};

/// Records one level and returns the surrogate whose gradient is the
/// estimator of d/dρ D(π̌_k || π̂_k) or d/dρ D(π̂_k || π̌_k) for the selected
/// parameter sides. `graph` is recorded on `tape`.
ad::Var level_surrogate(LevelGraph& graph, const ad::Vector& log_w_prev, Divergence divergence,
                        const LevelTargets& targets, const EstimatorOptions& options);

/// Estimates the level divergence itself from detached values:
/// reverse: E_π̂[-log v] + log R, forward: E_π̌[log v] - log R.
double level_loss_estimate(const ad::Vector& log_w_prev, const ad::Vector& log_v, Divergence divergence,
                           Weighting weighting);

GradientEstimate grad_fwd_kl_wrt_forward(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options = {});
/// Refuses unless options.experimental is set.
GradientEstimate grad_fwd_kl_wrt_reverse(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options = {});
GradientEstimate grad_rev_kl_wrt_forward(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options = {});
GradientEstimate grad_rev_kl_wrt_reverse(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options = {});

enum class FDivergence { reverse_kl, forward_kl };

/// General f-divergence gradient with w = v_k Z_{k-1} / Z_k estimated as
/// v_k / Σ ω v. The forward kernel uses the pathwise form for reverse_kl and
/// the score form for forward_kl.
GradientEstimate grad_f_divergence(const LevelInputs& in, FDivergence kind, ParameterStore& store,
                                   const LevelTargets& targets);
FDivergence parse_f_divergence(const std::string& name);

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<ad::Matrix> m;
  std::vector<ad::Matrix> v;
  long t = 0;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update of `params` from their accumulated grads. An empty state
/// is initialised on first use; otherwise shapes must match.
void adam_step(const std::vector<ad::Parameter*>& params, const AdamOptions& options, AdamState& state);

// ---------------------------------------------------------------------------
// Training step

struct LevelPolicy {
  Divergence divergence = Divergence::reverse_kl;
  LevelTargets update{true, true, true, true};
  bool stl = true;
  bool experimental = false;
};

struct TrainingPolicy {
  LevelPolicy level;
  ResamplePolicy resample = ResamplePolicy::never;
  double adaptive_threshold = 0.5;
  Weighting weighting = Weighting::incoming;
  bool use_baseline = true;
  /// Include D(π_1 || q_1) when the initial proposal is learnable.
  bool train_initial = false;
};

struct NviModel {
  DiagGaussianDensity* initial = nullptr;
  const DensitySequence* seq = nullptr;
  std::vector<Transition> transitions;
  ParameterStore* store = nullptr;
};

struct LevelDiagnostics {
  int level = 0;
  double loss_estimate = 0.0;
  double ess = 0.0;
  double log_Z_hat = 0.0;
  double baseline = 0.0;
  double mean_log_v = 0.0;
  double var_log_v = 0.0;
  bool resampled = false;
};

struct StepDiagnostics {
  std::vector<LevelDiagnostics> levels;
  double log_Z_hat = 0.0;
  double ess = 0.0;
  bool finite = true;
};

/// One pass of the sampler with level-local gradient accumulation, followed
/// by an Adam update of `trainable` when `adam` is given. Each level is
/// recorded on its own tape from detached incoming particles.
StepDiagnostics nvi_step(const NviModel& model, const TrainingPolicy& policy, int S, std::uint64_t seed,
                         std::uint64_t iteration, BaselineState& baselines, const std::vector<ad::Parameter*>& trainable,
                         const AdamOptions* adam, AdamState* adam_state);

}  // namespace nvi

#endif
