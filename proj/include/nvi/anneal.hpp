#ifndef NVI_ANNEAL_HPP
#define NVI_ANNEAL_HPP

#include "nvi/kernels.hpp"
#include "nvi/objectives.hpp"
#include "nvi/sampler.hpp"
#include "nvi/targets.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace nvi {

/// Training recipes for the ring-mixture annealing experiment.
enum class Method { svi, avo, nvi, nvir, nvi_star, nvir_star, avo_flow, nvi_star_flow };

struct MethodTraits {
  bool learned_schedule = false;
  bool resample = false;
  bool flow = false;
  Weighting weighting = Weighting::incoming;
};

MethodTraits method_traits(Method m);
Method parse_method(const std::string& name);
std::string method_name(Method m);

struct AnnealConfig {
  Method method = Method::nvir_star;
  int K = 8;
  int S = 36;
  int iterations = 20000;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int hidden = 50;
  HiddenActivation activation = HiddenActivation::tanh;
  double output_scale = 1.0;
  int flow_layers = 32;
  double flow_u_scale = 0.01;
  int modes = 8;
  double radius = 10.0;
  double variance = 0.5;
  double initial_stddev = 5.0;
  bool stl = true;
  bool baseline = true;
  /// Overrides the method's resampling behaviour when set.
  std::optional<ResamplePolicy> resample;
  /// Overrides whether the method learns its annealing schedule.
  std::optional<bool> learned_schedule;
  double adaptive_threshold = 0.5;
};

struct EvalSummary {
  std::vector<double> log_Z_hat;
  std::vector<double> ess;
  [[nodiscard]] double mean_log_Z() const;
  [[nodiscard]] double sd_log_Z() const;
  [[nodiscard]] double mean_ess() const;
  [[nodiscard]] double sd_ess() const;
};

/// Owns targets, kernels, schedule and optimizer state for one training run.
class AnnealExperiment {
 public:
  explicit AnnealExperiment(const AnnealConfig& config);

  [[nodiscard]] const AnnealConfig& config() const { return config_; }
  [[nodiscard]] const MethodTraits& traits() const { return traits_; }
  ParameterStore& store() { return store_; }
  [[nodiscard]] const RingGmm& target() const { return *target_; }
  [[nodiscard]] const AnnealedSequence& sequence() const { return *sequence_; }
  [[nodiscard]] const AnnealingPath& path() const { return *path_; }
  [[nodiscard]] const std::vector<Transition>& transitions() const { return transitions_; }
  [[nodiscard]] ResamplePolicy resample_policy() const;

  /// One optimisation step at the given iteration index.
  StepDiagnostics step(std::uint64_t iteration);
  /// Runs config.iterations steps; the callback sees each step and may
  /// return false to stop early.
  void train(const std::function<bool(std::uint64_t, const StepDiagnostics&)>& callback = {});

  /// Evaluation batches with the method's resampling policy unless `policy`
  /// is given. ESS and log Ẑ are computed from the final weights before any
  /// resampling.
  [[nodiscard]] EvalSummary evaluate(int batches, int batch_size, std::uint64_t seed,
                                     std::optional<ResamplePolicy> policy = std::nullopt) const;
  /// Final-level particles from `batches` independent runs.
  [[nodiscard]] ad::Matrix final_samples(int batches, int batch_size, std::uint64_t seed) const;
  /// Per-level particles (levels 1..K) of a single run.
  [[nodiscard]] std::vector<ad::Matrix> level_samples(int S, std::uint64_t seed) const;
  /// Stepwise KL(π_{k-1} || π_k) of the current schedule by quadrature.
  [[nodiscard]] std::vector<double> quadrature_kls(const Grid2d& grid = {}) const;

 private:
  AnnealConfig config_;
  MethodTraits traits_;
  ParameterStore store_;
  std::unique_ptr<DiagGaussianDensity> initial_;
  std::unique_ptr<RingGmm> target_;
  std::unique_ptr<AnnealingPath> path_;
  std::unique_ptr<AnnealedSequence> sequence_;
  std::vector<std::unique_ptr<TransitionKernel>> kernels_;
  std::vector<Transition> transitions_;
  std::vector<ad::Parameter*> trainable_;
  TrainingPolicy policy_;
  BaselineState baselines_;
  AdamOptions adam_;
  AdamState adam_state_;
};

}  // namespace nvi

#endif
