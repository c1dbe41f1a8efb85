#include "nvi/anneal.hpp"

#include <cmath>
#include <stdexcept>

namespace nvi {

MethodTraits method_traits(Method m) {
  switch (m) {
    case Method::svi: return {false, false, false, Weighting::incoming};
    case Method::avo: return {false, false, false, Weighting::proposal};
    case Method::nvi: return {false, false, false, Weighting::incoming};
    case Method::nvir: return {false, true, false, Weighting::incoming};
    case Method::nvi_star: return {true, false, false, Weighting::incoming};
    case Method::nvir_star: return {true, true, false, Weighting::incoming};
    case Method::avo_flow: return {false, false, true, Weighting::proposal};
    case Method::nvi_star_flow: return {true, false, true, Weighting::incoming};
  }
  return {};
}

Method parse_method(const std::string& name) {
  static const std::pair<const char*, Method> table[] = {
      {"svi", Method::svi},           {"avo", Method::avo},         {"nvi", Method::nvi},
      {"nvir", Method::nvir},         {"nvi_star", Method::nvi_star}, {"nvir_star", Method::nvir_star},
      {"avo_flow", Method::avo_flow}, {"nvi_star_flow", Method::nvi_star_flow},
  };
  for (const auto& [key, m] : table) {
    if (name == key) {
      return m;
    }
  }
  throw std::invalid_argument("unknown method: " + name);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::svi: return "svi";
    case Method::avo: return "avo";
    case Method::nvi: return "nvi";
    case Method::nvir: return "nvir";
    case Method::nvi_star: return "nvi_star";
    case Method::nvir_star: return "nvir_star";
    case Method::avo_flow: return "avo_flow";
    case Method::nvi_star_flow: return "nvi_star_flow";
  }
  return "unknown";
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) {
    s += x;
  }
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) {
    return 0.0;
  }
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) {
    s += (x - m) * (x - m);
  }
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

double EvalSummary::mean_log_Z() const { return mean_of(log_Z_hat); }
double EvalSummary::sd_log_Z() const { return sd_of(log_Z_hat); }
double EvalSummary::mean_ess() const { return mean_of(ess); }
double EvalSummary::sd_ess() const { return sd_of(ess); }

AnnealExperiment::AnnealExperiment(const AnnealConfig& config) : config_(config), traits_(method_traits(config.method)) {
  if (config.learned_schedule) {
    traits_.learned_schedule = *config.learned_schedule;
  }
  if (config.K < 2) {
    throw std::invalid_argument("K must be at least 2");
  }
  if (config.method == Method::svi && config.K != 2) {
    throw std::invalid_argument("svi has no intermediate densities and requires K = 2");
  }
  if (config.S < 1) {
    throw std::invalid_argument("S must be positive");
  }
  initial_ = make_initial_proposal(2, config.initial_stddev);
  target_ = std::make_unique<RingGmm>(config.modes, config.radius, config.variance);
  path_ = traits_.learned_schedule ? std::make_unique<AnnealingPath>(config.K, store_)
                                   : std::make_unique<AnnealingPath>(config.K);
  sequence_ = std::make_unique<AnnealedSequence>(*initial_, *target_, *path_);

  MlpKernelOptions mlp;
  mlp.hidden = config.hidden;
  mlp.activation = config.activation;
  mlp.output_scale = config.output_scale;
  for (int k = 2; k <= config.K; ++k) {
    Transition t;
    if (traits_.flow) {
      kernels_.push_back(std::make_unique<PlanarFlowStack>(store_, forward_group(k), "q" + std::to_string(k), 2,
                                                           config.flow_layers, config.seed, config.flow_u_scale));
      t.forward = kernels_.back().get();
    } else {
      kernels_.push_back(
          std::make_unique<GaussianMlpKernel>(store_, forward_group(k), "q" + std::to_string(k), 2, config.seed, mlp));
      t.forward = kernels_.back().get();
      kernels_.push_back(std::make_unique<GaussianMlpKernel>(store_, reverse_group(k - 1), "r" + std::to_string(k - 1),
                                                             2, config.seed, mlp));
      t.reverse = kernels_.back().get();
    }
    transitions_.push_back(t);
  }
  trainable_ = store_.all();

  policy_.level.divergence = Divergence::reverse_kl;
  policy_.level.update = LevelTargets{true, traits_.learned_schedule, !traits_.flow, traits_.learned_schedule};
  policy_.level.stl = config.stl;
  policy_.resample = resample_policy();
  policy_.adaptive_threshold = config.adaptive_threshold;
  policy_.weighting = traits_.weighting;
  policy_.use_baseline = config.baseline;
  adam_.lr = config.lr;
}

ResamplePolicy AnnealExperiment::resample_policy() const {
  if (config_.resample) {
    return *config_.resample;
  }
  return traits_.resample ? ResamplePolicy::always : ResamplePolicy::never;
}

StepDiagnostics AnnealExperiment::step(std::uint64_t iteration) {
  NviModel model{initial_.get(), sequence_.get(), transitions_, &store_};
  return nvi_step(model, policy_, config_.S, config_.seed, iteration, baselines_, trainable_, &adam_, &adam_state_);
}

void AnnealExperiment::train(const std::function<bool(std::uint64_t, const StepDiagnostics&)>& callback) {
  for (int it = 0; it < config_.iterations; ++it) {
    const StepDiagnostics d = step(static_cast<std::uint64_t>(it));
    if (callback && !callback(static_cast<std::uint64_t>(it), d)) {
      return;
    }
  }
}

EvalSummary AnnealExperiment::evaluate(int batches, int batch_size, std::uint64_t seed,
                                       std::optional<ResamplePolicy> policy) const {
  EvalSummary out;
  SamplerConfig sc;
  sc.S = batch_size;
  sc.resample = policy.value_or(resample_policy());
  sc.adaptive_threshold = config_.adaptive_threshold;
  sc.seed = seed;
  for (int b = 0; b < batches; ++b) {
    sc.iteration = static_cast<std::uint64_t>(b);
    const SequenceResult r = run_sequence(sc, *initial_, *sequence_, transitions_);
    out.log_Z_hat.push_back(log_Z_hat(r.final));
    out.ess.push_back(ess(r.final));
  }
  return out;
}

ad::Matrix AnnealExperiment::final_samples(int batches, int batch_size, std::uint64_t seed) const {
  ad::Matrix out(static_cast<Eigen::Index>(batches) * batch_size, 2);
  SamplerConfig sc;
  sc.S = batch_size;
  sc.resample = resample_policy();
  sc.adaptive_threshold = config_.adaptive_threshold;
  sc.seed = seed;
  for (int b = 0; b < batches; ++b) {
    sc.iteration = static_cast<std::uint64_t>(b);
    const SequenceResult r = run_sequence(sc, *initial_, *sequence_, transitions_);
    out.middleRows(static_cast<Eigen::Index>(b) * batch_size, batch_size) = r.final.z;
  }
  return out;
}

std::vector<ad::Matrix> AnnealExperiment::level_samples(int S, std::uint64_t seed) const {
  SamplerConfig sc;
  sc.S = S;
  sc.resample = resample_policy();
  sc.seed = seed;
  const SequenceResult r = run_sequence(sc, *initial_, *sequence_, transitions_);
  std::vector<ad::Matrix> out;
  for (const ParticleSystem& ps : r.pre_resample) {
    out.push_back(ps.z);
  }
  return out;
}

std::vector<double> AnnealExperiment::quadrature_kls(const Grid2d& grid) const {
  return quadrature_stepwise_kl(*sequence_, grid);
}

}  // namespace nvi
