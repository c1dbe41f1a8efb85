#ifndef NVI_HMM_HPP
#define NVI_HMM_HPP

#include "nvi/objectives.hpp"
#include "nvi/parameters.hpp"
#include "nvi/rng.hpp"
#include "nvi/tape.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

/// Hidden Markov models with Gaussian-mixture emissions and a NormalGamma
/// prior over the cluster parameters, together with the nested importance
/// sampler that proposes η once and then one discrete state per time step.
namespace nvi::hmm {

struct HmmSpec {
  int M = 4;
  int K = 20;
  double alpha0 = 8.0;
  double beta0 = 8.0;
  double mu0 = 0.0;
  double nu0 = 0.001;
  /// Initial state distribution, length M.
  ad::Vector pi;
  /// Row-stochastic transition matrix, M x M.
  ad::Matrix A;

  /// Uniform π and a transition matrix with `stay` on the diagonal and the
  /// remaining mass spread evenly over the other states.
  static HmmSpec standard(int K = 20, int M = 4, double stay = 0.9);
  /// Throws std::invalid_argument on inconsistent shapes or parameters.
  void validate() const;
};

/// Cluster means μ_m and precisions τ_m.
struct Eta {
  ad::Vector mu;
  ad::Vector tau;
};

struct HmmInstance {
  ad::Vector x;
  std::vector<int> z;
  Eta eta;
};

/// `n` independent instances; instance i draws from its own stream so any
/// prefix of a larger simulation is reproduced exactly.
std::vector<HmmInstance> simulate(const HmmSpec& spec, std::uint64_t seed, int n);

/// log NormalGamma(μ, τ; μ0, ν, α, β) with τ a precision and rate β.
double normal_gamma_log_density(double mu, double tau, double mu0, double nu, double alpha, double beta);
double log_prior(const HmmSpec& spec, const Eta& eta);
/// log N(x; μ, 1/τ).
double log_normal_precision(double x, double mu, double tau);
/// log p(x_{1:k}, z_{1:k} | η); z needs at least k entries.
double log_joint_given_eta(const HmmSpec& spec, const ad::Vector& x, const std::vector<int>& z, const Eta& eta, int k);
/// log p(x_{1:K} | η) by the forward algorithm.
double log_marginal_likelihood(const HmmSpec& spec, const ad::Vector& x, const Eta& eta);
/// K x M matrix whose row k-1 holds log p(x_{k+1:K} | z_k = m, η); the last row is zero.
ad::Matrix log_backward_messages(const HmmSpec& spec, const ad::Vector& x, const Eta& eta);

/// Affine standardization applied to network inputs.
struct InputScaling {
  double center = 0.0;
  double scale = 1.0;
  static InputScaling of(const ad::Vector& x);
};

// ---------------------------------------------------------------------------
// Heuristic factors ψ(x_{k:K} | η)
// ---------------------------------------------------------------------------

enum class HeuristicKind { none, gmm, neural };
HeuristicKind parse_heuristic(const std::string& name);
std::string heuristic_name(HeuristicKind kind);

class Heuristic {
 public:
  virtual ~Heuristic() = default;
  /// S x (K+1) matrix whose column j holds log ψ(x_{j+1:K} | η_s); the last
  /// column is zero. `mu` and `tau` are S x M.
  virtual ad::Var log_suffix(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                             bool live) const = 0;
};

/// ψ that factorizes over time as Π_l T_l(η); subclasses supply log T_l.
class PointwiseHeuristic : public Heuristic {
 public:
  ad::Var log_suffix(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                     bool live) const override;
  /// S x K matrix of log T_l(η_s).
  virtual ad::Var log_point_terms(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                                  bool live) const = 0;
};

/// S x K matrix of log N(x_l; μ_m, τ_m) stacked as (S*K) x M, row s*K + l.
ad::Matrix emission_table(const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau);

class NoHeuristic : public Heuristic {
 public:
  ad::Var log_suffix(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                     bool live) const override;
};

/// T_l = Σ_m p(z = m) N(x_l; μ_m, τ_m) with p the initial state distribution.
class GmmHeuristic : public PointwiseHeuristic {
 public:
  explicit GmmHeuristic(const ad::Vector& weights);
  ad::Var log_point_terms(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                          bool live) const override;

 private:
  ad::Vector log_weights_;
};

/// Single hidden layer tanh network, rows are independent inputs.
class Mlp {
 public:
  Mlp(ParameterStore& store, const GroupId& group, const std::string& prefix, int in, int hidden, int out,
      rng::Stream& init);
  ad::Var operator()(ad::Tape& tape, ad::Var x, bool live) const;

 private:
  ad::Parameter* W1_;
  ad::Parameter* b1_;
  ad::Parameter* W2_;
  ad::Parameter* b2_;
};

/// T_l = Σ_m N(x_l; μ_m, τ_m) ψ(z_l = m | η, x_l), where the mixture weights
/// are a softmax over m of a network applied to (x_l, μ_m, log τ_m).
class NeuralHeuristic : public PointwiseHeuristic {
 public:
  NeuralHeuristic(ParameterStore& store, int hidden, std::uint64_t init_seed);
  ad::Var log_point_terms(ad::Tape& tape, const ad::Vector& x, const ad::Matrix& mu, const ad::Matrix& tau,
                          bool live) const override;

 private:
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

/// S draws of η with their proposal log-density (S x 1) recorded on the tape.
struct EtaDraw {
  ad::Matrix mu;
  ad::Matrix tau;
  ad::Var log_q;
};

class EtaProposal {
 public:
  virtual ~EtaProposal() = default;
  virtual EtaDraw draw(ad::Tape& tape, const ad::Vector& x, int S, rng::Stream& rng, bool live) const = 0;
};

/// Per-cluster NormalGamma parameters as 1 x M tape values.
struct NormalGammaParams {
  ad::Var alpha;
  ad::Var beta;
  ad::Var mu;
  ad::Var nu;
};

/// Samples S x M (μ, τ) from independent NormalGammas.
void sample_normal_gamma(const NormalGammaParams& p, int S, rng::Stream& rng, ad::Matrix& mu, ad::Matrix& tau);
/// Row-wise sum over clusters of the NormalGamma log-density; S x 1.
ad::Var normal_gamma_log_density(const NormalGammaParams& p, const ad::Matrix& mu, const ad::Matrix& tau);

/// The prior itself; has no parameters.
class PriorEtaProposal : public EtaProposal {
 public:
  explicit PriorEtaProposal(const HmmSpec& spec) : spec_(spec) {}
  EtaDraw draw(ad::Tape& tape, const ad::Vector& x, int S, rng::Stream& rng, bool live) const override;

 private:
  HmmSpec spec_;
};

/// Point mass at a given η; log q is zero.
class FixedEtaProposal : public EtaProposal {
 public:
  explicit FixedEtaProposal(Eta eta) : eta_(std::move(eta)) {}
  EtaDraw draw(ad::Tape& tape, const ad::Vector& x, int S, rng::Stream& rng, bool live) const override;

 private:
  Eta eta_;
};

/// NormalGamma proposal whose parameters come from neural sufficient
/// statistics: soft cluster assignments t_lm of each observation give
/// per-cluster features (Σ t, Σ t x, Σ t x²) / K, and four shared heads map
/// them to (α, β, μ, ν) with α, β, ν exponentiated.
class NeuralEtaProposal : public EtaProposal {
 public:
  NeuralEtaProposal(ParameterStore& store, int M, int hidden, std::uint64_t init_seed);
  EtaDraw draw(ad::Tape& tape, const ad::Vector& x, int S, rng::Stream& rng, bool live) const override;
  NormalGammaParams parameters(ad::Tape& tape, const ad::Vector& x, bool live) const;

 private:
  int M_;
  Mlp assign_;
  Mlp head_alpha_;
  Mlp head_beta_;
  Mlp head_mu_;
  Mlp head_nu_;
};

/// Categorical proposal for z_k given the previous state and η.
class StateProposal {
 public:
  virtual ~StateProposal() = default;
  /// S x M log-probabilities for z_k (k is 1-based). `z_prev` is empty when k = 1.
  virtual ad::Var log_probs(ad::Tape& tape, const ad::Vector& x, int k, const std::vector<int>& z_prev,
                            const ad::Matrix& mu, const ad::Matrix& tau, bool live) const = 0;
};

/// The model's own transition p(z_k | z_{k-1}).
class PriorStateProposal : public StateProposal {
 public:
  explicit PriorStateProposal(const HmmSpec& spec) : spec_(spec) {}
  ad::Var log_probs(ad::Tape& tape, const ad::Vector& x, int k, const std::vector<int>& z_prev, const ad::Matrix& mu,
                    const ad::Matrix& tau, bool live) const override;

 private:
  HmmSpec spec_;
};

/// p(z_k | z_{k-1}, x_{k:K}, η), the exact smoothing conditional.
class ExactStateProposal : public StateProposal {
 public:
  explicit ExactStateProposal(const HmmSpec& spec) : spec_(spec) {}
  ad::Var log_probs(ad::Tape& tape, const ad::Vector& x, int k, const std::vector<int>& z_prev, const ad::Matrix& mu,
                    const ad::Matrix& tau, bool live) const override;

 private:
  HmmSpec spec_;
};

/// Softmax over m of a network applied to (x_k, μ_m, log τ_m) at k = 1 and
/// to (x_k, [z_{k-1} = m], μ_m, log τ_m) afterwards.
class NeuralStateProposal : public StateProposal {
 public:
  NeuralStateProposal(ParameterStore& store, int hidden, std::uint64_t init_seed);
  ad::Var log_probs(ad::Tape& tape, const ad::Vector& x, int k, const std::vector<int>& z_prev, const ad::Matrix& mu,
                    const ad::Matrix& tau, bool live) const override;

 private:
  Mlp first_;
  Mlp next_;
};

// ---------------------------------------------------------------------------
// Density sequence and sampler
// ---------------------------------------------------------------------------

struct HmmModel {
  const HmmSpec* spec = nullptr;
  const EtaProposal* eta = nullptr;
  const StateProposal* states = nullptr;
  const Heuristic* heuristic = nullptr;
};

/// log γ_k = log p(x_{1:k}, z_{1:k}, η) + log ψ(x_{k+1:K} | η) for 0 <= k <= K.
ad::Var log_gamma(ad::Tape& tape, const HmmSpec& spec, const Heuristic& heuristic, const ad::Vector& x,
                  const std::vector<int>& z, const Eta& eta, int k, bool live);

enum class GradientMode { partial, full };

/// Which gradients to accumulate while running the sampler.
struct GradientRequest {
  GradientMode mode = GradientMode::partial;
  /// Required for GradientMode::full.
  bool experimental = false;
  /// Multiplies the surrogate before backward, e.g. 1 / batch size.
  double scale = 1.0;
  bool proposals = true;
  bool heuristic = true;
};

struct RunOptions {
  int S = 32;
  bool resample = true;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t instance = 0;
};

struct RunResult {
  /// Incremental log-weights per level 0..K (level 0 is the η weight).
  std::vector<ad::Vector> log_v;
  /// Per-level forward KL estimate Σ ω̃ log v − log Σ ω v.
  std::vector<double> level_kl;
  /// Final log-weights before any resampling.
  ad::Vector log_w;
  double log_Z_hat = 0.0;
  double ess = 0.0;
  /// False when a weight became NaN or all weights vanished; no gradient is applied then.
  bool finite = true;
  /// Final particle paths, S rows of K states, and their η.
  std::vector<std::vector<int>> paths;
  ad::Matrix mu;
  ad::Matrix tau;
};

/// Runs the nested sampler on one sequence. With `grad` set, the surrogate
/// of every level is recorded on `tape` and backpropagated into the
/// parameters' grads; without it nothing is differentiated.
RunResult run_instance(const HmmModel& model, const ad::Vector& x, const RunOptions& options, ad::Tape& tape,
                       const GradientRequest* grad = nullptr);

// ---------------------------------------------------------------------------
// Training and evaluation
// ---------------------------------------------------------------------------

struct HmmConfig {
  HeuristicKind heuristic = HeuristicKind::neural;
  int S = 32;
  int batch = 10;
  int iterations = 1000;
  int hidden = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool resample = true;
  GradientMode mode = GradientMode::partial;
  bool experimental = false;
};

struct HmmStepDiagnostics {
  double mean_log_Z_hat = 0.0;
  double mean_ess = 0.0;
  double mean_kl = 0.0;
  bool finite = true;
};

struct HmmEvalRow {
  int instance = 0;
  double log_Z_hat = 0.0;
  double ess = 0.0;
};

/// Owns the proposals, heuristic and optimizer for one heuristic variant.
class HmmExperiment {
 public:
  HmmExperiment(const HmmSpec& spec, const HmmConfig& config);

  [[nodiscard]] const HmmSpec& spec() const { return spec_; }
  [[nodiscard]] const HmmConfig& config() const { return config_; }
  ParameterStore& store() { return store_; }
  [[nodiscard]] HmmModel model() const;

  /// One Adam update from the given instances. Throws std::logic_error for
  /// full optimization without the experimental flag.
  HmmStepDiagnostics partial_grad_step(const std::vector<const HmmInstance*>& batch, std::uint64_t iteration);
  /// config.iterations steps over mini-batches drawn from `train`.
  void train(const std::vector<HmmInstance>& train,
             const std::function<bool(std::uint64_t, const HmmStepDiagnostics&)>& callback = {});
  [[nodiscard]] std::vector<HmmEvalRow> evaluate(const std::vector<HmmInstance>& instances, int S, std::uint64_t seed,
                                                 bool resample = true) const;

 private:
  HmmSpec spec_;
  HmmConfig config_;
  ParameterStore store_;
  std::unique_ptr<NeuralEtaProposal> eta_;
  std::unique_ptr<NeuralStateProposal> states_;
  std::unique_ptr<Heuristic> heuristic_;
  std::vector<ad::Parameter*> trainable_;
  AdamOptions adam_;
  AdamState adam_state_;
};

/// One-sided paired t-test of mean(a - b) > 0; returns the p-value.
double paired_t_test_greater(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace nvi::hmm

#endif
