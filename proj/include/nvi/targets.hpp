#ifndef NVI_TARGETS_HPP
#define NVI_TARGETS_HPP

#include "nvi/parameters.hpp"
#include "nvi/tape.hpp"

#include <memory>
#include <vector>

namespace nvi {

/// Role interface for an unnormalized log-density log γ(z; θ).
/// `z` is S x dim, the result is S x 1. With `live == false` any parameters
/// enter as constants.
class UnnormalizedDensity {
 public:
  virtual ~UnnormalizedDensity() = default;
  [[nodiscard]] virtual int dim() const = 0;
  virtual ad::Var log_density(ad::Tape& tape, ad::Var z, bool live) const = 0;

  /// Value-only evaluation on a private tape.
  [[nodiscard]] ad::Vector log_density(const ad::Matrix& z) const;

 protected:
  void check_dim(ad::Var z, const char* who) const;
};

/// Isotropic or diagonal normal with optional learnable mean and log-stddev.
/// Serves as the initial proposal q_1 (normalized, reparameterizable).
class DiagGaussianDensity : public UnnormalizedDensity {
 public:
  DiagGaussianDensity(ad::Vector mean, ad::Vector stddev);

  /// Registers mean and log-stddev in `group` so they can be trained.
  void make_learnable(ParameterStore& store, const GroupId& group, const std::string& prefix);

  [[nodiscard]] int dim() const override { return static_cast<int>(mean_.size()); }
  ad::Var log_density(ad::Tape& tape, ad::Var z, bool live) const override;
  using UnnormalizedDensity::log_density;

  /// z = mean + stddev * noise, differentiable in the parameters when live.
  ad::Var sample(ad::Tape& tape, ad::Var noise, bool live) const;

  [[nodiscard]] ad::Vector mean() const;
  [[nodiscard]] ad::Vector stddev() const;

 private:
  ad::Var mean_var(ad::Tape& tape, bool live) const;
  ad::Var stddev_var(ad::Tape& tape, bool live) const;

  ad::Vector mean_;
  ad::Vector stddev_;
  ad::Parameter* mean_param_ = nullptr;
  ad::Parameter* log_std_param_ = nullptr;
};

/// Standard initial proposal for the annealing experiment: N(0, 5^2 I) in 2-D.
std::unique_ptr<DiagGaussianDensity> make_initial_proposal(int dim = 2, double stddev = 5.0);

/// Unnormalized sum of M isotropic Gaussians spaced evenly on a circle.
class RingGmm : public UnnormalizedDensity {
 public:
  RingGmm(int modes = 8, double radius = 10.0, double variance = 0.5);

  [[nodiscard]] int dim() const override { return 2; }
  ad::Var log_density(ad::Tape& tape, ad::Var z, bool live) const override;
  using UnnormalizedDensity::log_density;

  [[nodiscard]] int modes() const { return modes_; }
  [[nodiscard]] double radius() const { return radius_; }
  [[nodiscard]] double variance() const { return variance_; }
  /// M x 2 matrix of mode centres.
  [[nodiscard]] const ad::Matrix& means() const { return means_; }
  /// Index of the nearest mode for each row of z.
  [[nodiscard]] std::vector<int> nearest_mode(const ad::Matrix& z) const;

 private:
  int modes_;
  double radius_;
  double variance_;
  ad::Matrix means_;
};

/// Analytic log normalizer of the ring mixture, log M.
double ring_log_Z(const RingGmm& target);

/// Annealing coefficients for densities 2..K of a K-density sequence; density
/// 1 is the initial proposal itself. Learnable paths map K-1 unconstrained
/// values through softmax and a cumulative sum so the coefficients are
/// strictly increasing with the last one exactly 1.
class AnnealingPath {
 public:
  /// Linear path (not learnable).
  explicit AnnealingPath(int K);
  /// Learnable path registered in the schedule group, initialised to linear.
  AnnealingPath(int K, ParameterStore& store, const std::string& name = "schedule.raw");

  [[nodiscard]] int K() const { return K_; }
  [[nodiscard]] bool learnable() const { return raw_ != nullptr; }
  /// K-1 coefficients.
  [[nodiscard]] ad::Vector betas() const;
  /// 1 x (K-1) coefficients on the tape.
  ad::Var betas(ad::Tape& tape, bool live) const;
  /// Coefficient of density k in 1..K (0 for k = 1).
  ad::Var beta(ad::Tape& tape, int k, bool live) const;
  [[nodiscard]] ad::Parameter* raw() const { return raw_; }

 private:
  int K_;
  ad::Parameter* raw_ = nullptr;
};

/// Ordered sequence of K unnormalized densities indexed 1..K.
class DensitySequence {
 public:
  virtual ~DensitySequence() = default;
  [[nodiscard]] virtual int length() const = 0;
  [[nodiscard]] virtual int dim() const = 0;
  /// log γ_k(z) for k in 1..K; `live` controls whether θ_k receives gradient.
  virtual ad::Var log_gamma(ad::Tape& tape, int k, ad::Var z, bool live) const = 0;
  /// Group that holds θ_k, if the density at level k has parameters.
  [[nodiscard]] virtual std::vector<GroupId> target_groups(int k) const = 0;

  [[nodiscard]] ad::Vector log_gamma(int k, const ad::Matrix& z) const;

 protected:
  void check_level(int k) const;
};

/// Geometric interpolation log γ_k = (1 - β_k) log q_1 + β_k log γ_K.
class AnnealedSequence : public DensitySequence {
 public:
  AnnealedSequence(const UnnormalizedDensity& initial, const UnnormalizedDensity& final_target,
                   const AnnealingPath& path);

  [[nodiscard]] int length() const override { return path_.K(); }
  [[nodiscard]] int dim() const override { return final_.dim(); }
  ad::Var log_gamma(ad::Tape& tape, int k, ad::Var z, bool live) const override;
  [[nodiscard]] std::vector<GroupId> target_groups(int k) const override;
  using DensitySequence::log_gamma;

  /// log γ_k with β given explicitly as a tape value.
  ad::Var interpolate(ad::Tape& tape, ad::Var z, ad::Var beta) const;

  [[nodiscard]] const AnnealingPath& path() const { return path_; }
  [[nodiscard]] const UnnormalizedDensity& initial() const { return initial_; }
  [[nodiscard]] const UnnormalizedDensity& final_target() const { return final_; }

 private:
  const UnnormalizedDensity& initial_;
  const UnnormalizedDensity& final_;
  const AnnealingPath& path_;
};

/// Sequence of scaled 1-D (or diagonal) Gaussians γ_k = c_k N(z; m_k, s_k^2)
/// with learnable means. Normalizers are known in closed form, which makes
/// it the analytic workhorse for estimator tests.
class GaussianSequence : public DensitySequence {
 public:
  struct Level {
    ad::Vector mean;
    ad::Vector stddev;
    double log_scale = 0.0;
  };

  GaussianSequence(std::vector<Level> levels, ParameterStore* store = nullptr);

  [[nodiscard]] int length() const override { return static_cast<int>(levels_.size()); }
  [[nodiscard]] int dim() const override { return static_cast<int>(levels_.front().mean.size()); }
  ad::Var log_gamma(ad::Tape& tape, int k, ad::Var z, bool live) const override;
  [[nodiscard]] std::vector<GroupId> target_groups(int k) const override;
  using DensitySequence::log_gamma;

  [[nodiscard]] double log_Z(int k) const { return levels_[static_cast<std::size_t>(k - 1)].log_scale; }
  [[nodiscard]] const Level& level(int k) const { return levels_[static_cast<std::size_t>(k - 1)]; }
  [[nodiscard]] ad::Parameter* mean_parameter(int k) const { return means_[static_cast<std::size_t>(k - 1)]; }

 private:
  std::vector<Level> levels_;
  std::vector<ad::Parameter*> means_;
};

/// Trapezoidal quadrature on a square 2-D grid.
struct Grid2d {
  int n = 400;
  double lo = -20.0;
  double hi = 20.0;

  [[nodiscard]] ad::Matrix points() const;
  /// Log trapezoid weights matching points().
  [[nodiscard]] ad::Vector log_weights() const;
  [[nodiscard]] double step() const { return (hi - lo) / (n - 1); }
};

/// log of the integral of exp(log_f) over the grid.
double quadrature_log_integral(const Grid2d& grid, const ad::Vector& log_f);

/// KL(π_{k-1} || π_k) for k = 2..K by quadrature of the normalised densities.
std::vector<double> quadrature_stepwise_kl(const DensitySequence& seq, const Grid2d& grid = {});

/// Coefficient of variation (population SD over mean).
double coefficient_of_variation(const std::vector<double>& values);

}  // namespace nvi

#endif
