#ifndef NVI_KERNELS_HPP
#define NVI_KERNELS_HPP

#include "nvi/parameters.hpp"
#include "nvi/tape.hpp"

#include <cstdint>
#include <string>

namespace nvi {

/// Reparameterized draw from a transition kernel.
struct KernelSample {
  ad::Var z;
  /// Conditional log-density of z (stochastic kernels) or log|det J| (flows).
  ad::Var log_term;
};

/// Forward proposal q_k(z_k | z_{k-1}) or reverse kernel r_{k-1}(z_{k-1} | z_k).
/// Rows of every argument index particles. The same type serves both roles;
/// a reverse kernel is evaluated with its arguments swapped.
class TransitionKernel {
 public:
  virtual ~TransitionKernel() = default;
  [[nodiscard]] virtual int dim() const = 0;
  [[nodiscard]] virtual bool deterministic() const = 0;

  /// New state from `z_prev` and caller-supplied standard normal noise.
  /// Stochastic kernels return the conditional log-density as log_term;
  /// deterministic kernels ignore the noise and return log|det J|.
  virtual KernelSample propose(ad::Tape& tape, ad::Var z_prev, ad::Var noise, bool live) const = 0;

  /// Conditional log-density log k(z_new | z_given); S x 1.
  virtual ad::Var log_prob(ad::Tape& tape, ad::Var z_new, ad::Var z_given, bool live) const = 0;
};

enum class HiddenActivation { tanh, identity };

struct MlpKernelOptions {
  int hidden = 50;
  HiddenActivation activation = HiddenActivation::tanh;
  /// Scale applied to the N(0, 1/fan_in) draw for the output weights W_mu, W_sigma.
  double output_scale = 1.0;
  double initial_stddev = 1.0;
};

/// Conditional diagonal Gaussian with mean z + W_mu^T h(z) + b_mu and
/// stddev softplus(W_sigma^T h(z) + b_sigma), where h(z) = act(W_h^T z + b_h).
class GaussianMlpKernel : public TransitionKernel {
 public:
  GaussianMlpKernel(ParameterStore& store, const GroupId& group, const std::string& prefix, int dim,
                    std::uint64_t init_seed, const MlpKernelOptions& options = {});

  [[nodiscard]] int dim() const override { return dim_; }
  [[nodiscard]] bool deterministic() const override { return false; }
  KernelSample propose(ad::Tape& tape, ad::Var z_prev, ad::Var noise, bool live) const override;
  ad::Var log_prob(ad::Tape& tape, ad::Var z_new, ad::Var z_given, bool live) const override;

  struct Moments {
    ad::Var mean;
    ad::Var stddev;
  };
  Moments moments(ad::Tape& tape, ad::Var z, bool live) const;

  [[nodiscard]] const GroupId& group() const { return group_; }
  ad::Parameter& W_h() const { return *W_h_; }
  ad::Parameter& b_h() const { return *b_h_; }
  ad::Parameter& W_mu() const { return *W_mu_; }
  ad::Parameter& b_mu() const { return *b_mu_; }
  ad::Parameter& W_sigma() const { return *W_sigma_; }
  ad::Parameter& b_sigma() const { return *b_sigma_; }

 private:
  int dim_;
  GroupId group_;
  MlpKernelOptions options_;
  ad::Parameter* W_h_;
  ad::Parameter* b_h_;
  ad::Parameter* W_mu_;
  ad::Parameter* b_mu_;
  ad::Parameter* W_sigma_;
  ad::Parameter* b_sigma_;
};

/// Stack of planar layers f(z) = z + û tanh(w^T z + b). The constraint
/// w^T û > -1 is enforced with û = u + (m(w^T u) - w^T u) w / |w|^2 where
/// m(x) = -1 + softplus(x + log(e - 1)), so that u = 0 gives the identity.
class PlanarFlowStack : public TransitionKernel {
 public:
  PlanarFlowStack(ParameterStore& store, const GroupId& group, const std::string& prefix, int dim, int layers,
                  std::uint64_t init_seed, double u_scale = 0.01);

  [[nodiscard]] int dim() const override { return dim_; }
  [[nodiscard]] bool deterministic() const override { return true; }
  [[nodiscard]] int layers() const { return static_cast<int>(w_.size()); }

  KernelSample propose(ad::Tape& tape, ad::Var z_prev, ad::Var noise, bool live) const override;
  /// Flows have no conditional density; always throws std::logic_error.
  ad::Var log_prob(ad::Tape& tape, ad::Var z_new, ad::Var z_given, bool live) const override;

  /// Composed map and accumulated log|det J| (S x 1).
  KernelSample forward(ad::Tape& tape, ad::Var z, bool live) const;

  ad::Parameter& w(int layer) const { return *w_[static_cast<std::size_t>(layer)]; }
  ad::Parameter& u(int layer) const { return *u_[static_cast<std::size_t>(layer)]; }
  ad::Parameter& b(int layer) const { return *b_[static_cast<std::size_t>(layer)]; }

  /// The corrected û for a layer, as a 1 x dim row.
  ad::Var corrected_u(ad::Tape& tape, int layer, bool live) const;

 private:
  int dim_;
  std::vector<ad::Parameter*> w_;
  std::vector<ad::Parameter*> u_;
  std::vector<ad::Parameter*> b_;
};

/// Inverse of softplus for positive y.
double inverse_softplus(double y);

}  // namespace nvi

#endif
