#include "nvi/objectives.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

namespace nvi {

namespace {

ad::Vector incoming_weights(const ad::Vector& log_w_prev, Weighting weighting) {
  if (weighting == Weighting::proposal) {
    return ad::Vector::Constant(log_w_prev.size(), 1.0 / static_cast<double>(log_w_prev.size()));
  }
  return normalized_weights(log_w_prev);
}

ad::Vector outgoing_weights(const ad::Vector& omega, const ad::Vector& log_v) {
  return normalized_weights(omega.array().log().matrix() + log_v);
}


LiveSet live_for(Divergence divergence, const LevelTargets& t, const EstimatorOptions& options) {
  LiveSet live;
  live.forward_kernel = t.forward_kernel;
  live.reverse_kernel = t.reverse_kernel;
  live.target = t.target;
  live.target_prev = t.target_prev;
  live.reparameterize = divergence == Divergence::reverse_kl && t.forward_kernel && !options.score_forward;
  return live;
}

void accumulate(std::optional<ad::Var>& acc, ad::Var term) { acc = acc ? *acc + term : term; }

struct GradSnapshot {
  explicit GradSnapshot(ParameterStore& store) : store_(store) {
    for (ad::Parameter* p : store.all()) {
      saved_.push_back(p->grad);
    }
    store.zero_grads();
  }
  ~GradSnapshot() {
    std::size_t i = 0;
    for (ad::Parameter* p : store_.all()) {
      p->grad = saved_[i++];
    }
  }
  GradSnapshot(const GradSnapshot&) = delete;
  GradSnapshot& operator=(const GradSnapshot&) = delete;

 private:
  ParameterStore& store_;
  std::vector<ad::Matrix> saved_;
};

void collect(ParameterStore& store, GradientEstimate& out) {
  for (ad::Parameter* p : store.all()) {
    auto it = out.grads.find(p->name);
    if (it == out.grads.end()) {
      out.grads.emplace(p->name, p->grad);
    } else {
      it->second += p->grad;
    }
  }
}

void fill_diagnostics(GradientEstimate& out, const ad::Vector& log_w_prev, const ad::Vector& log_v,
                      Divergence divergence, const EstimatorOptions& options) {
  const ad::Vector omega = incoming_weights(log_w_prev, options.weighting);
  out.mean_log_v = omega.dot(log_v);
  out.baseline = options.use_baseline ? options.baseline : 0.0;
  out.loss_estimate = level_loss_estimate(log_w_prev, log_v, divergence, options.weighting);
  out.ess = ess(ad::Vector(log_w_prev + log_v));
}

GradientEstimate level_estimate(const LevelInputs& in, ParameterStore& store, Divergence divergence,
                                const LevelTargets& targets, const EstimatorOptions& options) {
  if (in.seq == nullptr) {
    throw std::invalid_argument("level estimate: no density sequence");
  }
  if (!targets.forward_kernel && !targets.reverse_kernel && !targets.target && !targets.target_prev) {
    throw std::invalid_argument("level estimate: no parameter group selected for update");
  }
  GradientEstimate out;
  GradSnapshot snapshot(store);
  ad::Tape tape;
  LevelGraph g(tape, *in.seq, in.transition, in.z_prev, in.noise, in.level, live_for(divergence, targets, options));
  ad::Var s = level_surrogate(g, in.log_w_prev, divergence, targets, options);
  if (s.requires_grad()) {
    tape.backward(s);
  }
  collect(store, out);
  fill_diagnostics(out, in.log_w_prev, g.log_v(), divergence, options);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Baselines and SNIS

double BaselineState::value(int level) const {
  auto it = values_.find(level);
  return it == values_.end() ? 0.0 : it->second;
}

void BaselineState::update(int level, double mean_log_v) {
  if (!std::isfinite(mean_log_v)) {
    return;
  }
  auto it = values_.find(level);
  if (it == values_.end()) {
    values_[level] = mean_log_v;
  } else {
    it->second = decay_ * it->second + (1.0 - decay_) * mean_log_v;
  }
}

double snis_expectation(const ad::Vector& log_w_prev, const ad::Vector& log_v, const ad::Vector& g,
                        ExpectationKind kind) {
  if (g.size() != log_w_prev.size()) {
    throw std::invalid_argument("snis_expectation: size mismatch");
  }
  const double lse = ad::log_sum_exp(log_w_prev);
  if (!std::isfinite(lse)) {
    throw std::runtime_error("snis_expectation: all weights are zero");
  }
  ad::Vector w = kind == ExpectationKind::proposal ? normalized_weights(log_w_prev)
                                                   : normalized_weights(ad::Vector(log_w_prev + log_v));
  return w.dot(g);
}

double level_loss_estimate(const ad::Vector& log_w_prev, const ad::Vector& log_v, Divergence divergence,
                           Weighting weighting) {
  const ad::Vector omega = incoming_weights(log_w_prev, weighting);
  const double log_R = ad::log_sum_exp(ad::Vector(omega.array().log().matrix() + log_v));
  if (divergence == Divergence::reverse_kl) {
    return -omega.dot(log_v) + log_R;
  }
  return outgoing_weights(omega, log_v).dot(log_v) - log_R;
}

ad::Matrix GradientEstimate::get(const std::string& name) const {
  auto it = grads.find(name);
  return it == grads.end() ? ad::Matrix() : it->second;
}

// ---------------------------------------------------------------------------
// Surrogates

ad::Var level_surrogate(LevelGraph& g, const ad::Vector& log_w_prev, Divergence divergence,
                        const LevelTargets& targets, const EstimatorOptions& options) {
  ad::Tape& tape = g.tape();
  const ad::Vector omega = incoming_weights(log_w_prev, options.weighting);
  const ad::Vector& lv = g.log_v();
  const ad::Vector omega_t = outgoing_weights(omega, lv);
  const double b = options.use_baseline ? options.baseline : 0.0;
  const ad::Vector centred = lv.array() - b;
  const bool flow = g.deterministic();
  std::optional<ad::Var> total;

  if (divergence == Divergence::reverse_kl) {
    // Pathwise part through z_k together with the explicit parameter
    // dependence of γ_k and r_{k-1}.
    std::optional<ad::Var> path;
    const bool pathwise = targets.forward_kernel && g.live().reparameterize;
    if (pathwise) {
      if (flow) {
        accumulate(path, g.log_gamma() + g.log_forward());
      } else {
        accumulate(path, g.log_gamma() + g.log_reverse() - (options.stl ? g.log_forward_stl() : g.log_forward()));
      }
    } else {
      if (targets.target) {
        accumulate(path, g.log_gamma_bar());
      }
      if (targets.reverse_kernel && !flow) {
        accumulate(path, g.log_reverse_bar());
      }
    }
    if (path) {
      accumulate(total, -weighted_sum(*path, omega));
    }
    if (targets.forward_kernel && !pathwise) {
      if (flow) {
        throw std::logic_error("reverse KL: flow kernels need the pathwise gradient");
      }
      accumulate(total, -weighted_sum(g.log_forward_bar(), ad::Vector(omega.cwiseProduct(centred))));
    }
    if (targets.target) {
      // Gradient of log Z_k under π_k.
      accumulate(total, weighted_sum(g.log_gamma_bar(), omega_t));
    }
    if (targets.target_prev) {
      // Covariance under π̂_k of -log v_k and the score of γ_{k-1}.
      const double mean = omega.dot(centred);
      const ad::Vector c = omega.array() * (centred.array() - mean);
      accumulate(total, -weighted_sum(g.log_gamma_prev(), c));
    }
  } else {
    if (targets.forward_kernel) {
      if (flow) {
        throw std::logic_error("forward KL: flow kernels have no conditional density for the score form");
      }
      accumulate(total, -weighted_sum(g.log_forward_bar(), omega_t));
    }
    if (targets.target_prev) {
      accumulate(total, weighted_sum(g.log_gamma_prev(), ad::Vector(omega - omega_t)));
    }
    if (targets.reverse_kernel || targets.target) {
      if (!options.experimental) {
        throw std::logic_error(
            "forward KL gradients w.r.t. reverse kernels or targets are unstable in practice; set experimental to use "
            "them");
      }
      const ad::Vector c = omega_t.cwiseProduct(centred);
      if (targets.reverse_kernel && !flow) {
        accumulate(total, weighted_sum(g.log_reverse_bar(), c));
      }
      if (targets.target) {
        accumulate(total, weighted_sum(g.log_gamma_bar(), ad::Vector(c - omega_t * c.sum())));
      }
    }
  }
  return total ? *total : tape.constant(0.0);
}

// ---------------------------------------------------------------------------
// Specialized estimators

GradientEstimate grad_fwd_kl_wrt_forward(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options) {
  return level_estimate(in, store, Divergence::forward_kl, LevelTargets{true, true, false, false}, options);
}

GradientEstimate grad_fwd_kl_wrt_reverse(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options) {
  if (!options.experimental) {
    throw std::logic_error(
        "grad_fwd_kl_wrt_reverse: forward KL w.r.t. reverse kernels is unstable in practice; set experimental");
  }
  return level_estimate(in, store, Divergence::forward_kl, LevelTargets{false, false, true, true}, options);
}

GradientEstimate grad_rev_kl_wrt_forward(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options) {
  return level_estimate(in, store, Divergence::reverse_kl, LevelTargets{true, true, false, false}, options);
}

GradientEstimate grad_rev_kl_wrt_reverse(const LevelInputs& in, ParameterStore& store,
                                         const EstimatorOptions& options) {
  return level_estimate(in, store, Divergence::reverse_kl, LevelTargets{false, false, true, true}, options);
}

// ---------------------------------------------------------------------------
// General f-divergences

FDivergence parse_f_divergence(const std::string& name) {
  if (name == "reverse_kl") {
    return FDivergence::reverse_kl;
  }
  if (name == "forward_kl") {
    return FDivergence::forward_kl;
  }
  throw std::invalid_argument("unknown f-divergence: " + name);
}

GradientEstimate grad_f_divergence(const LevelInputs& in, FDivergence kind, ParameterStore& store,
                                   const LevelTargets& targets) {
  if (in.seq == nullptr) {
    throw std::invalid_argument("grad_f_divergence: no density sequence");
  }
  if (!targets.forward_kernel && !targets.reverse_kernel && !targets.target && !targets.target_prev) {
    throw std::invalid_argument("grad_f_divergence: no parameter group selected for update");
  }
  GradientEstimate out;
  GradSnapshot snapshot(store);
  const ad::Vector omega = normalized_weights(in.log_w_prev);
  const bool reverse = kind == FDivergence::reverse_kl;

  // One recording per parameter side, each with only that side live.
  auto run = [&](const LiveSet& live, auto&& build) {
    ad::Tape tape;
    LevelGraph g(tape, *in.seq, in.transition, in.z_prev, in.noise, in.level, live);
    const ad::Vector& lv = g.log_v();
    const double log_R = ad::log_sum_exp(ad::Vector(omega.array().log().matrix() + lv));
    const ad::Vector log_w = lv.array() - log_R;
    const ad::Vector w = log_w.array().exp();
    // c1 = f'(w) w and c0 = f(w) - f'(w) w.
    const ad::Vector c1 = reverse ? ad::Vector(ad::Vector::Constant(w.size(), -1.0))
                                  : ad::Vector(w.array() * (log_w.array() + 1.0));
    const ad::Vector c0 = reverse ? ad::Vector(1.0 - log_w.array()) : ad::Vector(-w);
    ad::Var s = build(g, c0, c1, outgoing_weights(omega, lv));
    if (s.requires_grad()) {
      tape.backward(s);
    }
    fill_diagnostics(out, in.log_w_prev, lv, reverse ? Divergence::reverse_kl : Divergence::forward_kl,
                     EstimatorOptions{});
  };

  if (targets.forward_kernel) {
    LiveSet live;
    live.forward_kernel = true;
    live.reparameterize = reverse;
    run(live, [&](LevelGraph& g, const ad::Vector& c0, const ad::Vector& c1, const ad::Vector&) {
      if (reverse) {
        ad::Var lv = g.deterministic() ? g.log_gamma() + g.log_forward()
                                       : g.log_gamma() + g.log_reverse() - g.log_forward();
        return weighted_sum(lv, ad::Vector(omega.cwiseProduct(c1)));
      }
      return weighted_sum(g.log_forward_bar(), ad::Vector(omega.cwiseProduct(c0)));
    });
  }
  if (targets.reverse_kernel) {
    LiveSet live;
    live.reverse_kernel = true;
    run(live, [&](LevelGraph& g, const ad::Vector&, const ad::Vector& c1, const ad::Vector&) {
      if (g.deterministic()) {
        return g.tape().constant(0.0);
      }
      return weighted_sum(g.log_reverse_bar(), ad::Vector(omega.cwiseProduct(c1)));
    });
  }
  if (targets.target) {
    LiveSet live;
    live.target = true;
    run(live, [&](LevelGraph& g, const ad::Vector&, const ad::Vector& c1, const ad::Vector& omega_t) {
      const ad::Vector oc = omega.cwiseProduct(c1);
      return weighted_sum(g.log_gamma_bar(), ad::Vector(oc - omega_t * oc.sum()));
    });
  }
  if (targets.target_prev) {
    LiveSet live;
    live.target_prev = true;
    run(live, [&](LevelGraph& g, const ad::Vector& c0, const ad::Vector&, const ad::Vector&) {
      const ad::Vector oc = omega.cwiseProduct(c0);
      return weighted_sum(g.log_gamma_prev(), ad::Vector(oc - omega * oc.sum()));
    });
  }
  collect(store, out);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(const std::vector<ad::Parameter*>& params, const AdamOptions& o, AdamState& state) {
  if (state.m.empty() && state.t == 0) {
    for (const ad::Parameter* p : params) {
      state.m.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
      state.v.push_back(ad::Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state holds " + std::to_string(state.m.size()) + " entries for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Parameter& p = *params[i];
    if (state.m[i].rows() != p.value.rows() || state.m[i].cols() != p.value.cols() ||
        p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
      throw std::invalid_argument("adam_step: shape mismatch for " + p.name);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * p.grad;
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= o.lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + o.eps);
  }
}

// ---------------------------------------------------------------------------
// Training step

StepDiagnostics nvi_step(const NviModel& model, const TrainingPolicy& policy, int S, std::uint64_t seed,
                         std::uint64_t iteration, BaselineState& baselines, const std::vector<ad::Parameter*>& trainable,
                         const AdamOptions* adam, AdamState* adam_state) {
  const DensitySequence& seq = *model.seq;
  const int K = seq.length();
  const int d = seq.dim();
  if (static_cast<int>(model.transitions.size()) != K - 1) {
    throw std::invalid_argument("nvi_step: need one transition per level 2..K");
  }
  for (ad::Parameter* p : trainable) {
    p->grad.setZero(p->value.rows(), p->value.cols());
  }
  StepDiagnostics diag;
  ad::Tape tape;

  const ad::Matrix noise1 = rng::normal_noise(seed, rng::Purpose::noise, iteration, 1, S, d);
  if (policy.train_initial) {
    // Reverse KL between π_1 and a learnable q_1 with the STL estimator.
    ad::Var z = model.initial->sample(tape, tape.constant(noise1), true);
    ad::Var lq = model.initial->log_density(tape, z, false);
    ad::Var lg = seq.log_gamma(tape, 1, z, true);
    tape.backward(sum(lq - lg) * (1.0 / S));
    tape.clear();
  }
  ParticleSystem ps = init(*model.initial, seq, noise1);

  const LevelTargets& up = policy.level.update;
  for (int k = 2; k <= K; ++k) {
    const bool resample = should_resample(policy.resample, ess(ps), ps.size(), policy.adaptive_threshold);
    if (resample) {
      rng::Stream s = rng::stream(seed, rng::Purpose::resample, iteration, static_cast<std::uint64_t>(k - 1));
      ps = resample_systematic(ps, s);
      if (!diag.levels.empty()) {
        diag.levels.back().resampled = true;
      }
    }
    const ad::Matrix noise = rng::normal_noise(seed, rng::Purpose::noise, iteration, static_cast<std::uint64_t>(k), S, d);
    EstimatorOptions opts;
    opts.stl = policy.level.stl;
    opts.experimental = policy.level.experimental;
    opts.use_baseline = policy.use_baseline;
    opts.baseline = baselines.value(k);
    opts.weighting = policy.weighting;

    tape.clear();
    LevelGraph g(tape, seq, model.transitions[static_cast<std::size_t>(k - 2)], ps.z, noise, k,
                 live_for(policy.level.divergence, up, opts));
    ad::Var s = level_surrogate(g, ps.log_w, policy.level.divergence, up, opts);
    if (s.requires_grad()) {
      tape.backward(s);
    }
    const ad::Vector lv = g.log_v();
    const ad::Vector omega = incoming_weights(ps.log_w, policy.weighting);

    LevelDiagnostics ld;
    ld.level = k;
    ld.baseline = opts.baseline;
    ld.mean_log_v = omega.dot(lv);
    ld.var_log_v = omega.dot(ad::Vector((lv.array() - ld.mean_log_v).square()));
    ld.loss_estimate = level_loss_estimate(ps.log_w, lv, policy.level.divergence, policy.weighting);
    baselines.update(k, ld.mean_log_v);

    ps.z = g.z().value();
    ps.log_w = ps.log_w + lv;
    ps.level = k;
    ld.ess = ess(ps);
    ld.log_Z_hat = log_Z_hat(ps);
    if (!std::isfinite(ld.loss_estimate) || lv.hasNaN()) {
      diag.finite = false;
    }
    diag.levels.push_back(ld);
  }
  diag.log_Z_hat = log_Z_hat(ps);
  diag.ess = ess(ps);

  for (const ad::Parameter* p : trainable) {
    if (!p->grad.allFinite()) {
      diag.finite = false;
    }
  }
  if (!std::isfinite(diag.log_Z_hat)) {
    diag.finite = false;
  }
  if (diag.finite && adam != nullptr && adam_state != nullptr) {
    adam_step(trainable, *adam, *adam_state);
  }
  return diag;
}

}  // namespace nvi
