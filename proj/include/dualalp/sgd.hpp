#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualalp/features.hpp"
#include "dualalp/mdp.hpp"
#include "dualalp/random.hpp"

namespace dualalp {

/// Step-size schedule: constant, or halving every `period` iterations.
struct LearningRate {
  enum class Kind { kConstant, kHalving };
  Kind kind = Kind::kConstant;
  double eta0 = 0.0;
  long period = 0;

  static LearningRate constant(double eta) {
    if (!(eta > 0.0)) throw std::invalid_argument("LearningRate: eta <= 0");
    return {Kind::kConstant, eta, 0};
  }
  static LearningRate halving(double eta0, long period) {
    if (!(eta0 > 0.0) || period <= 0)
      throw std::invalid_argument("LearningRate: bad halving schedule");
    return {Kind::kHalving, eta0, period};
  }

  double at(long t) const {  // t is 1-based
    if (kind == Kind::kConstant) return eta0;
    return eta0 * std::exp2(-static_cast<double>((t - 1) / period));
  }
};

struct SgdConfig {
  long T = 0;                  // iteration count
  double H = 0.0;              // violation penalty weight
  LearningRate eta;
  double S = 0.0;              // Euclidean radius of the parameter domain
  std::uint64_t seed = 0;
  long checkpoint_every = 0;   // 0: only the final checkpoint
  long batch_size = 1;         // samples averaged per gradient estimate
};

/// Norm bound G' = sqrt(d) + H (C1 + C2) on the sampled gradient estimate.
inline double gradient_norm_bound(int d, double H, double C1, double C2) {
  return std::sqrt(static_cast<double>(d)) + H * (C1 + C2);
}

/// Preset realizing the O(1/eps^4) accuracy guarantee: T = ceil(1/eps^4),
/// H = 1/eps, constant step S / (G' sqrt(T)).
inline SgdConfig guarantee_preset(double epsilon, double S, int d, double C1,
                                  double C2, std::uint64_t seed,
                                  long checkpoint_every = 0) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("guarantee_preset: epsilon outside (0,1)");
  SgdConfig cfg;
  cfg.T = static_cast<long>(std::ceil(1.0 / std::pow(epsilon, 4)));
  cfg.H = 1.0 / epsilon;
  cfg.S = S;
  const double gbound = gradient_norm_bound(d, cfg.H, C1, C2);
  cfg.eta = LearningRate::constant(S / (gbound * std::sqrt(static_cast<double>(cfg.T))));
  cfg.seed = seed;
  cfg.checkpoint_every = checkpoint_every;
  return cfg;
}

/// Penalized surrogate c(theta) = loss^T (mu0 + Phi theta) + H V1 + H V2.
inline double surrogate_cost(const MdpModel& model,
                             const FeatureMatrix& features, double H,
                             const Vec& theta) {
  const double linear = model.loss().dot(features.mu0().mu) +
                        features.loss_dot_columns().dot(theta);
  return linear + H * violation_v1(features, theta) +
         H * violation_v2(model, features, theta);
}

/// sign with s(0) = 0.
inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/**
 * Exact subgradient of the surrogate:
 *   loss^T Phi
 *   - H sum_{(x,a)} Phi_{(x,a),:} 1{mu0 + Phi theta < 0}
 *   + H sum_{x'} (P-B)^T_{:,x'} Phi * s((P-B)^T_{:,x'} Phi theta).
 * The negativity indicator is strict; the stationarity sign term takes
 * s(0) = 0.  O(X A) per call, intended for diagnostics and small instances.
 */
inline Vec full_subgradient(const MdpModel& model,
                            const FeatureMatrix& features, double H,
                            const Vec& theta) {
  Vec g = features.loss_dot_columns();
  const Vec w = features.apply(theta);
  const SpMatRow& rows = features.rows();
  for (int i = 0; i < features.num_rows(); ++i) {
    if (w[i] < 0.0)
      for (SpMatRow::InnerIterator it(rows, i); it; ++it)
        g[it.col()] -= H * it.value();
  }
  const Vec resid = stationarity_residual(model, rows * theta);
  for (int x = 0; x < model.num_states(); ++x) {
    const double s = sign0(resid[x]);
    if (s != 0.0) g += (H * s) * pb_column_product(model, features, x);
  }
  return g;
}

/**
 * Single-sample unbiased estimate of the subgradient from one state-action
 * draw (negativity term, importance weight 1/q1) and one state draw
 * (stationarity term, importance weight 1/q2).
 */
inline Vec gradient_estimate(const MdpModel& model,
                             const FeatureMatrix& features,
                             const SamplingModel& sampling, double H,
                             const Vec& theta, int xa_sample, int x_sample) {
  Vec g = features.loss_dot_columns();
  const double w = features.mu0().mu[xa_sample] +
                   features.row(xa_sample).dot(theta);
  if (w < 0.0) g -= (H / sampling.q1.prob(xa_sample)) * features.row(xa_sample);
  const Vec col = pb_column_product(model, features, x_sample);
  const double s = sign0(col.dot(theta));
  if (s != 0.0) g += (H * s / sampling.q2.prob(x_sample)) * col;
  return g;
}

inline Vec project_theta(const Vec& theta, const ThetaDomain& domain) {
  return domain.project(theta);
}

struct SgdCheckpoint {
  long t = 0;
  double objective = 0.0;  // loss^T (mu0 + Phi theta_avg)
  double v1 = 0.0;
  double v2 = 0.0;
  double surrogate = 0.0;
};

struct SgdTrace {
  Vec theta_hat;                         // average of theta_1 .. theta_T
  std::vector<SgdCheckpoint> checkpoints;
};

using IterationObserver =
    std::function<void(long t, const Vec& theta_t, const Vec& g_t)>;

/**
 * Projected stochastic subgradient descent on the penalized surrogate.
 *
 * theta_1 = Pi_Theta(0); theta_{t+1} = Pi_Theta(theta_t - eta_t g_t) with
 * g_t averaged over `batch_size` independent single-sample estimates; the
 * result is the running average of theta_1 .. theta_T.  O(X A) diagnostics
 * (objective, V1, V2, surrogate of the running average) are evaluated only
 * at checkpoints.  Deterministic in the config seed.
 */
inline SgdTrace run_sgd(const SgdConfig& config, const MdpModel& model,
                        const FeatureMatrix& features,
                        const SamplingModel& sampling,
                        const IterationObserver& observer = {}) {
  if (config.T <= 0) throw std::invalid_argument("run_sgd: T <= 0");
  if (!(config.H >= 0.0)) throw std::invalid_argument("run_sgd: bad H");
  if (config.batch_size <= 0)
    throw std::invalid_argument("run_sgd: batch_size <= 0");
  const ThetaDomain domain(config.S, features.column_sums(),
                           1.0 - features.mu0().mu.sum());
  Rng rng(config.seed);
#ifndef NDEBUG
  const double gbound =
      gradient_norm_bound(features.dim(), config.H, sampling.C1, sampling.C2);
#endif

  Vec theta = domain.project(Vec::Zero(features.dim()));
  Vec theta_sum = Vec::Zero(features.dim());
  SgdTrace trace;
  const auto record = [&](long t, const Vec& avg) {
    SgdCheckpoint cp;
    cp.t = t;
    cp.objective = model.loss().dot(features.mu0().mu) +
                   features.loss_dot_columns().dot(avg);
    cp.v1 = violation_v1(features, avg);
    cp.v2 = violation_v2(model, features, avg);
    cp.surrogate = cp.objective + config.H * (cp.v1 + cp.v2);
    trace.checkpoints.push_back(cp);
  };

  for (long t = 1; t <= config.T; ++t) {
    Vec g = Vec::Zero(features.dim());
    for (long b = 0; b < config.batch_size; ++b) {
      const int xa = sampling.q1.sample(rng);
      const int x = sampling.q2.sample(rng);
      g += gradient_estimate(model, features, sampling, config.H, theta, xa, x);
    }
    g /= static_cast<double>(config.batch_size);
    assert(g.norm() <= gbound * (1.0 + 1e-9));
    theta_sum += theta;
    if (observer) observer(t, theta, g);
    if (config.checkpoint_every > 0 && t % config.checkpoint_every == 0)
      record(t, theta_sum / static_cast<double>(t));
    if (t < config.T) theta = domain.project(theta - config.eta.at(t) * g);
  }
  trace.theta_hat = theta_sum / static_cast<double>(config.T);
  if (trace.checkpoints.empty() || trace.checkpoints.back().t != config.T)
    record(config.T, trace.theta_hat);
  return trace;
}

}  // namespace dualalp
