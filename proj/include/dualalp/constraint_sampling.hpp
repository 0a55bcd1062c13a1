#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualalp/features.hpp"
#include "dualalp/lp.hpp"
#include "dualalp/mdp.hpp"
#include "dualalp/random.hpp"

namespace dualalp {

/**
 * Sample complexity of the randomized constraint relaxation: with
 *   m = ceil((4/eps) (d ln(12/eps) + ln(2/delta)))
 * draws from a constraint family, the optimum of the sampled program
 * violates at most an eps-measure of the family with probability 1 - delta.
 */
inline long sample_count(double epsilon, double delta, int d) {
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw std::invalid_argument("sample_count: epsilon outside (0,1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("sample_count: delta outside (0,1)");
  if (d < 1) throw std::invalid_argument("sample_count: d < 1");
  return static_cast<long>(
      std::ceil((4.0 / epsilon) *
                (d * std::log(12.0 / epsilon) + std::log(2.0 / delta))));
}

/// Largest eps such that `k` draws still meet the sample-count requirement
/// at confidence delta (bisection on the monotone count).  Returns 1 when k
/// buys no guarantee at all.
inline double implied_epsilon(long k, int d, double delta) {
  if (k < 1) return 1.0;
  double lo = 1e-9, hi = 1.0 - 1e-12;
  if (sample_count(hi, delta, d) > k) return 1.0;
  if (sample_count(lo, delta, d) <= k) return lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (sample_count(mid, delta, d) <= k)
      hi = mid;
    else
      lo = mid;
  }
  return hi;
}

/**
 * Configuration of one sampled-LP solve.  v1 (over state-action pairs, in
 * [-1, 0]) and v2 (over states, in [0, 1]) are the violation allowances;
 * empty vectors mean the defaults v1 = 0 and v2 = eps_s everywhere, which
 * reproduces the benchmark program.  The parameter box is |theta_i| <= M.
 * epsilon/delta, when positive, record the guarantee the sample sizes were
 * derived from; audits fall back to delta = 0.1 and the implied epsilon.
 */
struct CsConfig {
  long k1 = 0;           // draws from the nonnegativity family
  long k2 = 0;           // draws from the stationarity family
  double M = 1.0;        // box bound on each coordinate of theta
  double eps_s = 1e-3;   // default stationarity allowance
  Vec v1;                // optional explicit allowances
  Vec v2;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  double delta = 0.0;
  long audit_samples = 100000;  // used only above the enumeration limit
};

struct SampledConstraintSet {
  std::vector<int> nonneg_rows;  // sampled state-action indices
  std::vector<int> stationarity_states;  // sampled states (both signs kept)
};

/// k1 state-action draws from q1 followed by k2 state draws from q2, in
/// that fixed order, so a seed fully determines the constraint set.
inline SampledConstraintSet sample_constraints(const SamplingModel& sampling,
                                               long k1, long k2,
                                               std::uint64_t seed) {
  if (k1 < 0 || k2 < 0)
    throw std::invalid_argument("sample_constraints: negative counts");
  SampledConstraintSet set;
  set.nonneg_rows.reserve(k1);
  set.stationarity_states.reserve(k2);
  Rng rng(seed);
  for (long i = 0; i < k1; ++i)
    set.nonneg_rows.push_back(sampling.q1.sample(rng));
  for (long i = 0; i < k2; ++i)
    set.stationarity_states.push_back(sampling.q2.sample(rng));
  return set;
}

namespace cs_detail {

inline double v1_at(const CsConfig& cfg, int sa) {
  return cfg.v1.size() > 0 ? cfg.v1[sa] : 0.0;
}
inline double v2_at(const CsConfig& cfg, int x) {
  return cfg.v2.size() > 0 ? cfg.v2[x] : cfg.eps_s;
}

}  // namespace cs_detail

/**
 * Assembles the sampled linear program over theta:
 *   min  loss^T Phi theta
 *   s.t. (mu0 + Phi theta)^T 1 = 1
 *        mu0 + Phi_{(x,a),:} theta >= v1(x,a)        for sampled (x,a)
 *        |(P-B)^T_{:,x} (mu0 + Phi theta)| <= v2(x)  for sampled x
 *        |theta_i| <= M.
 * The constant loss^T mu0 is kept out of the LP objective and added back by
 * the caller.  Duplicate draws simply appear as duplicate rows.
 */
inline LpProblem build_sampled_lp(const MdpModel& model,
                                  const FeatureMatrix& features,
                                  const CsConfig& config,
                                  const SampledConstraintSet& set) {
  const int d = features.dim();
  if (config.v1.size() > 0 && config.v1.size() != features.num_rows())
    throw std::invalid_argument("build_sampled_lp: v1 size mismatch");
  if (config.v2.size() > 0 && config.v2.size() != model.num_states())
    throw std::invalid_argument("build_sampled_lp: v2 size mismatch");
  if (!(config.M > 0.0)) throw std::invalid_argument("build_sampled_lp: M <= 0");

  LpProblem p;
  p.c = features.loss_dot_columns();
  p.a_eq = Mat::Zero(1, d);
  p.a_eq.row(0) = features.column_sums().transpose();
  p.b_eq = Vec::Constant(1, 1.0 - features.mu0().mu.sum());

  const long rows = static_cast<long>(set.nonneg_rows.size()) +
                    2 * static_cast<long>(set.stationarity_states.size());
  p.a_ge = Mat::Zero(rows, d);
  p.b_ge = Vec::Zero(rows);
  long r = 0;
  const Vec& mu0 = features.mu0().mu;
  for (const int sa : set.nonneg_rows) {
    p.a_ge.row(r) = features.row(sa).transpose();
    p.b_ge[r] = cs_detail::v1_at(config, sa) - mu0[sa];
    ++r;
  }
  const Vec mu0_resid = stationarity_residual(model, mu0);
  for (const int x : set.stationarity_states) {
    const Vec col = pb_column_product(model, features, x);
    const double allow = cs_detail::v2_at(config, x);
    p.a_ge.row(r) = -col.transpose();
    p.b_ge[r] = mu0_resid[x] - allow;
    ++r;
    p.a_ge.row(r) = col.transpose();
    p.b_ge[r] = -mu0_resid[x] - allow;
    ++r;
  }
  p.lo = Vec::Constant(d, -config.M);
  p.hi = Vec::Constant(d, config.M);
  return p;
}

struct CsAudit {
  LpStatus status = LpStatus::kInfeasible;
  double objective = 0.0;        // loss^T (mu0 + Phi theta), LP value + offset
  bool exact = false;            // true when violations were enumerated
  double v1_violation = 0.0;     // sum |negative part| (exact) or estimate
  double v2_violation = 0.0;     // ||(P-B)^T (mu0+Phi theta)||_1 or estimate
  double q1_violation_measure = 0.0;  // q1-mass of violated nonneg rows
  double q2_violation_measure = 0.0;  // q2-mass of violated stationarity rows
  double eps1 = 0.0, eps2 = 0.0; // guarantee levels used for the bounds
  double bound_v1 = 0.0;         // S_eff C1 eps1 + ||v1||_1
  double bound_v2 = 0.0;         // S_eff C2 eps2 + ||v2||_1
  double infeasibility = 0.0;
};

/**
 * One sampled-LP run: draw the constraint set from the config seed, solve,
 * and audit the solution.  Below the enumeration limit the audit reports the
 * exact violation totals and exact q-measures of violated constraints;
 * above it, Monte Carlo estimates over audit_samples fresh q-draws.
 * Infeasible programs are reported as a status, not an error.
 */
inline std::pair<Vec, CsAudit> run_constraint_sampling(
    const MdpModel& model, const FeatureMatrix& features,
    const SamplingModel& sampling, const CsConfig& config) {
  const SampledConstraintSet set =
      sample_constraints(sampling, config.k1, config.k2, config.seed);
  const LpProblem lp = build_sampled_lp(model, features, config, set);
  const LpSolution sol = solve_lp(lp);

  CsAudit audit;
  audit.status = sol.status;
  if (sol.status != LpStatus::kOptimal) {
    audit.infeasibility = sol.infeasibility;
    return {Vec(), audit};
  }
  const Vec theta = sol.x;
  audit.objective = sol.objective_value + model.loss().dot(features.mu0().mu);

  const int n_rows = features.num_rows();
  const int X = model.num_states();
  const double delta = config.delta > 0.0 ? config.delta : 0.1;
  audit.eps1 = config.epsilon > 0.0
                   ? config.epsilon
                   : implied_epsilon(config.k1, features.dim(), delta);
  audit.eps2 = config.epsilon > 0.0
                   ? config.epsilon
                   : implied_epsilon(config.k2, features.dim(), delta);
  // ||theta|| <= M sqrt(d) over the box; the bound only needs some valid
  // radius for the solution.
  const double s_eff = config.M * std::sqrt(static_cast<double>(features.dim()));
  double v1_norm = 0.0;
  if (config.v1.size() > 0)
    v1_norm = config.v1.cwiseAbs().sum();
  double v2_norm = config.v2.size() > 0 ? config.v2.cwiseAbs().sum()
                                        : config.eps_s * X;
  audit.bound_v1 = s_eff * sampling.C1 * audit.eps1 + v1_norm;
  audit.bound_v2 = s_eff * sampling.C2 * audit.eps2 + v2_norm;

  if (n_rows <= kEnumerationLimit) {
    audit.exact = true;
    const Vec w = features.apply(theta);
    for (int i = 0; i < n_rows; ++i) {
      audit.v1_violation += std::max(-w[i], 0.0);
      if (w[i] < cs_detail::v1_at(config, i) - 1e-12)
        audit.q1_violation_measure += sampling.q1.prob(i);
    }
    const Vec resid = stationarity_residual(model, w);
    audit.v2_violation = resid.lpNorm<1>();
    for (int x = 0; x < X; ++x)
      if (std::abs(resid[x]) > cs_detail::v2_at(config, x) + 1e-12)
        audit.q2_violation_measure += sampling.q2.prob(x);
  } else {
    audit.exact = false;
    Rng rng(derive_seed(config.seed, 0x0a0d17ULL));
    const long n = std::max<long>(config.audit_samples, 1);
    const Vec mu0_resid = stationarity_residual(model, features.mu0().mu);
    long v1_hits = 0, v2_hits = 0;
    double v1_mass = 0.0, v2_mass = 0.0;
    for (long s = 0; s < n; ++s) {
      const int sa = sampling.q1.sample(rng);
      const double w = features.mu0().mu[sa] + features.row(sa).dot(theta);
      if (w < cs_detail::v1_at(config, sa) - 1e-12) ++v1_hits;
      v1_mass += std::max(-w, 0.0) / sampling.q1.prob(sa);
      const int x = sampling.q2.sample(rng);
      const Vec col = pb_column_product(model, features, x);
      const double r = col.dot(theta) + mu0_resid[x];
      if (std::abs(r) > cs_detail::v2_at(config, x) + 1e-12) ++v2_hits;
      v2_mass += std::abs(r) / sampling.q2.prob(x);
    }
    audit.q1_violation_measure = static_cast<double>(v1_hits) / n;
    audit.q2_violation_measure = static_cast<double>(v2_hits) / n;
    audit.v1_violation = v1_mass / n;   // importance-weighted estimate
    audit.v2_violation = v2_mass / n;
  }
  return {theta, audit};
}

}  // namespace dualalp
