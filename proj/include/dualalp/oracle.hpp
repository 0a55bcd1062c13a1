#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualalp/features.hpp"
#include "dualalp/lp.hpp"
#include "dualalp/mdp.hpp"

namespace dualalp {

/// Exact small-instance size guard for the full dual linear program.
inline constexpr int kExactLpLimit = 5000;

struct ExactSolution {
  StateActionDistribution mu_star;  // optimal state-action frequencies
  double lambda_star = 0.0;         // optimal average loss
  Vec h_star;                       // differential value, h(0) = 0
  std::optional<Policy> policy;
};

struct DualLpResult {
  LpStatus status = LpStatus::kInfeasible;
  std::optional<ExactSolution> solution;
};

/**
 * Average-loss LP over state-action frequencies:
 *   min mu^T loss   s.t.  1^T mu = 1,  mu^T (P - B) = 0,  mu >= 0,
 * solved densely.  The differential values are recovered from the equality
 * multipliers, normalized to h(0) = 0.  Refuses instances with more than
 * kExactLpLimit state-action pairs.
 */
inline DualLpResult solve_dual_lp_exact(const MdpModel& model) {
  const int n = model.num_state_actions();
  const int X = model.num_states();
  if (n > kExactLpLimit) {
    std::ostringstream os;
    os << "solve_dual_lp_exact: " << n << " state-action pairs exceeds the "
       << "exact-oracle limit " << kExactLpLimit;
    throw std::runtime_error(os.str());
  }
  LpProblem p;
  p.c = model.loss();
  p.a_eq = Mat::Zero(1 + X, n);
  p.b_eq = Vec::Zero(1 + X);
  p.a_eq.row(0).setOnes();
  p.b_eq[0] = 1.0;
  const SpMatRow& kernel = model.kernel_rows();
  for (int i = 0; i < n; ++i) {
    const auto [x, a] = model.sa_split(i);
    for (SpMatRow::InnerIterator it(kernel, i); it; ++it)
      p.a_eq(1 + it.col(), i) += it.value();
    p.a_eq(1 + x, i) -= 1.0;
  }
  p.lo = Vec::Zero(n);
  p.hi = Vec::Constant(n, kLpInf);

  const LpSolution lp = solve_lp(p);
  DualLpResult result;
  result.status = lp.status;
  if (lp.status != LpStatus::kOptimal) return result;

  ExactSolution sol;
  Vec mu = lp.x.cwiseMax(0.0);
  mu /= mu.sum();
  sol.mu_star = StateActionDistribution::from_normalized(std::move(mu));
  sol.lambda_star = lp.objective_value;
  // Multipliers of the stationarity rows give the (negated) differential
  // values; the redundant row leaves one additive degree of freedom, fixed
  // by h(0) = 0.
  sol.h_star = -lp.dual_eq.tail(X);
  sol.h_star.array() -= sol.h_star[0];
  sol.policy = policy_from_vector(sol.mu_star.mu, X, model.num_actions());
  result.solution = std::move(sol);
  return result;
}

/**
 * Relative value iteration with reference state 0.
 *
 * Runs on the half-lazy kernel (1-a) I + a P with a = 1/2, which leaves
 * every policy's average loss unchanged but makes the chain aperiodic, so
 * the span seminorm contracts even for periodic models.  The differential
 * values of the original model are the lazy ones scaled by a.  Convergence:
 * span(Lh - h) <= tol; the reported lambda* is (Lh)(0) at convergence.
 */
inline ExactSolution relative_value_iteration(const MdpModel& model,
                                              double tol = 1e-10,
                                              long max_iterations = 2000000) {
  if (!(tol > 0.0)) throw std::invalid_argument("relative_value_iteration: tol");
  const int X = model.num_states();
  const int A = model.num_actions();
  const SpMatRow& p = model.kernel_rows();
  const double alpha = 0.5;

  Vec h = Vec::Zero(X);
  Vec lh(X);
  double lambda = 0.0;
  double span = std::numeric_limits<double>::infinity();
  const auto apply_bellman = [&](const Vec& value, Vec& out) {
    for (int x = 0; x < X; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (int a = 0; a < A; ++a) {
        const int sa = model.sa_index(x, a);
        double q = model.loss()[sa] + (1.0 - alpha) * value[x];
        for (SpMatRow::InnerIterator it(p, sa); it; ++it)
          q += alpha * it.value() * value[it.col()];
        best = std::min(best, q);
      }
      out[x] = best;
    }
  };

  long k = 0;
  for (; k < max_iterations; ++k) {
    apply_bellman(h, lh);
    const Vec diff = lh - h;
    span = diff.maxCoeff() - diff.minCoeff();
    lambda = lh[0];
    if (span <= tol) break;
    h = (lh.array() - lh[0]).matrix();
  }
  if (span > tol) {
    std::ostringstream os;
    os << "relative_value_iteration: span residual " << span << " > tol "
       << tol << " after " << max_iterations
       << " iterations (model unichain?)";
    throw std::runtime_error(os.str());
  }

  ExactSolution sol;
  sol.lambda_star = lambda;
  // Undo the lazy-kernel scaling so (lambda*, h*) satisfies the original
  // Bellman equation.
  sol.h_star = (alpha * (h.array() - h[0])).matrix();

  // Greedy policy on the original model (lowest action index on ties).
  Mat probs = Mat::Zero(X, A);
  for (int x = 0; x < X; ++x) {
    int best_a = 0;
    double best_q = std::numeric_limits<double>::infinity();
    for (int a = 0; a < A; ++a) {
      const int sa = model.sa_index(x, a);
      double q = model.loss()[sa];
      for (SpMatRow::InnerIterator it(p, sa); it; ++it)
        q += it.value() * sol.h_star[it.col()];
      if (q < best_q - 1e-13) {
        best_q = q;
        best_a = a;
      }
    }
    probs(x, best_a) = 1.0;
  }
  sol.policy = Policy(probs);
  sol.mu_star = stationary_distribution(model, *sol.policy, 1e-11);
  return sol;
}

/// Largest |lambda* + h(x) - min_a [loss + P h](x)| over states; zero when
/// (lambda, h) solves the average-loss Bellman equation.
inline double bellman_residual(const MdpModel& model, double lambda,
                               const Vec& h) {
  const SpMatRow& p = model.kernel_rows();
  double worst = 0.0;
  for (int x = 0; x < model.num_states(); ++x) {
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < model.num_actions(); ++a) {
      const int sa = model.sa_index(x, a);
      double q = model.loss()[sa];
      for (SpMatRow::InnerIterator it(p, sa); it; ++it)
        q += it.value() * h[it.col()];
      best = std::min(best, q);
    }
    worst = std::max(worst, std::abs(lambda + h[x] - best));
  }
  return worst;
}

struct ContractionBoundReport {
  double eps_prime = 0.0;    // total negative mass of u
  double eps_dprime = 0.0;   // ||u^T (P - B)||_1
  double tau = 0.0;          // spectral mixing estimate of the induced chain
  double lhs = 0.0;          // ||mu_u - u||_1
  double rhs = 0.0;          // tau ln(1/eps') (2 eps' + eps'') + 3 eps'
  bool holds = false;
};

/// Floor substituted for eps' in the logarithm when u has no negative mass.
inline constexpr double kEpsPrimeFloor = 1e-12;

/// Absolute slack in the holds verdict.  The left side is computed through
/// power iteration (tolerance 1e-11, amplified by the mixing time), so for
/// near-stationary inputs both sides vanish and the comparison would
/// otherwise flap on evaluation noise; any genuine violation dwarfs this.
inline constexpr double kContractionSlack = 1e-8;

/**
 * Checks the perturbation bound tying an almost-stationary signed vector u
 * (unit total mass) to the true stationary distribution of the policy
 * extracted from [u]_+:
 *   ||mu_u - u||_1 <= tau ln(1/eps') (2 eps' + eps'') + 3 eps'.
 */
inline ContractionBoundReport check_contraction_bound(const MdpModel& model,
                                                      const Vec& u) {
  if (u.size() != model.num_state_actions())
    throw std::invalid_argument("check_contraction_bound: size mismatch");
  if (std::abs(u.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("check_contraction_bound: u must sum to 1");
  ContractionBoundReport rep;
  for (int i = 0; i < u.size(); ++i) rep.eps_prime += std::max(-u[i], 0.0);
  rep.eps_dprime = stationarity_residual(model, u).lpNorm<1>();
  const Policy pi = policy_from_vector(u, model.num_states(),
                                       model.num_actions());
  const StateActionDistribution mu_u =
      stationary_distribution(model, pi, 1e-11);
  rep.tau = estimate_mixing_time(model, pi).tau;
  rep.lhs = (mu_u.mu - u).lpNorm<1>();
  const double eps_log = std::max(rep.eps_prime, kEpsPrimeFloor);
  rep.rhs = rep.tau * std::log(1.0 / eps_log) *
                (2.0 * rep.eps_prime + rep.eps_dprime) +
            3.0 * rep.eps_prime;
  rep.holds = rep.lhs <= rep.rhs + kContractionSlack;
  return rep;
}

struct SurrogateMinimum {
  Vec theta;
  double value = 0.0;
  int cuts = 0;
};

/**
 * Exact minimizer of the penalized surrogate over Theta.
 *
 * The surrogate is piecewise linear, so with slack variables it is an LP up
 * to the Euclidean ball constraint; the ball is handled by outer
 * approximation (start from the enclosing box, add the tangent cut at each
 * infeasible optimum).  The returned value is certified to lie within
 * `ball_tol` of the true constrained minimum from below.
 */
inline SurrogateMinimum minimize_surrogate_exact(const MdpModel& model,
                                                 const FeatureMatrix& features,
                                                 double H,
                                                 const ThetaDomain& domain,
                                                 double ball_tol = 1e-9,
                                                 int max_cuts = 500) {
  const int d = features.dim();
  const int n_rows = features.num_rows();
  const int X = model.num_states();
  const double S = domain.radius();
  // Variables: [theta (d), u (n_rows), w (X)].
  const int n = d + n_rows + X;
  LpProblem p;
  p.c = Vec::Zero(n);
  p.c.head(d) = features.loss_dot_columns();
  p.c.segment(d, n_rows).setConstant(H);
  p.c.tail(X).setConstant(H);
  p.a_eq = Mat::Zero(1, n);
  p.a_eq.row(0).head(d) = domain.normal().transpose();
  p.b_eq = Vec::Constant(1, domain.offset());

  const Vec& mu0 = features.mu0().mu;
  const Vec mu0_resid = stationarity_residual(model, mu0);
  const int base_rows = n_rows + 2 * X;
  Mat a_ge = Mat::Zero(base_rows, n);
  Vec b_ge = Vec::Zero(base_rows);
  for (int i = 0; i < n_rows; ++i) {
    // u_i + Phi_i theta >= -mu0_i  (so u_i >= negative part)
    a_ge.row(i).head(d) = features.row(i).transpose();
    a_ge(i, d + i) = 1.0;
    b_ge[i] = -mu0[i];
  }
  for (int x = 0; x < X; ++x) {
    const Vec col = pb_column_product(model, features, x);
    // w_x >= |pb_col(x)^T theta + mu0 residual(x)|
    a_ge.row(n_rows + 2 * x).head(d) = -col.transpose();
    a_ge(n_rows + 2 * x, d + n_rows + x) = 1.0;
    b_ge[n_rows + 2 * x] = mu0_resid[x];
    a_ge.row(n_rows + 2 * x + 1).head(d) = col.transpose();
    a_ge(n_rows + 2 * x + 1, d + n_rows + x) = 1.0;
    b_ge[n_rows + 2 * x + 1] = -mu0_resid[x];
  }
  p.a_ge = std::move(a_ge);
  p.b_ge = std::move(b_ge);
  p.lo = Vec::Zero(n);
  p.lo.head(d).setConstant(-S);
  p.hi = Vec::Constant(n, kLpInf);
  p.hi.head(d).setConstant(S);

  const double loss_offset = model.loss().dot(mu0);
  for (int cut = 0; cut <= max_cuts; ++cut) {
    const LpSolution lp = solve_lp(p);
    if (lp.status != LpStatus::kOptimal)
      throw std::runtime_error(
          "minimize_surrogate_exact: relaxation not optimal");
    const Vec theta = lp.x.head(d);
    const double norm = theta.norm();
    if (norm <= S * (1.0 + ball_tol)) {
      SurrogateMinimum out;
      out.theta = theta;
      out.value = lp.objective_value + loss_offset;
      out.cuts = cut;
      return out;
    }
    // Tangent cut: every ball point satisfies (theta*/||theta*||)^T x <= S.
    const Eigen::Index r = p.a_ge.rows();
    p.a_ge.conservativeResize(r + 1, n);
    p.a_ge.row(r).setZero();
    p.a_ge.row(r).head(d) = -(theta / norm).transpose();
    p.b_ge.conservativeResize(r + 1);
    p.b_ge[r] = -S;
  }
  throw std::runtime_error("minimize_surrogate_exact: cut budget exhausted");
}

}  // namespace dualalp
