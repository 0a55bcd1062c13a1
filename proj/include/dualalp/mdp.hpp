#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualalp/random.hpp"

namespace dualalp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMatRow = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SpMatCol = Eigen::SparseMatrix<double, Eigen::ColMajor>;
using Triplet = Eigen::Triplet<double>;

/**
 * Finite average-cost MDP with per-step losses in [0, 1].
 *
 * State-action pairs are indexed row-major: sa = x * A + a.  The transition
 * kernel is stored twice, once row-major (successor access for a given
 * (x, a)) and once column-major (predecessor access for a given x'), built
 * from the same triplet list so the two layouts agree entry for entry.
 */
class MdpModel {
 public:
  MdpModel(int num_states, int num_actions, Vec loss,
           const std::vector<Triplet>& transitions)
      : num_states_(num_states),
        num_actions_(num_actions),
        loss_(std::move(loss)) {
    if (num_states_ <= 0 || num_actions_ <= 0)
      throw std::invalid_argument("MdpModel: non-positive dimensions");
    const int rows = num_states_ * num_actions_;
    if (loss_.size() != rows)
      throw std::invalid_argument("MdpModel: loss size != X*A");
    for (int i = 0; i < rows; ++i) {
      if (!(loss_[i] >= 0.0 && loss_[i] <= 1.0))
        throw std::invalid_argument("MdpModel: loss outside [0,1]");
    }
    p_row_.resize(rows, num_states_);
    p_row_.setFromTriplets(transitions.begin(), transitions.end());
    p_row_.makeCompressed();
    p_col_ = p_row_;  // layout conversion, same entries
    p_col_.makeCompressed();
    for (int i = 0; i < rows; ++i) {
      double sum = 0.0;
      for (SpMatRow::InnerIterator it(p_row_, i); it; ++it) {
        if (it.value() < 0.0)
          throw std::invalid_argument("MdpModel: negative probability");
        sum += it.value();
      }
      if (std::abs(sum - 1.0) > 1e-12) {
        std::ostringstream os;
        os << "MdpModel: row " << i << " sums to " << sum;
        throw std::invalid_argument(os.str());
      }
    }
  }

  int num_states() const { return num_states_; }
  int num_actions() const { return num_actions_; }
  int num_state_actions() const { return num_states_ * num_actions_; }

  int sa_index(int x, int a) const { return x * num_actions_ + a; }
  std::pair<int, int> sa_split(int sa) const {
    return {sa / num_actions_, sa % num_actions_};
  }

  const Vec& loss() const { return loss_; }
  const SpMatRow& kernel_rows() const { return p_row_; }
  const SpMatCol& kernel_cols() const { return p_col_; }

 private:
  int num_states_;
  int num_actions_;
  Vec loss_;
  SpMatRow p_row_;
  SpMatCol p_col_;
};

/// Randomized stationary policy; row x holds the action distribution at x.
class Policy {
 public:
  explicit Policy(Mat probs) : probs_(std::move(probs)) {
    for (int x = 0; x < probs_.rows(); ++x) {
      double sum = 0.0;
      for (int a = 0; a < probs_.cols(); ++a) {
        if (probs_(x, a) < -1e-14)
          throw std::invalid_argument("Policy: negative probability");
        sum += probs_(x, a);
      }
      if (std::abs(sum - 1.0) > 1e-10)
        throw std::invalid_argument("Policy: row does not sum to 1");
    }
  }

  int num_states() const { return static_cast<int>(probs_.rows()); }
  int num_actions() const { return static_cast<int>(probs_.cols()); }
  double prob(int x, int a) const { return probs_(x, a); }
  const Mat& matrix() const { return probs_; }

 private:
  Mat probs_;
};

/// Distribution (or signed vector en route to one) over state-action pairs.
struct StateActionDistribution {
  Vec mu;
  bool normalized = false;

  static StateActionDistribution zero(int n) {
    return {Vec::Zero(n), false};
  }

  // Validates nonnegativity and unit mass.
  static StateActionDistribution from_normalized(Vec v) {
    double sum = 0.0;
    for (int i = 0; i < v.size(); ++i) {
      if (v[i] < -1e-12)
        throw std::invalid_argument("StateActionDistribution: negative mass");
      sum += v[i];
    }
    if (std::abs(sum - 1.0) > 1e-10)
      throw std::invalid_argument("StateActionDistribution: mass != 1");
    return {std::move(v), true};
  }
};

enum class MixingMethod { kSpectral, kTrajectoryContraction };

struct MixingEstimate {
  double tau = 0.0;
  MixingMethod method = MixingMethod::kSpectral;
};

/// Smallest mixing-time value ever reported; guards the -1/log|lambda_2|
/// formula when the chain mixes in a single step (|lambda_2| = 0).
inline constexpr double kMixingTimeFloor = 1e-6;

namespace detail {

// pi(a|x) proportional to the positive part of w, uniform on all-zero rows.
inline Mat clipped_policy_matrix(const Vec& w, int num_states,
                                 int num_actions) {
  Mat probs(num_states, num_actions);
  for (int x = 0; x < num_states; ++x) {
    double denom = 0.0;
    for (int a = 0; a < num_actions; ++a)
      denom += std::max(w[x * num_actions + a], 0.0);
    if (denom > 0.0) {
      for (int a = 0; a < num_actions; ++a)
        probs(x, a) = std::max(w[x * num_actions + a], 0.0) / denom;
    } else {
      probs.row(x).setConstant(1.0 / num_actions);
    }
  }
  return probs;
}

// State chain P_pi(x, x') = sum_a pi(a|x) P((x,a), x').
inline SpMatRow state_chain(const MdpModel& model, const Policy& pi) {
  std::vector<Triplet> trips;
  const SpMatRow& p = model.kernel_rows();
  for (int x = 0; x < model.num_states(); ++x) {
    for (int a = 0; a < model.num_actions(); ++a) {
      const double w = pi.prob(x, a);
      if (w == 0.0) continue;
      for (SpMatRow::InnerIterator it(p, model.sa_index(x, a)); it; ++it)
        trips.emplace_back(x, static_cast<int>(it.col()), w * it.value());
    }
  }
  SpMatRow chain(model.num_states(), model.num_states());
  chain.setFromTriplets(trips.begin(), trips.end());
  chain.makeCompressed();
  return chain;
}

}  // namespace detail

/// Policy extraction from a signed state-action vector: clip negatives,
/// renormalize per state, fall back to the uniform action distribution on
/// states whose clipped row has zero mass.
inline Policy policy_from_vector(const Vec& w, int num_states,
                                 int num_actions) {
  if (w.size() != static_cast<Eigen::Index>(num_states) * num_actions)
    throw std::invalid_argument("policy_from_vector: size mismatch");
  if (!w.allFinite())
    throw std::invalid_argument("policy_from_vector: non-finite entries");
  return Policy(detail::clipped_policy_matrix(w, num_states, num_actions));
}

/// Policy induced by theta: pi(a|x) proportional to [mu0 + Phi theta]_+.
/// `features` must provide num_rows() and row(i) -> dense coefficient vector.
template <class FeatureRows>
Policy policy_from_theta(const StateActionDistribution& mu0,
                         const FeatureRows& features, const Vec& theta,
                         int num_states, int num_actions) {
  const int rows = num_states * num_actions;
  if (mu0.mu.size() != rows || features.num_rows() != rows)
    throw std::invalid_argument("policy_from_theta: size mismatch");
  Vec w(rows);
  for (int i = 0; i < rows; ++i) w[i] = mu0.mu[i] + features.row(i).dot(theta);
  return policy_from_vector(w, num_states, num_actions);
}

/// Aggregates a state-action vector over actions (the B^T mu product; the
/// binary aggregation matrix itself is never materialized).
inline Vec sum_over_actions(const Vec& mu, int num_actions) {
  if (num_actions <= 0 || mu.size() % num_actions != 0)
    throw std::invalid_argument("sum_over_actions: bad action count");
  const int num_states = static_cast<int>(mu.size()) / num_actions;
  Vec out = Vec::Zero(num_states);
  for (int x = 0; x < num_states; ++x)
    for (int a = 0; a < num_actions; ++a) out[x] += mu[x * num_actions + a];
  return out;
}

/**
 * Stationary state-action distribution of `pi` by power iteration on the
 * state chain, started from the uniform distribution.
 *
 * Returns once the stationarity residual ||mu^T (P - B)||_1 of the current
 * iterate is <= tol.  The iteration cap is 10 * ceil(tau * ln(1/tol)) when a
 * mixing-time hint is supplied and 10^6 otherwise; hitting the cap raises an
 * error that reports both the cap and the last residual (the usual cause is
 * a periodic or reducible chain).
 */
inline StateActionDistribution stationary_distribution(
    const MdpModel& model, const Policy& pi, double tol = 1e-10,
    std::optional<double> tau_hint = std::nullopt) {
  if (!(tol > 0.0)) throw std::invalid_argument("stationary_distribution: tol");
  const int X = model.num_states();
  const int A = model.num_actions();
  const SpMatRow chain = detail::state_chain(model, pi);
  long cap = 1000000;
  if (tau_hint.has_value() && *tau_hint > 0.0)
    cap = 10 * static_cast<long>(std::ceil(*tau_hint * std::log(1.0 / tol)));
  cap = std::max<long>(cap, 16);

  Vec v = Vec::Constant(X, 1.0 / X);
  double residual = std::numeric_limits<double>::infinity();
  for (long k = 0; k < cap; ++k) {
    Vec next = chain.transpose() * v;
    residual = (next - v).lpNorm<1>();
    if (residual <= tol) {
      Vec mu(X * A);
      for (int x = 0; x < X; ++x)
        for (int a = 0; a < A; ++a) mu[x * A + a] = v[x] * pi.prob(x, a);
      mu /= mu.sum();
      return StateActionDistribution{std::move(mu), true};
    }
    v = next / next.sum();
  }
  std::ostringstream os;
  os << "stationary_distribution: no convergence after " << cap
     << " iterations (last residual " << residual << ", tol " << tol << ")";
  throw std::runtime_error(os.str());
}

/// mu^T loss for a normalized state-action distribution.
inline double average_loss(const StateActionDistribution& mu,
                           const Vec& loss) {
  if (!mu.normalized)
    throw std::invalid_argument("average_loss: distribution not normalized");
  if (mu.mu.size() != loss.size())
    throw std::invalid_argument("average_loss: size mismatch");
  return mu.mu.dot(loss);
}

/**
 * Empirical average loss along one trajectory of `pi` started in state 0.
 * The first `burn_in` steps are discarded.  Deterministic in (seed, model,
 * pi): all sampling goes through fixed inverse-CDF transforms.
 */
inline double simulate_average_loss(const MdpModel& model, const Policy& pi,
                                    long horizon, long burn_in,
                                    std::uint64_t seed) {
  if (horizon <= burn_in || burn_in < 0)
    throw std::invalid_argument("simulate_average_loss: need horizon > burn_in >= 0");
  Rng rng(seed);
  const SpMatRow& p = model.kernel_rows();
  const int A = model.num_actions();
  int x = 0;
  double total = 0.0;
  for (long t = 0; t < horizon; ++t) {
    // Action draw: linear CDF scan over the (small) action set.
    double u = rng.uniform01();
    int a = A - 1;
    double acc = 0.0;
    for (int cand = 0; cand < A; ++cand) {
      acc += pi.prob(x, cand);
      if (u < acc) {
        a = cand;
        break;
      }
    }
    const int sa = model.sa_index(x, a);
    if (t >= burn_in) total += model.loss()[sa];
    // Successor draw over the sparse kernel row.
    u = rng.uniform01();
    acc = 0.0;
    int next = x;
    for (SpMatRow::InnerIterator it(p, sa); it; ++it) {
      next = static_cast<int>(it.col());
      acc += it.value();
      if (u < acc) break;
    }
    x = next;
  }
  return total / static_cast<double>(horizon - burn_in);
}

/// Visit-frequency estimate of the stationary state-action distribution
/// along a single trajectory (used where exact power iteration is too big).
inline StateActionDistribution empirical_state_action_distribution(
    const MdpModel& model, const Policy& pi, long horizon, long burn_in,
    std::uint64_t seed) {
  if (horizon <= burn_in || burn_in < 0)
    throw std::invalid_argument("empirical_state_action_distribution: horizon");
  Rng rng(seed);
  const SpMatRow& p = model.kernel_rows();
  const int A = model.num_actions();
  Vec tally = Vec::Zero(model.num_state_actions());
  int x = 0;
  for (long t = 0; t < horizon; ++t) {
    double u = rng.uniform01();
    int a = A - 1;
    double acc = 0.0;
    for (int cand = 0; cand < A; ++cand) {
      acc += pi.prob(x, cand);
      if (u < acc) {
        a = cand;
        break;
      }
    }
    const int sa = model.sa_index(x, a);
    if (t >= burn_in) tally[sa] += 1.0;
    u = rng.uniform01();
    acc = 0.0;
    int next = x;
    for (SpMatRow::InnerIterator it(p, sa); it; ++it) {
      next = static_cast<int>(it.col());
      acc += it.value();
      if (u < acc) break;
    }
    x = next;
  }
  tally /= tally.sum();
  return {std::move(tally), true};
}

/**
 * Mixing-time estimate of the state chain under `pi`.
 *
 * Spectral method: tau = -1 / ln|lambda_2|, with |lambda_2| obtained by
 * deflated power iteration (left multiplication restricted to the zero-sum
 * subspace, which is invariant and excludes the Perron eigenvector).  The
 * growth rate is read off as a windowed geometric mean so complex pairs
 * converge in modulus.  Chains with |lambda_2| >= 1 - 1e-12 are rejected as
 * non-ergodic; estimates below the floor report kMixingTimeFloor.
 *
 * Trajectory-contraction method: smallest k such that every probing pair of
 * point masses contracts to <= e^{-1} of its initial L1 distance after k
 * steps.  All pairs are probed when X <= 64; otherwise 256 seeded random
 * pairs.
 */
inline MixingEstimate estimate_mixing_time(
    const MdpModel& model, const Policy& pi,
    MixingMethod method = MixingMethod::kSpectral) {
  const int X = model.num_states();
  if (X == 1) return {kMixingTimeFloor, method};
  const SpMatRow chain = detail::state_chain(model, pi);

  if (method == MixingMethod::kSpectral) {
    Rng rng(0x5eedULL);
    Vec y(X);
    for (int i = 0; i < X; ++i) y[i] = rng.uniform01() - 0.5;
    y.array() -= y.mean();
    double norm = y.norm();
    if (norm == 0.0) return {kMixingTimeFloor, method};
    y /= norm;

    const int window = 32;
    std::vector<double> log_ratios;
    log_ratios.reserve(window);
    double estimate = -1.0, prev_estimate = -1.0;
    int stable = 0;
    const long cap = 50000;
    for (long k = 0; k < cap; ++k) {
      Vec next = chain.transpose() * y;
      next.array() -= next.mean();  // numerical drift control
      const double r = next.norm();
      if (r < 1e-290) return {kMixingTimeFloor, method};
      if (log_ratios.size() == static_cast<std::size_t>(window))
        log_ratios.erase(log_ratios.begin());
      log_ratios.push_back(std::log(r));
      y = next / r;
      if (log_ratios.size() < static_cast<std::size_t>(window) && k < window)
        continue;
      double mean_log = 0.0;
      for (double v : log_ratios) mean_log += v;
      mean_log /= static_cast<double>(log_ratios.size());
      estimate = std::exp(mean_log);
      if (prev_estimate > 0.0 &&
          std::abs(estimate - prev_estimate) <= 1e-12 * std::max(estimate, 1e-30)) {
        if (++stable >= 16) break;
      } else {
        stable = 0;
      }
      prev_estimate = estimate;
    }
    if (estimate >= 1.0 - 1e-12) {
      std::ostringstream os;
      os << "estimate_mixing_time: |lambda_2| estimate " << estimate
         << " >= 1 - 1e-12; chain looks non-ergodic";
      throw std::runtime_error(os.str());
    }
    double tau = -1.0 / std::log(estimate);
    if (!(tau > kMixingTimeFloor)) tau = kMixingTimeFloor;
    return {tau, method};
  }

  // Trajectory contraction.
  if (X > 2000)
    throw std::runtime_error(
        "estimate_mixing_time: trajectory method limited to X <= 2000");
  std::vector<std::pair<int, int>> pairs;
  if (X <= 64) {
    for (int i = 0; i < X; ++i)
      for (int j = i + 1; j < X; ++j) pairs.emplace_back(i, j);
  } else {
    Rng rng(0x5eedULL);
    for (int n = 0; n < 256; ++n) {
      int i = static_cast<int>(rng.uniform_index(X));
      int j = static_cast<int>(rng.uniform_index(X));
      if (i == j) j = (j + 1) % X;
      pairs.emplace_back(i, j);
    }
  }
  Mat powers = Mat::Identity(X, X);
  const Mat dense_chain = Mat(chain);
  const double target = 2.0 * std::exp(-1.0);
  const long cap = 100000;
  for (long k = 1; k <= cap; ++k) {
    powers = powers * dense_chain;
    double worst = 0.0;
    for (const auto& [i, j] : pairs)
      worst = std::max(worst,
                       (powers.row(i) - powers.row(j)).lpNorm<1>());
    if (worst <= target)
      return {static_cast<double>(k), MixingMethod::kTrajectoryContraction};
  }
  std::ostringstream os;
  os << "estimate_mixing_time: no e^{-1} contraction within " << cap
     << " steps";
  throw std::runtime_error(os.str());
}

}  // namespace dualalp
