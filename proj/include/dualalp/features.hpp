#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dualalp/mdp.hpp"
#include "dualalp/random.hpp"

namespace dualalp {

/// Enumeration over state-action pairs (or states) is only permitted below
/// this size; larger instances must declare analytical sampling constants.
inline constexpr int kEnumerationLimit = 100000;

/**
 * Feature matrix Phi (one row per state-action pair, d columns) together
 * with the base distribution mu0 of the restriction mu = mu0 + Phi theta.
 *
 * Internal storage is row-major sparse; row(i) hands out dense length-d
 * vectors, which is the access contract everything downstream relies on.
 * The aggregates loss^T Phi and 1^T Phi are fixed at construction, either
 * computed from the rows or declared by a pluggable builder.
 */
class FeatureMatrix {
 public:
  // Aggregates computed from the rows.
  FeatureMatrix(SpMatRow rows, StateActionDistribution mu0, const Vec& loss)
      : rows_(std::move(rows)), mu0_(std::move(mu0)) {
    validate(loss.size());
    lt_phi_ = rows_.transpose() * loss;
    onet_phi_ = rows_.transpose() * Vec::Ones(rows_.rows());
  }

  // Aggregates declared by the caller (pluggable constructor interface for
  // feature sets whose aggregates are known analytically).
  FeatureMatrix(SpMatRow rows, StateActionDistribution mu0, Vec lt_phi,
                Vec onet_phi)
      : rows_(std::move(rows)),
        mu0_(std::move(mu0)),
        lt_phi_(std::move(lt_phi)),
        onet_phi_(std::move(onet_phi)) {
    validate(rows_.rows());
    if (lt_phi_.size() != dim() || onet_phi_.size() != dim())
      throw std::invalid_argument("FeatureMatrix: aggregate size mismatch");
  }

  static FeatureMatrix from_dense(const Mat& phi, StateActionDistribution mu0,
                                  const Vec& loss) {
    std::vector<Triplet> trips;
    for (int i = 0; i < phi.rows(); ++i)
      for (int j = 0; j < phi.cols(); ++j)
        if (phi(i, j) != 0.0) trips.emplace_back(i, j, phi(i, j));
    SpMatRow rows(phi.rows(), phi.cols());
    rows.setFromTriplets(trips.begin(), trips.end());
    rows.makeCompressed();
    return FeatureMatrix(std::move(rows), std::move(mu0), loss);
  }

  int dim() const { return static_cast<int>(rows_.cols()); }
  int num_rows() const { return static_cast<int>(rows_.rows()); }

  Vec row(int i) const {
    Vec out = Vec::Zero(dim());
    for (SpMatRow::InnerIterator it(rows_, i); it; ++it)
      out[it.col()] = it.value();
    return out;
  }

  const SpMatRow& rows() const { return rows_; }
  const StateActionDistribution& mu0() const { return mu0_; }
  const Vec& loss_dot_columns() const { return lt_phi_; }   // loss^T Phi
  const Vec& column_sums() const { return onet_phi_; }      // 1^T Phi

  /// The vector mu0 + Phi theta.
  Vec apply(const Vec& theta) const {
    if (theta.size() != dim())
      throw std::invalid_argument("FeatureMatrix::apply: theta size");
    return mu0_.mu + rows_ * theta;
  }

 private:
  void validate(Eigen::Index expected_rows) const {
    if (rows_.rows() == 0 || rows_.cols() == 0)
      throw std::invalid_argument("FeatureMatrix: empty");
    if (mu0_.mu.size() != rows_.rows())
      throw std::invalid_argument("FeatureMatrix: mu0 size mismatch");
    if (expected_rows != rows_.rows())
      throw std::invalid_argument("FeatureMatrix: row count mismatch");
    // A nonzero mu0 must be a genuine distribution; all-zero is also legal.
    if (mu0_.mu.lpNorm<1>() > 0.0 && !mu0_.normalized)
      throw std::invalid_argument("FeatureMatrix: nonzero mu0 not normalized");
  }

  SpMatRow rows_;
  StateActionDistribution mu0_;
  Vec lt_phi_;
  Vec onet_phi_;
};

/// Residual vector (mu^T (P - B))(x') over states, for any signed
/// state-action vector w.  Zero exactly when w is stationary.
inline Vec stationarity_residual(const MdpModel& model, const Vec& w) {
  if (w.size() != model.num_state_actions())
    throw std::invalid_argument("stationarity_residual: size mismatch");
  Vec out = -sum_over_actions(w, model.num_actions());
  const SpMatRow& p = model.kernel_rows();
  for (int i = 0; i < model.num_state_actions(); ++i) {
    if (w[i] == 0.0) continue;
    for (SpMatRow::InnerIterator it(p, i); it; ++it)
      out[it.col()] += w[i] * it.value();
  }
  return out;
}

/// Column x' of (P - B)^T Phi as a dense length-d vector, assembled from the
/// column-layout kernel (incoming transitions) and the feature rows of x'.
inline Vec pb_column_product(const MdpModel& model,
                             const FeatureMatrix& features, int xprime) {
  if (xprime < 0 || xprime >= model.num_states())
    throw std::invalid_argument("pb_column_product: state out of range");
  Vec out = Vec::Zero(features.dim());
  const SpMatCol& pc = model.kernel_cols();
  const SpMatRow& rows = features.rows();
  for (SpMatCol::InnerIterator it(pc, xprime); it; ++it) {
    const int sa = static_cast<int>(it.row());
    for (SpMatRow::InnerIterator fit(rows, sa); fit; ++fit)
      out[fit.col()] += it.value() * fit.value();
  }
  for (int a = 0; a < model.num_actions(); ++a) {
    const int sa = model.sa_index(xprime, a);
    for (SpMatRow::InnerIterator fit(rows, sa); fit; ++fit)
      out[fit.col()] -= fit.value();
  }
  return out;
}

/// V1(theta) = sum of |negative part| of mu0 + Phi theta.
inline double violation_v1(const FeatureMatrix& features, const Vec& theta) {
  const Vec w = features.apply(theta);
  double total = 0.0;
  for (int i = 0; i < w.size(); ++i) total += std::max(-w[i], 0.0);
  return total;
}

/// V2(theta) = ||(mu0 + Phi theta)^T (P - B)||_1.
inline double violation_v2(const MdpModel& model, const FeatureMatrix& features,
                           const Vec& theta) {
  return stationarity_residual(model, features.apply(theta)).lpNorm<1>();
}

// ---------------------------------------------------------------------------
// Sampling distributions for the stochastic gradient estimate.
// ---------------------------------------------------------------------------

/// Discrete distribution with a deterministic inverse-CDF sampler and O(1)
/// (uniform) or O(log n) (weighted) draws.
class DiscreteDist {
 public:
  static DiscreteDist uniform(int n) {
    if (n <= 0) throw std::invalid_argument("DiscreteDist::uniform: n <= 0");
    DiscreteDist d;
    d.n_ = n;
    d.uniform_ = true;
    return d;
  }

  static DiscreteDist weighted(std::vector<double> weights) {
    if (weights.empty())
      throw std::invalid_argument("DiscreteDist::weighted: empty");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0))
        throw std::invalid_argument("DiscreteDist::weighted: negative weight");
      total += w;
    }
    if (!(total > 0.0))
      throw std::invalid_argument("DiscreteDist::weighted: zero mass");
    DiscreteDist d;
    d.n_ = static_cast<int>(weights.size());
    d.uniform_ = false;
    d.pmf_.resize(weights.size());
    d.cdf_.resize(weights.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      d.pmf_[i] = weights[i] / total;
      acc += d.pmf_[i];
      d.cdf_[i] = acc;
    }
    d.cdf_.back() = 1.0;
    return d;
  }

  int size() const { return n_; }

  double prob(int i) const {
    if (i < 0 || i >= n_) throw std::invalid_argument("DiscreteDist::prob");
    return uniform_ ? 1.0 / n_ : pmf_[i];
  }

  int sample(Rng& rng) const {
    if (uniform_) return static_cast<int>(rng.uniform_index(n_));
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(
        it - cdf_.begin(), static_cast<std::ptrdiff_t>(n_) - 1));
  }

 private:
  int n_ = 0;
  bool uniform_ = true;
  std::vector<double> pmf_;
  std::vector<double> cdf_;
};

/// q1 over state-action pairs, q2 over states, and the constants
///   C1 = max ||Phi_{(x,a),:}|| / q1(x,a),
///   C2 = max ||(P-B)^T_{:,x} Phi|| / q2(x)
/// that bound the importance-weighted gradient terms.
struct SamplingModel {
  DiscreteDist q1;
  DiscreteDist q2;
  double C1 = 0.0;
  double C2 = 0.0;
};

/// Exact (C1, C2) by enumeration.  Guarded: only instances with at most
/// kEnumerationLimit state-action pairs may enumerate; larger ones must use
/// make_sampling_model_declared.
inline std::pair<double, double> sampling_constants(
    const FeatureMatrix& features, const MdpModel& model,
    const DiscreteDist& q1, const DiscreteDist& q2) {
  const int rows = features.num_rows();
  if (rows > kEnumerationLimit) {
    std::ostringstream os;
    os << "sampling_constants: " << rows << " state-action pairs exceeds the "
       << "enumeration limit " << kEnumerationLimit
       << "; declare analytical bounds instead";
    throw std::runtime_error(os.str());
  }
  if (q1.size() != rows || q2.size() != model.num_states())
    throw std::invalid_argument("sampling_constants: sampler size mismatch");
  double c1 = 0.0;
  for (int i = 0; i < rows; ++i) {
    const double norm = features.row(i).norm();
    if (norm == 0.0) continue;
    const double q = q1.prob(i);
    if (q <= 0.0)
      throw std::runtime_error(
          "sampling_constants: q1 vanishes on a row with nonzero features");
    c1 = std::max(c1, norm / q);
  }
  double c2 = 0.0;
  for (int x = 0; x < model.num_states(); ++x) {
    const double norm = pb_column_product(model, features, x).norm();
    if (norm == 0.0) continue;
    const double q = q2.prob(x);
    if (q <= 0.0)
      throw std::runtime_error(
          "sampling_constants: q2 vanishes on a state with nonzero column");
    c2 = std::max(c2, norm / q);
  }
  return {c1, c2};
}

inline SamplingModel make_sampling_model(const FeatureMatrix& features,
                                         const MdpModel& model,
                                         DiscreteDist q1, DiscreteDist q2) {
  auto [c1, c2] = sampling_constants(features, model, q1, q2);
  return {std::move(q1), std::move(q2), c1, c2};
}

inline SamplingModel make_sampling_model_declared(DiscreteDist q1,
                                                  DiscreteDist q2, double c1,
                                                  double c2) {
  if (!(c1 > 0.0) || !(c2 > 0.0))
    throw std::invalid_argument("make_sampling_model_declared: bounds <= 0");
  return {std::move(q1), std::move(q2), c1, c2};
}

// ---------------------------------------------------------------------------
// Parameter domain Theta = {theta : a^T theta = b, ||theta||_2 <= S}.
// ---------------------------------------------------------------------------

class ThetaDomain {
 public:
  ThetaDomain(double S, Vec a, double b)
      : S_(S), a_(std::move(a)), b_(b) {
    if (!(S_ > 0.0)) throw std::invalid_argument("ThetaDomain: S <= 0");
    const double norm2 = a_.squaredNorm();
    if (norm2 == 0.0) {
      if (std::abs(b_) > 1e-14)
        throw std::invalid_argument(
            "ThetaDomain: empty (a = 0 with nonzero offset)");
      center_ = Vec::Zero(a_.size());
      hyperplane_active_ = false;
    } else {
      center_ = (b_ / norm2) * a_;
      hyperplane_active_ = true;
      if (center_.norm() > S_ * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "ThetaDomain: empty (|b|/||a|| = " << center_.norm() << " > S = "
           << S_ << ")";
        throw std::invalid_argument(os.str());
      }
    }
  }

  int dim() const { return static_cast<int>(a_.size()); }
  double radius() const { return S_; }
  const Vec& normal() const { return a_; }
  double offset() const { return b_; }

  /**
   * Exact Euclidean projection onto the hyperplane-ball intersection:
   * project onto the hyperplane first; if the result leaves the ball, move
   * to the nearest point of the sphere-hyperplane circle.  When the
   * hyperplane projection coincides with the circle center the direction is
   * ambiguous; a fixed in-plane unit vector breaks the tie deterministically.
   */
  Vec project(const Vec& theta) const {
    if (theta.size() != a_.size())
      throw std::invalid_argument("ThetaDomain::project: size mismatch");
    Vec p = theta;
    if (hyperplane_active_)
      p -= ((a_.dot(theta) - b_) / a_.squaredNorm()) * a_;
    if (p.norm() <= S_) return p;
    if (!hyperplane_active_) return (S_ / p.norm()) * p;
    const double r2 = S_ * S_ - center_.squaredNorm();
    const double r = r2 > 0.0 ? std::sqrt(r2) : 0.0;
    Vec dir = p - center_;
    const double dn = dir.norm();
    if (dn > 1e-300) return center_ + (r / dn) * dir;
    if (r == 0.0 || a_.size() < 2) return center_;
    return center_ + r * in_plane_unit();
  }

  bool contains(const Vec& theta, double tol = 1e-9) const {
    if (theta.size() != a_.size()) return false;
    if (theta.norm() > S_ + tol) return false;
    if (hyperplane_active_ && std::abs(a_.dot(theta) - b_) > tol) return false;
    return true;
  }

 private:
  // Deterministic unit vector inside the hyperplane through the origin:
  // take the canonical basis vector least aligned with the normal and
  // project it in.
  Vec in_plane_unit() const {
    int k = 0;
    for (int i = 1; i < a_.size(); ++i)
      if (std::abs(a_[i]) < std::abs(a_[k])) k = i;
    Vec e = Vec::Zero(a_.size());
    e[k] = 1.0;
    e -= (a_[k] / a_.squaredNorm()) * a_;
    return e / e.norm();
  }

  double S_;
  Vec a_;
  double b_;
  Vec center_;
  bool hyperplane_active_;
};

}  // namespace dualalp
