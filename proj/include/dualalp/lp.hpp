#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualalp {

inline constexpr double kLpInf = std::numeric_limits<double>::infinity();
inline constexpr double kLpPivotTol = 1e-9;   // pivot / reduced-cost threshold
inline constexpr double kLpCertTol = 1e-8;    // feasibility & duality checks

/// minimize c^T x  subject to  a_eq x = b_eq,  a_ge x >= b_ge,  lo <= x <= hi.
struct LpProblem {
  Eigen::VectorXd c;
  Eigen::MatrixXd a_eq;   // may have zero rows
  Eigen::VectorXd b_eq;
  Eigen::MatrixXd a_ge;
  Eigen::VectorXd b_ge;
  Eigen::VectorXd lo;     // -inf allowed
  Eigen::VectorXd hi;     // +inf allowed

  int num_vars() const { return static_cast<int>(c.size()); }

  void validate() const {
    const auto n = c.size();
    if (n == 0) throw std::invalid_argument("LpProblem: no variables");
    if (a_eq.rows() != b_eq.size() || a_ge.rows() != b_ge.size())
      throw std::invalid_argument("LpProblem: rhs size mismatch");
    if ((a_eq.rows() > 0 && a_eq.cols() != n) ||
        (a_ge.rows() > 0 && a_ge.cols() != n))
      throw std::invalid_argument("LpProblem: column count mismatch");
    if (lo.size() != n || hi.size() != n)
      throw std::invalid_argument("LpProblem: bound size mismatch");
    for (Eigen::Index j = 0; j < n; ++j)
      if (lo[j] > hi[j]) throw std::invalid_argument("LpProblem: lo > hi");
    if (!c.allFinite())
      throw std::invalid_argument("LpProblem: non-finite objective");
    if ((a_eq.size() && !a_eq.allFinite()) || !b_eq.allFinite() ||
        (a_ge.size() && !a_ge.allFinite()) || !b_ge.allFinite())
      throw std::invalid_argument("LpProblem: non-finite constraint data");
  }
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpSolution {
  LpStatus status = LpStatus::kInfeasible;
  Eigen::VectorXd x;
  double objective_value = 0.0;
  Eigen::VectorXd dual_eq;        // multipliers of the equality rows
  Eigen::VectorXd dual_ge;        // multipliers of the >= rows
  double duality_gap = 0.0;       // |primal - dual| at the final basis
  double max_violation = 0.0;     // worst constraint violation of x
  double infeasibility = 0.0;     // phase-1 residual when infeasible
  long pivots = 0;
};

namespace lp_detail {

using TableauMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Standard-form translation bookkeeping.  Variables with bounds [0, inf)
// pass through directly; everything else is split x = u+ - u- with finite
// bounds appended as inequality rows, which keeps the origin basis feasible
// for the box-constrained programs this solver mostly sees.
struct StdForm {
  int n_std = 0;
  std::vector<int> pos_col;   // index of u+ (or the single column)
  std::vector<int> neg_col;   // index of u-, -1 when not split
  // rows: [eq][ge][lo][hi]; per row the original source and sign flip
  std::vector<double> flip;
  std::vector<int> src_eq;    // row index into a_eq or -1
  std::vector<int> src_ge;    // row index into a_ge or -1
  Eigen::VectorXd b;
  std::vector<Eigen::VectorXd> rows;  // dense coefficient rows over n_std
};

inline StdForm build_standard_form(const LpProblem& p) {
  const int n = p.num_vars();
  StdForm f;
  f.pos_col.resize(n);
  f.neg_col.assign(n, -1);
  for (int j = 0; j < n; ++j) {
    f.pos_col[j] = f.n_std++;
    if (!(p.lo[j] == 0.0 && p.hi[j] == kLpInf)) f.neg_col[j] = f.n_std++;
  }
  auto expand = [&](const Eigen::VectorXd& row) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(f.n_std);
    for (int j = 0; j < n; ++j) {
      out[f.pos_col[j]] += row[j];
      if (f.neg_col[j] >= 0) out[f.neg_col[j]] -= row[j];
    }
    return out;
  };
  auto push = [&](Eigen::VectorXd row, double rhs, int eq_src, int ge_src) {
    f.rows.push_back(std::move(row));
    f.src_eq.push_back(eq_src);
    f.src_ge.push_back(ge_src);
    f.flip.push_back(1.0);
    f.b.conservativeResize(f.b.size() + 1);
    f.b[f.b.size() - 1] = rhs;
  };
  for (Eigen::Index i = 0; i < p.a_eq.rows(); ++i)
    push(expand(p.a_eq.row(i)), p.b_eq[i], static_cast<int>(i), -1);
  for (Eigen::Index i = 0; i < p.a_ge.rows(); ++i)
    push(expand(p.a_ge.row(i)), p.b_ge[i], -1, static_cast<int>(i));
  for (int j = 0; j < n; ++j) {
    if (f.neg_col[j] < 0) continue;  // plain nonnegative variable
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
    unit[j] = 1.0;
    if (p.lo[j] != -kLpInf) push(expand(unit), p.lo[j], -1, -1);       // x >= lo
    if (p.hi[j] != kLpInf) push(expand(-unit), -p.hi[j], -1, -1);      // -x >= -hi
  }
  return f;
}

}  // namespace lp_detail

/**
 * Dense two-phase primal simplex with Bland's anti-cycling rule.
 *
 * Self-contained on purpose: the toolkit's results should not depend on an
 * external solver's pivoting or tolerance behavior.  Deterministic: the same
 * problem always takes the same pivot path.  Scales to desk-size programs
 * (a few hundred genuine variables, tens of thousands of rows).
 *
 * Equality rows receive phase-1 artificials; >= rows get surplus slacks that
 * double as the initial basis wherever the origin already satisfies them.
 * Certification: the returned point is re-checked against every original
 * constraint and the simplex multipliers are used for a weak-duality check;
 * both residuals are reported in the solution.
 */
inline LpSolution solve_lp(const LpProblem& problem) {
  problem.validate();
  using lp_detail::TableauMat;
  lp_detail::StdForm f = lp_detail::build_standard_form(problem);
  const int m = static_cast<int>(f.rows.size());
  const int n_std = f.n_std;

  // Column layout: [structural | slack (one per ge-type row) | artificial].
  std::vector<int> slack_col(m, -1);
  int n_slack = 0;
  for (int i = 0; i < m; ++i)
    if (f.src_eq[i] < 0) slack_col[i] = n_slack++;

  // Sign-normalize rhs, then decide which rows start on their slack and
  // which need an artificial.
  std::vector<int> art_col(m, -1);
  int n_art = 0;
  for (int i = 0; i < m; ++i) {
    // Flip zero-rhs slack rows too: their slack then starts basic at level
    // zero and no artificial is needed.
    if (f.b[i] < 0.0 || (f.b[i] == 0.0 && slack_col[i] >= 0)) {
      f.rows[i] = -f.rows[i];
      f.b[i] = -f.b[i];
      f.flip[i] = -1.0;
    }
    // Post-flip slack coefficient is -flip; usable as basis only if +1.
    const bool slack_basic = slack_col[i] >= 0 && f.flip[i] < 0.0;
    if (!slack_basic) art_col[i] = n_art++;
  }

  const int total = n_std + n_slack + n_art;
  TableauMat t(m, total + 1);
  t.setZero();
  for (int i = 0; i < m; ++i) {
    t.row(i).head(n_std) = f.rows[i].transpose();
    if (slack_col[i] >= 0) t(i, n_std + slack_col[i]) = -f.flip[i];
    if (art_col[i] >= 0) t(i, n_std + n_slack + art_col[i]) = 1.0;
    t(i, total) = f.b[i];
  }

  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i)
    basis[i] = art_col[i] >= 0 ? n_std + n_slack + art_col[i]
                               : n_std + slack_col[i];

  Eigen::VectorXd z(total + 1);  // reduced costs + (negated) objective value
  const auto rebuild_z = [&](const Eigen::VectorXd& cost) {
    z.setZero();
    z.head(cost.size()) = cost;
    for (int i = 0; i < m; ++i) {
      const double cb = basis[i] < cost.size() ? cost[basis[i]] : 0.0;
      if (cb != 0.0) z -= cb * t.row(i).transpose();
    }
  };

  LpSolution sol;
  const long max_pivots = 20000 + 50L * (m + total);
  const auto run_phase = [&](bool block_artificials) -> int {
    // returns 0 = optimal, 1 = unbounded, 2 = pivot cap hit
    //
    // Entering rule: Dantzig (most negative reduced cost) for speed, with a
    // deterministic permanent switch to Bland's rule after a degenerate
    // stall, which restores the termination guarantee without giving up
    // reproducibility: the switch depends only on the pivot path.
    bool bland = false;
    long stall = 0;
    double last_level = z[total];
    for (;;) {
      int enter = -1;
      const int scan_end = block_artificials ? n_std + n_slack : total;
      if (bland) {
        for (int j = 0; j < scan_end; ++j) {
          if (z[j] < -kLpPivotTol) {
            enter = j;
            break;  // Bland: lowest eligible index
          }
        }
      } else {
        double best = -kLpPivotTol;
        for (int j = 0; j < scan_end; ++j) {
          if (z[j] < best) {
            best = z[j];
            enter = j;
          }
        }
      }
      if (enter < 0) return 0;
      int leave = -1;
      double best_ratio = 0.0;
      for (int i = 0; i < m; ++i) {
        const double a = t(i, enter);
        if (a <= kLpPivotTol) continue;
        const double ratio = t(i, total) / a;
        if (leave < 0 || ratio < best_ratio - 1e-15 ||
            (std::abs(ratio - best_ratio) <= 1e-15 &&
             basis[i] < basis[leave])) {
          leave = i;
          best_ratio = ratio;
        }
      }
      if (leave < 0) return 1;
      // Pivot.
      const double piv = t(leave, enter);
      t.row(leave) /= piv;
      for (int i = 0; i < m; ++i) {
        if (i == leave) continue;
        const double factor = t(i, enter);
        if (factor != 0.0) t.row(i) -= factor * t.row(leave);
      }
      const double zf = z[enter];
      if (zf != 0.0) z -= zf * t.row(leave).transpose();
      basis[leave] = enter;
      if (++sol.pivots > max_pivots)
        return 2;
      // Guard rhs against tiny negative drift so ratio tests stay sane.
      for (int i = 0; i < m; ++i)
        if (t(i, total) < 0.0 && t(i, total) > -1e-11) t(i, total) = 0.0;
      if (!bland) {
        // z[total] carries the negated phase objective and rises strictly on
        // non-degenerate pivots; a long flat run means degenerate cycling.
        if (z[total] > last_level + 1e-13 * (1.0 + std::abs(last_level))) {
          stall = 0;
        } else if (++stall > m + 64) {
          bland = true;
        }
        last_level = z[total];
      }
    }
  };

  // Phase 1: minimize the artificial mass.
  if (n_art > 0) {
    Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(total);
    phase1_cost.tail(n_art).setConstant(1.0);
    rebuild_z(phase1_cost);
    const int rc = run_phase(false);
    if (rc == 2) throw std::runtime_error("solve_lp: pivot cap exceeded (phase 1)");
    if (rc == 1)
      throw std::runtime_error("solve_lp: phase-1 objective unbounded (numerical)");
    double art_mass = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis[i] >= n_std + n_slack) art_mass += t(i, total);
    if (art_mass > kLpCertTol) {
      sol.status = LpStatus::kInfeasible;
      sol.infeasibility = art_mass;
      return sol;
    }
    // Drive zero-level artificials out of the basis where possible;
    // rows that cannot pivot are redundant and stay inert.
    for (int i = 0; i < m; ++i) {
      if (basis[i] < n_std + n_slack) continue;
      for (int j = 0; j < n_std + n_slack; ++j) {
        if (std::abs(t(i, j)) > kLpPivotTol) {
          const double piv = t(i, j);
          t.row(i) /= piv;
          for (int r = 0; r < m; ++r) {
            if (r == i) continue;
            const double factor = t(r, j);
            if (factor != 0.0) t.row(r) -= factor * t.row(i);
          }
          basis[i] = j;
          break;
        }
      }
    }
  }

  // Phase 2: the real objective over structural columns.
  Eigen::VectorXd cost = Eigen::VectorXd::Zero(total);
  for (int j = 0; j < problem.num_vars(); ++j) {
    cost[f.pos_col[j]] += problem.c[j];
    if (f.neg_col[j] >= 0) cost[f.neg_col[j]] -= problem.c[j];
  }
  rebuild_z(cost);
  const int rc = run_phase(true);
  if (rc == 2) throw std::runtime_error("solve_lp: pivot cap exceeded (phase 2)");
  if (rc == 1) {
    sol.status = LpStatus::kUnbounded;
    return sol;
  }

  // Recover the original variables.
  Eigen::VectorXd x_std = Eigen::VectorXd::Zero(total);
  for (int i = 0; i < m; ++i) x_std[basis[i]] = t(i, total);
  sol.x = Eigen::VectorXd::Zero(problem.num_vars());
  for (int j = 0; j < problem.num_vars(); ++j) {
    sol.x[j] = x_std[f.pos_col[j]];
    if (f.neg_col[j] >= 0) sol.x[j] -= x_std[f.neg_col[j]];
  }
  sol.objective_value = problem.c.dot(sol.x);
  sol.status = LpStatus::kOptimal;

  // Simplex multipliers: for each row, its marker column (artificial if one
  // was created, else the starting slack) is a unit column, so the z-row
  // value there is -y_i.
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    const int marker =
        art_col[i] >= 0 ? n_std + n_slack + art_col[i] : n_std + slack_col[i];
    y[i] = -z[marker];
  }
  sol.dual_eq = Eigen::VectorXd::Zero(problem.a_eq.rows());
  sol.dual_ge = Eigen::VectorXd::Zero(problem.a_ge.rows());
  for (int i = 0; i < m; ++i) {
    if (f.src_eq[i] >= 0) sol.dual_eq[f.src_eq[i]] = f.flip[i] * y[i];
    if (f.src_ge[i] >= 0) sol.dual_ge[f.src_ge[i]] = f.flip[i] * y[i];
  }
  sol.duality_gap = std::abs(f.b.dot(y) - cost.dot(x_std));

  // Post-hoc feasibility of the reported point.
  double viol = 0.0;
  for (Eigen::Index i = 0; i < problem.a_eq.rows(); ++i)
    viol = std::max(viol,
                    std::abs(problem.a_eq.row(i).dot(sol.x) - problem.b_eq[i]));
  for (Eigen::Index i = 0; i < problem.a_ge.rows(); ++i)
    viol = std::max(viol,
                    problem.b_ge[i] - problem.a_ge.row(i).dot(sol.x));
  for (int j = 0; j < problem.num_vars(); ++j) {
    if (problem.lo[j] != -kLpInf)
      viol = std::max(viol, problem.lo[j] - sol.x[j]);
    if (problem.hi[j] != kLpInf) viol = std::max(viol, sol.x[j] - problem.hi[j]);
  }
  sol.max_violation = std::max(viol, 0.0);
  return sol;
}

// ---------------------------------------------------------------------------
// Debug-friendly text form:
//   lp <n>
//   min  c_0 ... c_{n-1}
//   eq   a_0 ... a_{n-1} <rhs>     (repeated)
//   ge   a_0 ... a_{n-1} <rhs>     (repeated)
//   lo   v_0 ... v_{n-1}           ("-inf" allowed)
//   hi   v_0 ... v_{n-1}           ("inf" allowed)
// ---------------------------------------------------------------------------

inline std::string lp_to_text(const LpProblem& p) {
  std::ostringstream os;
  os.precision(17);
  const auto bound = [](double v) -> std::string {
    if (v == kLpInf) return "inf";
    if (v == -kLpInf) return "-inf";
    std::ostringstream b;
    b.precision(17);
    b << v;
    return b.str();
  };
  os << "lp " << p.num_vars() << '\n' << "min";
  for (Eigen::Index j = 0; j < p.c.size(); ++j) os << ' ' << p.c[j];
  os << '\n';
  for (Eigen::Index i = 0; i < p.a_eq.rows(); ++i) {
    os << "eq";
    for (Eigen::Index j = 0; j < p.a_eq.cols(); ++j) os << ' ' << p.a_eq(i, j);
    os << ' ' << p.b_eq[i] << '\n';
  }
  for (Eigen::Index i = 0; i < p.a_ge.rows(); ++i) {
    os << "ge";
    for (Eigen::Index j = 0; j < p.a_ge.cols(); ++j) os << ' ' << p.a_ge(i, j);
    os << ' ' << p.b_ge[i] << '\n';
  }
  os << "lo";
  for (Eigen::Index j = 0; j < p.lo.size(); ++j) os << ' ' << bound(p.lo[j]);
  os << '\n' << "hi";
  for (Eigen::Index j = 0; j < p.hi.size(); ++j) os << ' ' << bound(p.hi[j]);
  os << '\n';
  return os.str();
}

inline LpProblem lp_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string tag;
  int n = 0;
  if (!(in >> tag >> n) || tag != "lp" || n <= 0)
    throw std::runtime_error("lp_from_text: bad header");
  const auto parse_bound = [](const std::string& s) {
    if (s == "inf") return kLpInf;
    if (s == "-inf") return -kLpInf;
    return std::stod(s);
  };
  LpProblem p;
  p.c.resize(n);
  p.lo = Eigen::VectorXd::Constant(n, 0.0);
  p.hi = Eigen::VectorXd::Constant(n, kLpInf);
  std::vector<Eigen::VectorXd> eq_rows, ge_rows;
  std::vector<double> eq_rhs, ge_rhs;
  while (in >> tag) {
    if (tag == "min") {
      for (int j = 0; j < n; ++j) in >> p.c[j];
    } else if (tag == "eq" || tag == "ge") {
      Eigen::VectorXd row(n);
      double rhs;
      for (int j = 0; j < n; ++j) in >> row[j];
      in >> rhs;
      (tag == "eq" ? eq_rows : ge_rows).push_back(std::move(row));
      (tag == "eq" ? eq_rhs : ge_rhs).push_back(rhs);
    } else if (tag == "lo" || tag == "hi") {
      for (int j = 0; j < n; ++j) {
        std::string s;
        in >> s;
        (tag == "lo" ? p.lo : p.hi)[j] = parse_bound(s);
      }
    } else {
      throw std::runtime_error("lp_from_text: unknown tag " + tag);
    }
  }
  p.a_eq.resize(eq_rows.size(), n);
  p.b_eq.resize(eq_rhs.size());
  for (std::size_t i = 0; i < eq_rows.size(); ++i) {
    p.a_eq.row(i) = eq_rows[i].transpose();
    p.b_eq[i] = eq_rhs[i];
  }
  p.a_ge.resize(ge_rows.size(), n);
  p.b_ge.resize(ge_rhs.size());
  for (std::size_t i = 0; i < ge_rows.size(); ++i) {
    p.a_ge.row(i) = ge_rows[i].transpose();
    p.b_ge[i] = ge_rhs[i];
  }
  p.validate();
  return p;
}

}  // namespace dualalp
