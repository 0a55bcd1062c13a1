#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dualalp/oracle.hpp"
#include "dualalp/sgd.hpp"
#include "test_support.hpp"

using namespace dualalp;
using Catch::Approx;

TEST_CASE("single-state exact solution picks the cheapest action",
          "[oracle]") {
  Vec loss(2);
  loss << 0.4, 0.1;
  std::vector<Triplet> t{{0, 0, 1.0}, {1, 0, 1.0}};
  const MdpModel m(1, 2, loss, t);

  const auto lp = solve_dual_lp_exact(m);
  REQUIRE(lp.status == LpStatus::kOptimal);
  REQUIRE(lp.solution->lambda_star == Approx(0.1).margin(1e-10));
  REQUIRE(lp.solution->mu_star.mu[0] == Approx(0.0).margin(1e-10));
  REQUIRE(lp.solution->mu_star.mu[1] == Approx(1.0).margin(1e-10));
  REQUIRE(lp.solution->h_star.size() == 1);
  REQUIRE(lp.solution->h_star[0] == 0.0);

  const ExactSolution rvi = relative_value_iteration(m);
  REQUIRE(rvi.lambda_star == Approx(0.1).margin(1e-9));
  REQUIRE(rvi.h_star[0] == 0.0);
}

TEST_CASE("periodic two-state cycle averages its losses", "[oracle]") {
  Vec loss(2);
  loss << 0.2, 0.6;
  std::vector<Triplet> t{{0, 1, 1.0}, {1, 0, 1.0}};
  const MdpModel m(2, 1, loss, t);

  const auto lp = solve_dual_lp_exact(m);
  REQUIRE(lp.status == LpStatus::kOptimal);
  REQUIRE(lp.solution->lambda_star == Approx(0.4).margin(1e-10));
  REQUIRE(lp.solution->mu_star.mu[0] == Approx(0.5).margin(1e-10));

  // Value iteration must converge despite the periodic kernel.
  const ExactSolution rvi = relative_value_iteration(m);
  REQUIRE(rvi.lambda_star == Approx(0.4).margin(1e-8));
}

TEST_CASE("constant loss makes every policy optimal", "[oracle]") {
  Rng rng(167);
  Vec loss = Vec::Constant(8, 0.35);
  std::vector<Triplet> t;
  for (int sa = 0; sa < 8; ++sa) {
    Vec w(4);
    double total = 0.0;
    for (int y = 0; y < 4; ++y) total += (w[y] = rng.uniform01() + 0.1);
    for (int y = 0; y < 4; ++y) t.emplace_back(sa, y, w[y] / total);
  }
  const MdpModel m(4, 2, loss, t);
  const auto lp = solve_dual_lp_exact(m);
  REQUIRE(lp.solution->lambda_star == Approx(0.35).margin(1e-9));
  const ExactSolution rvi = relative_value_iteration(m);
  REQUIRE(rvi.lambda_star == Approx(0.35).margin(1e-9));
  REQUIRE(rvi.h_star.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("the two exact oracles agree on random instances", "[oracle]") {
  Rng rng(173);
  for (int trial = 0; trial < 6; ++trial) {
    const MdpModel m = testsup::random_ergodic_mdp(6, 2, rng);
    const auto lp = solve_dual_lp_exact(m);
    REQUIRE(lp.status == LpStatus::kOptimal);
    const ExactSolution rvi = relative_value_iteration(m);
    REQUIRE(std::abs(lp.solution->lambda_star - rvi.lambda_star) <= 1e-6);

    // Solution invariants.
    const Vec& mu = lp.solution->mu_star.mu;
    REQUIRE(mu.sum() == Approx(1.0).margin(1e-10));
    REQUIRE(mu.minCoeff() >= 0.0);
    REQUIRE(stationarity_residual(m, mu).lpNorm<1>() <= 1e-7);
    REQUIRE(lp.solution->lambda_star == Approx(mu.dot(m.loss())).margin(1e-9));

    // Both differential-value vectors solve the Bellman equation.
    REQUIRE(bellman_residual(m, rvi.lambda_star, rvi.h_star) <= 1e-8);
    REQUIRE(bellman_residual(m, lp.solution->lambda_star,
                             lp.solution->h_star) <= 1e-7);
    REQUIRE(lp.solution->h_star[0] == 0.0);
    REQUIRE(rvi.h_star[0] == 0.0);
    REQUIRE((lp.solution->h_star - rvi.h_star).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("optimal support satisfies complementary slackness", "[oracle]") {
  Rng rng(179);
  for (int trial = 0; trial < 5; ++trial) {
    const MdpModel m = testsup::random_ergodic_mdp(5, 2, rng);
    const auto lp = solve_dual_lp_exact(m);
    const Vec& mu = lp.solution->mu_star.mu;
    const Vec& h = lp.solution->h_star;
    const double lambda = lp.solution->lambda_star;
    const SpMatRow& p = m.kernel_rows();
    for (int i = 0; i < m.num_state_actions(); ++i) {
      if (mu[i] <= 1e-8) continue;
      const auto [x, a] = m.sa_split(i);
      double q = m.loss()[i];
      for (SpMatRow::InnerIterator it(p, i); it; ++it)
        q += it.value() * h[it.col()];
      // Any action carrying stationary mass attains the Bellman minimum.
      REQUIRE(std::abs(q - (lambda + h[x])) <= 1e-6);
    }
  }
}

TEST_CASE("oversized instances are refused by the exact oracle", "[oracle]") {
  // 5001 state-action pairs with a self-loop chain.
  const int X = 5001;
  Vec loss = Vec::Constant(X, 0.5);
  std::vector<Triplet> t;
  for (int x = 0; x < X; ++x) t.emplace_back(x, x, 1.0);
  const MdpModel m(X, 1, loss, t);
  REQUIRE_THROWS_WITH(solve_dual_lp_exact(m),
                      Catch::Matchers::ContainsSubstring("exact-oracle limit"));
}

TEST_CASE("value iteration handles the single-state edge case", "[oracle]") {
  Vec loss(3);
  loss << 0.9, 0.2, 0.5;
  std::vector<Triplet> t{{0, 0, 1.0}, {1, 0, 1.0}, {2, 0, 1.0}};
  const MdpModel m(1, 3, loss, t);
  const ExactSolution sol = relative_value_iteration(m);
  REQUIRE(sol.lambda_star == Approx(0.2).margin(1e-12));
  REQUIRE(sol.h_star.size() == 1);
  REQUIRE(sol.h_star[0] == 0.0);
  REQUIRE(sol.policy.has_value());
  REQUIRE(sol.policy->prob(0, 1) == Approx(1.0));
}

TEST_CASE("contraction bound report on exact and perturbed inputs",
          "[oracle]") {
  Rng rng(181);
  const MdpModel m = testsup::random_ergodic_mdp(5, 2, rng);
  const Policy pi = testsup::random_policy(5, 2, rng);
  const Vec mu = testsup::stationary_mu_oracle(m, pi);

  SECTION("a stationary distribution has negligible defect") {
    const ContractionBoundReport rep = check_contraction_bound(m, mu);
    REQUIRE(rep.eps_prime == 0.0);
    REQUIRE(rep.eps_dprime <= 1e-10);
    REQUIRE(rep.lhs <= 1e-8);
    REQUIRE(rep.holds);
  }
  SECTION("perturbations keep the bound valid") {
    for (int trial = 0; trial < 30; ++trial) {
      Vec u = mu;
      const int i = static_cast<int>(rng.uniform_index(10));
      const int j = static_cast<int>(rng.uniform_index(10));
      const double delta = 0.2 * rng.uniform01() * (rng.uniform01() < 0.5 ? -1 : 1);
      u[i] += delta;
      u[j] -= delta;  // keep unit total mass
      const ContractionBoundReport rep = check_contraction_bound(m, u);
      REQUIRE(rep.holds);
      REQUIRE(rep.lhs <= rep.rhs + kContractionSlack);
    }
  }
  SECTION("unit total mass is required") {
    Vec u = mu;
    u[0] += 0.25;
    REQUIRE_THROWS_AS(check_contraction_bound(m, u), std::invalid_argument);
  }
}

TEST_CASE("exact surrogate minimizer certifies its own optimum", "[oracle]") {
  Rng rng(191);
  const MdpModel m = testsup::random_ergodic_mdp(4, 2, rng);
  const FeatureMatrix f = testsup::identity_features(m);
  const double H = 10.0;
  const ThetaDomain dom(2.0, f.column_sums(), 1.0);
  const SurrogateMinimum mn = minimize_surrogate_exact(m, f, H, dom);

  // The reported value matches the surrogate at the reported minimizer
  // (after projecting the outer-approximation point back onto the ball).
  const Vec inside = dom.project(mn.theta);
  REQUIRE(surrogate_cost(m, f, H, inside) <= mn.value + 1e-6);
  REQUIRE(dom.contains(inside, 1e-9));

  // No sampled feasible point beats the reported minimum.
  for (int trial = 0; trial < 200; ++trial) {
    const Vec theta = testsup::random_theta(dom, 4.0, rng);
    REQUIRE(surrogate_cost(m, f, H, theta) >= mn.value - 1e-8);
  }

  // With identity features and a high penalty the surrogate minimum equals
  // the exact optimal average loss.
  const auto lp = solve_dual_lp_exact(m);
  REQUIRE(mn.value == Approx(lp.solution->lambda_star).margin(1e-6));
}

TEST_CASE("exact surrogate minimizer matches a long descent run", "[oracle]") {
  Rng rng(193);
  const MdpModel m = testsup::random_ergodic_mdp(3, 2, rng);
  const FeatureMatrix f = testsup::identity_features(m);
  const double H = 6.0;
  const ThetaDomain dom(2.0, f.column_sums(), 1.0);
  const SurrogateMinimum mn = minimize_surrogate_exact(m, f, H, dom);

  const SamplingModel sampling = make_sampling_model(
      f, m, DiscreteDist::uniform(6), DiscreteDist::uniform(3));
  SgdConfig cfg;
  cfg.T = 60000;
  cfg.H = H;
  cfg.S = 2.0;
  cfg.seed = 4;
  const double gbound = gradient_norm_bound(6, H, sampling.C1, sampling.C2);
  cfg.eta = LearningRate::constant(
      2.0 / (gbound * std::sqrt(static_cast<double>(cfg.T))));
  const SgdTrace trace = run_sgd(cfg, m, f, sampling);
  const double achieved = surrogate_cost(m, f, H, trace.theta_hat);
  REQUIRE(achieved >= mn.value - 1e-8);
  REQUIRE(achieved - mn.value <= 0.25);
}
