// Experiment runner: builds the queueing benchmark (or loads a model file),
// runs the SGD and constraint-sampling solvers plus the exact oracles, and
// writes deterministic CSV artifacts.  Every output starts with a comment
// header carrying the tool version, command, root seed, and config echo, and
// re-running any command with identical inputs reproduces the bytes exactly.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dualalp/constraint_sampling.hpp"
#include "dualalp/features.hpp"
#include "dualalp/io.hpp"
#include "dualalp/lp.hpp"
#include "dualalp/mdp.hpp"
#include "dualalp/oracle.hpp"
#include "dualalp/queueing.hpp"
#include "dualalp/random.hpp"
#include "dualalp/sgd.hpp"
#include "dualalp/version.hpp"

namespace {

using namespace dualalp;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  std::string preset;
  int trials = 0;  // 0: preset default
  bool full_scale = false;
};

Config load_config(const CommonOpts& opt) {
  return opt.config_path.empty() ? Config() : Config::load(opt.config_path);
}

std::vector<std::string> csv_header_comments(const std::string& command,
                                             const CommonOpts& opt,
                                             const Config& cfg) {
  std::vector<std::string> lines;
  lines.push_back(std::string("dualalp ") + kVersion);
  lines.push_back("command: " + command);
  lines.push_back("seed: " + fmt_int(static_cast<long long>(opt.seed)));
  const std::string echo = cfg.echo();
  lines.push_back("config: " + (echo.empty() ? std::string("(defaults)") : echo));
  return lines;
}

std::string out_path(const CommonOpts& opt, const std::string& file) {
  std::filesystem::create_directories(opt.out_dir);
  return (std::filesystem::path(opt.out_dir) / file).string();
}

/// Ordered-result worker pool: runs fn(0..n-1) on up to 8 threads and
/// rethrows the first worker exception after joining.
template <class Fn>
void parallel_for(int n, Fn&& fn) {
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  const int workers = std::max(1, std::min({hw > 0 ? hw : 1, 8, n}));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Benchmark assembly shared by the subcommands.
// ---------------------------------------------------------------------------

struct Benchmark {
  QueueNetConfig qc;
  MdpModel model;
  Policy longer;
  Policy lbfs;
  StateActionDistribution mu_longer;
  StateActionDistribution mu_lbfs;
  bool exact_scale = false;  // exact stationary evaluation is affordable
};

Benchmark build_benchmark(const Config& cfg, const CommonOpts& opt) {
  QueueNetConfig qc = queue_config_from(cfg);
  if (opt.full_scale) {
    const QueueNetConfig full = QueueNetConfig::full_scale();
    qc.b1 = full.b1;
    qc.b2 = full.b2;
    qc.b3 = full.b3;
    qc.b4 = full.b4;
  }
  MdpModel model = build_queue_mdp(qc);
  Policy longer = heuristic_policy(QueueHeuristic::kLonger, qc);
  Policy lbfs = heuristic_policy(QueueHeuristic::kLbfs, qc);
  const bool exact = model.num_state_actions() <= kEnumerationLimit;
  StateActionDistribution mu_longer =
      exact ? stationary_distribution(model, longer)
            : empirical_state_action_distribution(
                  model, longer, cfg.get_int("mu_sim_steps", 2000000),
                  cfg.get_int("mu_sim_burn_in", 100000), derive_seed(opt.seed, 9001));
  StateActionDistribution mu_lbfs =
      exact ? stationary_distribution(model, lbfs)
            : empirical_state_action_distribution(
                  model, lbfs, cfg.get_int("mu_sim_steps", 2000000),
                  cfg.get_int("mu_sim_burn_in", 100000), derive_seed(opt.seed, 9002));
  return Benchmark{qc,
                   std::move(model),
                   std::move(longer),
                   std::move(lbfs),
                   std::move(mu_longer),
                   std::move(mu_lbfs),
                   exact};
}

StateActionDistribution choose_mu0(const Benchmark& b, const std::string& kind) {
  const long xa = b.model.num_state_actions();
  if (kind == "zero") return StateActionDistribution::zero(static_cast<int>(xa));
  if (kind == "longer") return b.mu_longer;
  if (kind == "lbfs") return b.mu_lbfs;
  if (kind == "best") {
    const double l1 = average_loss(b.mu_longer, b.model.loss());
    const double l2 = average_loss(b.mu_lbfs, b.model.loss());
    return l1 <= l2 ? b.mu_longer : b.mu_lbfs;
  }
  throw std::invalid_argument("unknown mu0 kind '" + kind +
                              "' (expected zero|longer|lbfs|best)");
}

QueueSampler sampler_kind(const Config& cfg) {
  const std::string s = cfg.get_string("sampler", "uniform");
  if (s == "uniform") return QueueSampler::kUniform;
  if (s == "feature-norm") return QueueSampler::kFeatureNorm;
  throw std::invalid_argument("unknown sampler '" + s +
                              "' (expected uniform|feature-norm)");
}

/// Average loss of a policy: exact stationary evaluation when affordable,
/// otherwise a single simulated trajectory.  Returns (value, method).
std::pair<double, std::string> policy_loss(const Benchmark& b, const Policy& pi,
                                           const Config& cfg, std::uint64_t seed) {
  if (b.exact_scale) {
    const StateActionDistribution mu = stationary_distribution(b.model, pi);
    return {average_loss(mu, b.model.loss()), "stationary"};
  }
  const long horizon = cfg.get_int("eval_sim_steps", 1000000);
  const long burn = cfg.get_int("eval_sim_burn_in", 100000);
  return {simulate_average_loss(b.model, pi, horizon, burn, seed), "simulated"};
}

// ---------------------------------------------------------------------------
// run-sgd
// ---------------------------------------------------------------------------

int cmd_run_sgd(const CommonOpts& opt) {
  const Config cfg = load_config(opt);
  const Benchmark b = build_benchmark(cfg, opt);
  const StateActionDistribution mu0 =
      choose_mu0(b, cfg.get_string("mu0", "zero"));
  const QueueFeatureBuild fb =
      build_queue_features(b.qc, b.mu_longer, b.mu_lbfs, mu0, &std::cerr);
  const FeatureMatrix& features = fb.features;
  const SamplingModel sampling =
      make_queue_sampling(b.model, features, sampler_kind(cfg), fb.max_row_norm);

  SgdConfig sc;
  const std::string preset = opt.preset.empty() ? "halving" : opt.preset;
  if (preset == "guarantee") {
    sc = guarantee_preset(cfg.get_double("epsilon", 0.1),
                          cfg.get_double("S", 2.0), features.dim(), sampling.C1,
                          sampling.C2, opt.seed);
  } else if (preset == "halving") {
    sc.T = cfg.get_int("T", 20000);
    sc.H = cfg.get_double("H", 2.0);
    sc.S = cfg.get_double("S", 2.0);
    sc.eta = LearningRate::halving(cfg.get_double("eta0", 1e-4),
                                   cfg.get_int("halving_period", 2000));
    sc.seed = opt.seed;
  } else {
    throw std::invalid_argument("unknown run-sgd preset '" + preset +
                                "' (expected guarantee|halving)");
  }
  sc.batch_size = cfg.get_int("batch", 1);
  sc.checkpoint_every = sc.T;  // trace rows are assembled here instead

  const long every =
      std::max<long>(cfg.get_int("checkpoint_every", std::max<long>(sc.T / 200, 1)), 1);

  std::vector<std::vector<std::string>> rows;
  Vec running_sum = Vec::Zero(features.dim());
  auto observer = [&](long t, const Vec& theta_t, const Vec&) {
    running_sum += theta_t;
    if (t % every != 0 && t != sc.T) return;
    const Vec theta_hat = running_sum / static_cast<double>(t);
    const double objective = features.loss_dot_columns().dot(theta_hat) +
                             b.model.loss().dot(features.mu0().mu);
    const double v1 = violation_v1(features, theta_hat);
    const double v2 = violation_v2(b.model, features, theta_hat);
    const double surrogate = objective + sc.H * (v1 + v2);
    std::string loss_cell;
    if (b.exact_scale) {
      try {
        const Policy pi = policy_from_theta(features.mu0(), features, theta_hat,
                                            b.model.num_states(),
                                            b.model.num_actions());
        const StateActionDistribution mu = stationary_distribution(b.model, pi);
        loss_cell = fmt_double(average_loss(mu, b.model.loss()));
      } catch (const std::exception&) {
        loss_cell.clear();  // policy chain did not converge at this checkpoint
      }
    }
    rows.push_back({fmt_int(t), fmt_double(objective), fmt_double(v1),
                    fmt_double(v2), fmt_double(surrogate), loss_cell});
  };

  const SgdTrace trace =
      run_sgd(sc, b.model, features, sampling, observer);

  CsvWriter trace_csv(out_path(opt, "sgd_trace.csv"),
                      csv_header_comments("run-sgd", opt, cfg),
                      "t,objective,v1,v2,surrogate,avg_loss");
  for (const auto& r : rows) trace_csv.write_row(r);

  CsvWriter theta_csv(out_path(opt, "theta.csv"),
                      csv_header_comments("run-sgd", opt, cfg), "i,theta");
  for (int i = 0; i < trace.theta_hat.size(); ++i)
    theta_csv.write_row({fmt_int(i), fmt_double(trace.theta_hat[i])});

  const auto& last = rows.back();
  std::cout << "iterations " << fmt_int(sc.T) << "\n"
            << "objective " << last[1] << "\n"
            << "v1 " << last[2] << "\n"
            << "v2 " << last[3] << "\n"
            << "surrogate " << last[4] << "\n";
  if (!last[5].empty()) std::cout << "avg_loss " << last[5] << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run-cs
// ---------------------------------------------------------------------------

std::vector<long> ladder_from(const Config& cfg, const std::string& preset) {
  if (cfg.has("ladder")) {
    std::vector<long> out;
    std::stringstream ss(cfg.get_string("ladder"));
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      out.push_back(std::stol(item));
    }
    if (out.empty()) throw std::invalid_argument("ladder: no sample sizes");
    return out;
  }
  // Geometric ladder sized for the full benchmark (X*A = 4112784 rows).
  if (preset == "full-ladder")
    return {508, 792, 1235, 1926, 3003, 4684, 7305, 11393, 17768, 27712};
  // Reduced ladder spanning under-sampled to fully-sampled at X*A = 1600.
  return {100, 200, 400, 800, 1600};
}

int cmd_run_cs(const CommonOpts& opt) {
  const Config cfg = load_config(opt);
  const Benchmark b = build_benchmark(cfg, opt);
  const StateActionDistribution mu0 =
      choose_mu0(b, cfg.get_string("mu0", "zero"));
  const QueueFeatureBuild fb =
      build_queue_features(b.qc, b.mu_longer, b.mu_lbfs, mu0, &std::cerr);
  const FeatureMatrix& features = fb.features;
  const SamplingModel sampling =
      make_queue_sampling(b.model, features, sampler_kind(cfg), fb.max_row_norm);

  const std::string preset =
      opt.preset.empty() ? "reduced-ladder" : opt.preset;
  if (preset != "reduced-ladder" && preset != "full-ladder")
    throw std::invalid_argument("unknown run-cs preset '" + preset +
                                "' (expected reduced-ladder|full-ladder)");
  const std::vector<long> ladder = ladder_from(cfg, preset);
  const int trials =
      opt.trials > 0 ? opt.trials : (preset == "full-ladder" ? 35 : 20);
  const long k2_ratio = std::max<long>(cfg.get_int("k2_ratio", 4), 1);
  const double box = cfg.get_double("M", 3.0);
  const double eps_s = cfg.get_double("eps_s", 1e-3);

  struct TrialResult {
    long k1 = 0, k2 = 0;
    int trial = 0;
    std::vector<std::string> row;
  };
  const int total = static_cast<int>(ladder.size()) * trials;
  std::vector<TrialResult> results(total);

  parallel_for(total, [&](int job) {
    const int ladder_idx = job / trials;
    const int trial = job % trials;
    CsConfig cc;
    cc.k1 = ladder[ladder_idx];
    cc.k2 = std::max<long>(cc.k1 / k2_ratio, 1);
    cc.M = box;
    cc.eps_s = eps_s;
    cc.seed = derive_seed(opt.seed, static_cast<std::uint64_t>(job));
    if (cfg.has("epsilon")) cc.epsilon = cfg.get_double("epsilon", 0.0);
    if (cfg.has("delta")) cc.delta = cfg.get_double("delta", 0.0);
    const auto [theta, audit] = run_constraint_sampling(b.model, features, sampling, cc);

    std::string status = audit.status == LpStatus::kOptimal      ? "optimal"
                         : audit.status == LpStatus::kInfeasible ? "infeasible"
                                                                 : "unbounded";
    std::string objective, v1, v2, q1m, q2m, bv1, bv2, loss_cell, queue_cell;
    if (audit.status == LpStatus::kOptimal) {
      objective = fmt_double(audit.objective);
      v1 = fmt_double(audit.v1_violation);
      v2 = fmt_double(audit.v2_violation);
      q1m = fmt_double(audit.q1_violation_measure);
      q2m = fmt_double(audit.q2_violation_measure);
      bv1 = fmt_double(audit.bound_v1);
      bv2 = fmt_double(audit.bound_v2);
      try {
        const Policy pi =
            policy_from_theta(features.mu0(), features, theta,
                              b.model.num_states(), b.model.num_actions());
        const auto [loss, method] =
            policy_loss(b, pi, cfg, derive_seed(cc.seed, 7));
        loss_cell = fmt_double(loss);
        queue_cell = fmt_double(loss * b.qc.total_buffer());
        (void)method;
      } catch (const std::exception&) {
        // leave the loss cells empty when the policy chain does not converge
      }
    }
    results[job] = TrialResult{
        cc.k1, cc.k2, trial,
        {fmt_int(cc.k1), fmt_int(cc.k2), fmt_int(trial), status, objective, v1,
         v2, q1m, q2m, bv1, bv2, loss_cell, queue_cell}};
  });

  CsvWriter csv(out_path(opt, "cs_sweep.csv"),
                csv_header_comments("run-cs", opt, cfg),
                "k1,k2,trial,status,objective,v1,v2,q1_violation_measure,"
                "q2_violation_measure,bound_v1,bound_v2,avg_loss,avg_queue");
  for (const auto& r : results) csv.write_row(r.row);

  std::cout << "rows " << total << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

Vec load_theta_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("evaluate: cannot open theta file " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    const std::string tail = line.substr(comma + 1);
    try {
      vals.push_back(std::stod(tail));
    } catch (const std::exception&) {
      continue;  // header line
    }
  }
  if (vals.empty()) throw std::runtime_error("evaluate: no theta values in " + path);
  Vec theta(static_cast<int>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) theta[static_cast<int>(i)] = vals[i];
  return theta;
}

int cmd_evaluate(const CommonOpts& opt) {
  const Config cfg = load_config(opt);
  const Benchmark b = build_benchmark(cfg, opt);

  CsvWriter csv(out_path(opt, "evaluation.csv"),
                csv_header_comments("evaluate", opt, cfg),
                "policy,average_loss,average_queue,method");
  auto emit = [&](const std::string& name, double loss, const std::string& method) {
    csv.write_row({name, fmt_double(loss), fmt_double(loss * b.qc.total_buffer()),
                   method});
    std::cout << name << " " << fmt_double(loss) << "\n";
  };

  {
    const auto [loss, method] = policy_loss(b, b.longer, cfg, derive_seed(opt.seed, 11));
    emit("longer", loss, method);
  }
  {
    const auto [loss, method] = policy_loss(b, b.lbfs, cfg, derive_seed(opt.seed, 12));
    emit("lbfs", loss, method);
  }
  if (b.model.num_state_actions() <= kExactLpLimit) {
    const ExactSolution sol = relative_value_iteration(b.model);
    emit("optimal", sol.lambda_star, "rvi");
  }
  if (cfg.has("theta")) {
    const Vec theta = load_theta_csv(cfg.get_string("theta"));
    const StateActionDistribution mu0 =
        choose_mu0(b, cfg.get_string("mu0", "zero"));
    const QueueFeatureBuild fb =
        build_queue_features(b.qc, b.mu_longer, b.mu_lbfs, mu0, &std::cerr);
    if (theta.size() != fb.features.dim()) {
      std::ostringstream os;
      os << "evaluate: theta has " << theta.size() << " entries but the feature "
         << "construction has " << fb.features.dim() << " columns";
      throw std::runtime_error(os.str());
    }
    const Policy pi =
        policy_from_theta(fb.features.mu0(), fb.features, theta,
                          b.model.num_states(), b.model.num_actions());
    const auto [loss, method] = policy_loss(b, pi, cfg, derive_seed(opt.seed, 13));
    emit(cfg.get_string("theta_label", "theta"), loss, method);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

int cmd_oracle(const CommonOpts& opt) {
  const Config cfg = load_config(opt);
  std::optional<MdpModel> loaded;
  if (cfg.has("model")) loaded = load_model(cfg.get_string("model"));
  const MdpModel model =
      loaded ? std::move(*loaded) : build_queue_mdp([&] {
        QueueNetConfig qc = queue_config_from(cfg);
        if (opt.full_scale) {
          const QueueNetConfig full = QueueNetConfig::full_scale();
          qc.b1 = full.b1;
          qc.b2 = full.b2;
          qc.b3 = full.b3;
          qc.b4 = full.b4;
        }
        return qc;
      }());
  if (model.num_state_actions() > kExactLpLimit) {
    std::ostringstream os;
    os << "oracle: " << model.num_state_actions()
       << " state-action pairs exceeds the exact-solver limit " << kExactLpLimit;
    throw std::runtime_error(os.str());
  }

  const DualLpResult lp = solve_dual_lp_exact(model);
  if (lp.status != LpStatus::kOptimal)
    throw std::runtime_error("oracle: exact LP did not reach an optimum");
  const ExactSolution rvi = relative_value_iteration(model);
  const double residual =
      bellman_residual(model, rvi.lambda_star, rvi.h_star);

  CsvWriter csv(out_path(opt, "oracle.csv"),
                csv_header_comments("oracle", opt, cfg), "quantity,value");
  csv.write_row({"states", fmt_int(model.num_states())});
  csv.write_row({"state_actions", fmt_int(model.num_state_actions())});
  csv.write_row({"lambda_lp", fmt_double(lp.solution->lambda_star)});
  csv.write_row({"lambda_rvi", fmt_double(rvi.lambda_star)});
  csv.write_row({"bellman_residual", fmt_double(residual)});

  std::cout << "lambda_star " << fmt_double(lp.solution->lambda_star) << "\n"
            << "lambda_rvi " << fmt_double(rvi.lambda_star) << "\n"
            << "bellman_residual " << fmt_double(residual) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// export-model
// ---------------------------------------------------------------------------

int cmd_export_model(const CommonOpts& opt) {
  const Config cfg = load_config(opt);
  QueueNetConfig qc = queue_config_from(cfg);
  if (opt.full_scale) {
    const QueueNetConfig full = QueueNetConfig::full_scale();
    qc.b1 = full.b1;
    qc.b2 = full.b2;
    qc.b3 = full.b3;
    qc.b4 = full.b4;
  }
  const MdpModel model = build_queue_mdp(qc);
  const std::string path = out_path(opt, "model.txt");
  save_model(model, path);
  std::cout << "states " << model.num_states() << "\n"
            << "state_actions " << model.num_state_actions() << "\n"
            << "file " << path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-LP average-cost MDP toolkit"};
  app.require_subcommand(1);

  CommonOpts opt;
  std::string command;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "key=value config file");
    sub->add_option("--out", opt.out_dir, "output directory (created if missing)");
    sub->add_option("--seed", opt.seed, "root seed; per-trial seeds are derived");
    sub->add_option("--preset", opt.preset, "named preset");
    sub->add_option("--trials", opt.trials, "trial count (run-cs)");
    sub->add_flag("--full-scale", opt.full_scale,
                  "use the full-size benchmark (long run)");
    return sub;
  };
  auto* sgd = add_common(app.add_subcommand(
      "run-sgd", "projected stochastic subgradient descent on the surrogate"));
  auto* cs = add_common(app.add_subcommand(
      "run-cs", "randomized constraint-sampling LP sweep"));
  auto* ev = add_common(
      app.add_subcommand("evaluate", "compare policies on the benchmark"));
  auto* orc = add_common(app.add_subcommand(
      "oracle", "exact LP and value-iteration reference solve"));
  auto* exm = add_common(app.add_subcommand(
      "export-model", "write the benchmark MDP in the text model format"));

  CLI11_PARSE(app, argc, argv);

  try {
    if (sgd->parsed()) return cmd_run_sgd(opt);
    if (cs->parsed()) return cmd_run_cs(opt);
    if (ev->parsed()) return cmd_evaluate(opt);
    if (orc->parsed()) return cmd_oracle(opt);
    if (exm->parsed()) return cmd_export_model(opt);
  } catch (const std::exception& e) {
    nlohmann::json record;
    record["error"] = {{"command", app.get_subcommands().empty()
                                       ? std::string("?")
                                       : app.get_subcommands().front()->get_name()},
                       {"message", e.what()}};
    std::cerr << record.dump() << "\n";
    return 1;
  }
  return 0;
}
