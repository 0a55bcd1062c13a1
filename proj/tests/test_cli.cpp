// End-to-end checks of the command-line tool: each test invokes the real
// binary (path injected at compile time) in a scratch directory and inspects
// its exit code, stdout, and CSV artifacts.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dualalp/io.hpp"
#include "dualalp/mdp.hpp"

using namespace dualalp;

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Scratch directory created fresh per test and removed on destruction.
struct Scratch {
  fs::path dir;
  Scratch() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("dualalp_cli_" + std::to_string(++counter) + "_" +
           std::to_string(static_cast<unsigned>(::getpid())));
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  fs::path file(const std::string& name) const { return dir / name; }
};

RunResult run_cli(const Scratch& s, const std::string& args,
                  const std::string& tag) {
  const fs::path out = s.file(tag + ".out");
  const fs::path err = s.file(tag + ".err");
  std::ostringstream cmd;
  cmd << '"' << DUALALP_CLI_PATH << "\" " << args << " > \"" << out.string()
      << "\" 2> \"" << err.string() << '"';
  const int raw = std::system(cmd.str().c_str());
  RunResult r;
  r.exit_code = raw == -1 ? -1 : WEXITSTATUS(raw);
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> lines;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') lines.push_back(line);
  return lines;
}

// Small-buffer network: 36 states, 144 state-action pairs, fast to solve.
const char* kTinyNet = "B1 = 2\nB2 = 1\nB3 = 1\nB4 = 2\n";

}  // namespace

TEST_CASE("cli: oracle on a tiny benchmark", "[cli]") {
  Scratch s;
  write_file(s.file("net.cfg"), kTinyNet);
  const RunResult r = run_cli(
      s,
      "oracle --config " + s.file("net.cfg").string() + " --out " +
          s.dir.string(),
      "oracle");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("lambda_star ") != std::string::npos);
  REQUIRE(r.out.find("lambda_rvi ") != std::string::npos);
  REQUIRE(r.out.find("bellman_residual ") != std::string::npos);

  const std::string csv = slurp(s.file("oracle.csv"));
  REQUIRE(csv.rfind("# dualalp ", 0) == 0);
  REQUIRE(csv.find("# command: oracle") != std::string::npos);
  const auto rows = data_lines(csv);
  REQUIRE(rows.size() == 6);  // header + five quantities
  REQUIRE(rows[0] == "quantity,value");
  REQUIRE(rows[1] == "states,36");
  REQUIRE(rows[2] == "state_actions,144");
  // LP and value-iteration answers agree to the solver tolerance.
  const double lp = std::stod(rows[3].substr(rows[3].find(',') + 1));
  const double rvi = std::stod(rows[4].substr(rows[4].find(',') + 1));
  REQUIRE(std::abs(lp - rvi) <= 1e-6);
}

TEST_CASE("cli: export-model writes a loadable model", "[cli]") {
  Scratch s;
  write_file(s.file("net.cfg"), kTinyNet);
  const RunResult r = run_cli(
      s,
      "export-model --config " + s.file("net.cfg").string() + " --out " +
          s.dir.string(),
      "export");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  const MdpModel m = load_model(s.file("model.txt").string());
  REQUIRE(m.num_states() == 36);
  REQUIRE(m.num_actions() == 4);

  // The exported file feeds straight back into the oracle subcommand.
  write_file(s.file("model.cfg"), "model = " + s.file("model.txt").string() + "\n");
  const RunResult r2 = run_cli(
      s,
      "oracle --config " + s.file("model.cfg").string() + " --out " +
          s.dir.string(),
      "oracle_on_export");
  CAPTURE(r2.err);
  REQUIRE(r2.exit_code == 0);
  REQUIRE(r2.out.find("lambda_star ") != std::string::npos);
}

TEST_CASE("cli: run-sgd trace and theta artifacts", "[cli]") {
  Scratch s;
  write_file(s.file("net.cfg"),
             std::string(kTinyNet) +
                 "T = 2000\ncheckpoint_every = 500\nmu0 = best\n"
                 "sampler = feature-norm\nH = 2\neta0 = 0.001\n"
                 "halving_period = 500\n");
  const std::string args = "run-sgd --config " + s.file("net.cfg").string() +
                           " --out " + s.dir.string() + " --seed 42";
  const RunResult r = run_cli(s, args, "sgd");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("iterations 2000") != std::string::npos);
  REQUIRE(r.out.find("surrogate ") != std::string::npos);

  const std::string trace = slurp(s.file("sgd_trace.csv"));
  REQUIRE(trace.find("# seed: 42") != std::string::npos);
  const auto rows = data_lines(trace);
  REQUIRE(rows[0] == "t,objective,v1,v2,surrogate,avg_loss");
  REQUIRE(rows.size() == 1 + 4);  // checkpoints at 500,1000,1500,2000
  REQUIRE(rows[1].rfind("500,", 0) == 0);
  REQUIRE(rows[4].rfind("2000,", 0) == 0);

  const auto theta_rows = data_lines(slurp(s.file("theta.csv")));
  REQUIRE(theta_rows[0] == "i,theta");
  REQUIRE(theta_rows.size() >= 2);  // at least one coefficient

  SECTION("reruns reproduce the artifacts byte for byte") {
    const std::string trace1 = slurp(s.file("sgd_trace.csv"));
    const std::string theta1 = slurp(s.file("theta.csv"));
    const RunResult r2 = run_cli(s, args, "sgd_again");
    REQUIRE(r2.exit_code == 0);
    REQUIRE(slurp(s.file("sgd_trace.csv")) == trace1);
    REQUIRE(slurp(s.file("theta.csv")) == theta1);
  }

  SECTION("evaluate scores the learned coefficients") {
    write_file(s.file("eval.cfg"),
               std::string(kTinyNet) + "mu0 = best\ntheta = " +
                   s.file("theta.csv").string() + "\n");
    const RunResult r3 = run_cli(
        s,
        "evaluate --config " + s.file("eval.cfg").string() + " --out " +
            s.dir.string(),
        "eval");
    CAPTURE(r3.err);
    REQUIRE(r3.exit_code == 0);
    const auto eval_rows = data_lines(slurp(s.file("evaluation.csv")));
    REQUIRE(eval_rows[0] == "policy,average_loss,average_queue,method");
    REQUIRE(eval_rows.size() == 5);  // longer, lbfs, optimal, theta
    REQUIRE(eval_rows[1].rfind("longer,", 0) == 0);
    REQUIRE(eval_rows[2].rfind("lbfs,", 0) == 0);
    REQUIRE(eval_rows[3].rfind("optimal,", 0) == 0);
    REQUIRE(eval_rows[4].rfind("theta,", 0) == 0);
    // This instance is small enough for exact evaluation everywhere.
    for (int i = 1; i <= 4; ++i)
      REQUIRE(eval_rows[i].find("simulated") == std::string::npos);
  }
}

TEST_CASE("cli: run-cs sweep artifact", "[cli]") {
  Scratch s;
  write_file(s.file("net.cfg"),
             std::string(kTinyNet) + "ladder = 30,60\nM = 3\n");
  const std::string args = "run-cs --config " + s.file("net.cfg").string() +
                           " --out " + s.dir.string() +
                           " --seed 5 --trials 3";
  const RunResult r = run_cli(s, args, "cs");
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  REQUIRE(r.out.find("rows 6") != std::string::npos);

  const std::string csv = slurp(s.file("cs_sweep.csv"));
  const auto rows = data_lines(csv);
  REQUIRE(rows[0] ==
          "k1,k2,trial,status,objective,v1,v2,q1_violation_measure,"
          "q2_violation_measure,bound_v1,bound_v2,avg_loss,avg_queue");
  REQUIRE(rows.size() == 1 + 6);
  for (int i = 0; i < 3; ++i) REQUIRE(rows[1 + i].rfind("30,", 0) == 0);
  for (int i = 3; i < 6; ++i) REQUIRE(rows[1 + i].rfind("60,", 0) == 0);
  // Every trial reports a recognized status.
  for (int i = 1; i <= 6; ++i) {
    const bool known = rows[i].find(",optimal,") != std::string::npos ||
                       rows[i].find(",infeasible,") != std::string::npos ||
                       rows[i].find(",unbounded,") != std::string::npos;
    REQUIRE(known);
  }

  SECTION("rerun is byte-identical") {
    const std::string first = slurp(s.file("cs_sweep.csv"));
    const RunResult r2 = run_cli(s, args, "cs_again");
    REQUIRE(r2.exit_code == 0);
    REQUIRE(slurp(s.file("cs_sweep.csv")) == first);
  }
}

TEST_CASE("cli: errors are reported with a nonzero exit", "[cli]") {
  Scratch s;
  SECTION("unknown sampler name") {
    write_file(s.file("bad.cfg"), std::string(kTinyNet) + "sampler = magic\n");
    const RunResult r = run_cli(
        s,
        "run-sgd --config " + s.file("bad.cfg").string() + " --out " +
            s.dir.string(),
        "bad_sampler");
    REQUIRE(r.exit_code != 0);
    REQUIRE(r.err.find("unknown sampler") != std::string::npos);
    REQUIRE(r.err.find("\"error\"") != std::string::npos);
  }
  SECTION("missing subcommand") {
    const RunResult r = run_cli(s, "", "no_subcommand");
    REQUIRE(r.exit_code != 0);
  }
  SECTION("malformed config file") {
    write_file(s.file("bad.cfg"), "this line has no equals sign\n");
    const RunResult r = run_cli(
        s,
        "oracle --config " + s.file("bad.cfg").string() + " --out " +
            s.dir.string(),
        "bad_config");
    REQUIRE(r.exit_code != 0);
  }
}
