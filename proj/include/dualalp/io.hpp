#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualalp/mdp.hpp"

namespace dualalp {

/// Shortest decimal form that parses back to the identical double
/// (std::to_chars round-trip guarantee).  All file output goes through this
/// so that re-runs are byte-identical.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_int(long long v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// Model text format.
//
//   line 1:            X A
//   next X*A lines:    loss(x,a), ordered by sa = x*A + a
//   remaining lines:   x a x' p   (one sparse transition triple per line)
//
// Values are written with fmt_double, so write -> read -> write is
// byte-stable and decimals of up to ~17 significant digits survive exactly.
// ---------------------------------------------------------------------------

inline void save_model(const MdpModel& model, std::ostream& out) {
  out << model.num_states() << ' ' << model.num_actions() << '\n';
  for (int i = 0; i < model.num_state_actions(); ++i)
    out << fmt_double(model.loss()[i]) << '\n';
  const SpMatRow& p = model.kernel_rows();
  for (int i = 0; i < model.num_state_actions(); ++i) {
    const auto [x, a] = model.sa_split(i);
    for (SpMatRow::InnerIterator it(p, i); it; ++it)
      out << x << ' ' << a << ' ' << it.col() << ' ' << fmt_double(it.value())
          << '\n';
  }
}

inline void save_model(const MdpModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  save_model(model, out);
}

inline MdpModel load_model(std::istream& in) {
  int X = 0, A = 0;
  if (!(in >> X >> A)) throw std::runtime_error("load_model: bad header");
  if (X <= 0 || A <= 0) throw std::runtime_error("load_model: bad dimensions");
  Vec loss(static_cast<Eigen::Index>(X) * A);
  for (int i = 0; i < X * A; ++i) {
    if (!(in >> loss[i])) throw std::runtime_error("load_model: short loss block");
  }
  std::vector<Triplet> trips;
  int x, a, xp;
  double p;
  while (in >> x >> a >> xp >> p) {
    if (x < 0 || x >= X || a < 0 || a >= A || xp < 0 || xp >= X)
      throw std::runtime_error("load_model: index out of range");
    trips.emplace_back(x * A + a, xp, p);
  }
  return MdpModel(X, A, std::move(loss), trips);
}

inline MdpModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  return load_model(in);
}

// ---------------------------------------------------------------------------
// CSV output.  Every file starts with '#'-prefixed header comments (tool
// version, command, root seed, config echo) followed by one column-name line.
// No timestamps anywhere: identical inputs must give identical bytes.
// ---------------------------------------------------------------------------

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& comments,
            const std::string& header_line)
      : out_(path) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
    for (const auto& c : comments) out_ << "# " << c << '\n';
    out_ << header_line << '\n';
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Flat key = value configuration files.  '#' starts a comment, blank lines
// are ignored, keys may use dots for grouping (e.g. sgd.T).
// ---------------------------------------------------------------------------

class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("Config: cannot open " + path);
    return parse(in, path);
  }

  static Config parse(std::istream& in, const std::string& origin = "<stream>") {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(ws);
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        std::ostringstream os;
        os << "Config: malformed line " << lineno << " in " << origin;
        throw std::runtime_error(os.str());
      }
      cfg.kv_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

  std::string get_string(const std::string& key,
                         const std::string& fallback = "") const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("Config: key '" + key + "' is not a number");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      return std::stoll(it->second);
    } catch (const std::exception&) {
      throw std::runtime_error("Config: key '" + key + "' is not an integer");
    }
  }

  /// Canonical single-line echo (sorted keys) for output file headers.
  std::string echo() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [k, v] : kv_) {
      if (!first) os << ' ';
      os << k << '=' << v;
      first = false;
    }
    return os.str();
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace dualalp
