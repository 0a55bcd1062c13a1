#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "dualalp/features.hpp"
#include "dualalp/io.hpp"
#include "dualalp/mdp.hpp"

namespace dualalp {

/**
 * A four-queue, two-server network in discrete time.  Customers arrive at
 * queue 1 (prob a1) and queue 3 (prob a3); service at queue 1 feeds queue 2
 * and service at queue 3 feeds queue 4; queues 2 and 4 discharge.  Server 1
 * works queue 1 or queue 4, server 2 works queue 2 or queue 3, and neither
 * may idle.  Queue i holds at most bi customers; overflow is clamped.
 */
struct QueueNetConfig {
  double a1 = 0.08, a3 = 0.08;
  double d1 = 0.12, d2 = 0.12, d3 = 0.28, d4 = 0.28;
  int b1 = 4, b2 = 3, b3 = 3, b4 = 4;

  // Small instance with an exact oracle in reach (X*A = 1600).
  static QueueNetConfig reduced() { return QueueNetConfig{}; }
  // The benchmark at its original size (X*A = 4,112,784).
  static QueueNetConfig full_scale() {
    QueueNetConfig c;
    c.b1 = 38;
    c.b2 = 25;
    c.b3 = 25;
    c.b4 = 38;
    return c;
  }

  void validate() const {
    auto prob_ok = [](double p) { return p > 0.0 && p < 1.0; };
    if (!prob_ok(a1) || !prob_ok(a3) || !prob_ok(d1) || !prob_ok(d2) ||
        !prob_ok(d3) || !prob_ok(d4))
      throw std::invalid_argument("QueueNetConfig: probabilities must lie in (0,1)");
    if (b1 < 1 || b2 < 1 || b3 < 1 || b4 < 1)
      throw std::invalid_argument("QueueNetConfig: buffer caps must be >= 1");
  }

  long num_states() const {
    return static_cast<long>(b1 + 1) * (b2 + 1) * (b3 + 1) * (b4 + 1);
  }
  long num_state_actions() const { return num_states() * 4; }
  int total_buffer() const { return b1 + b2 + b3 + b4; }
};

struct QueueState {
  int q1 = 0, q2 = 0, q3 = 0, q4 = 0;
  int total() const { return q1 + q2 + q3 + q4; }
};

/// Joint actions, two bits: bit 0 set -> server 1 works queue 4 (else
/// queue 1); bit 1 set -> server 2 works queue 3 (else queue 2).
inline constexpr int kQueueActions = 4;
inline bool serves_queue4(int action) { return (action & 1) != 0; }
inline bool serves_queue3(int action) { return (action & 2) != 0; }

inline int encode_state(const QueueNetConfig& c, const QueueState& s) {
  return ((s.q1 * (c.b2 + 1) + s.q2) * (c.b3 + 1) + s.q3) * (c.b4 + 1) + s.q4;
}

inline QueueState decode_state(const QueueNetConfig& c, int index) {
  QueueState s;
  s.q4 = index % (c.b4 + 1);
  index /= c.b4 + 1;
  s.q3 = index % (c.b3 + 1);
  index /= c.b3 + 1;
  s.q2 = index % (c.b2 + 1);
  s.q1 = index / (c.b2 + 1);
  return s;
}

namespace queue_detail {

/// Exact next-state distribution for one (state, action): enumerates the
/// independent Bernoulli draws (two arrivals plus one potential service
/// completion per server), merging outcomes that clamp to the same state.
/// A service completion requires a waiting customer: an empty queue yields
/// no departure regardless of the server's assignment.
inline void transition_row(const QueueNetConfig& c, const QueueState& s,
                           int action,
                           std::vector<std::pair<int, double>>& out) {
  out.clear();
  const int q1_target = serves_queue4(action) ? 4 : 1;
  const int q2_target = serves_queue3(action) ? 3 : 2;
  const bool can1 = (q1_target == 1) ? s.q1 > 0 : s.q4 > 0;
  const bool can2 = (q2_target == 2) ? s.q2 > 0 : s.q3 > 0;
  const double p1 = (q1_target == 1) ? c.d1 : c.d4;
  const double p2 = (q2_target == 2) ? c.d2 : c.d3;

  for (int arrive1 = 0; arrive1 < 2; ++arrive1) {
    const double pa1 = arrive1 ? c.a1 : 1.0 - c.a1;
    for (int arrive3 = 0; arrive3 < 2; ++arrive3) {
      const double pa3 = arrive3 ? c.a3 : 1.0 - c.a3;
      for (int done1 = 0; done1 < (can1 ? 2 : 1); ++done1) {
        const double pd1 = can1 ? (done1 ? p1 : 1.0 - p1) : 1.0;
        for (int done2 = 0; done2 < (can2 ? 2 : 1); ++done2) {
          const double pd2 = can2 ? (done2 ? p2 : 1.0 - p2) : 1.0;
          QueueState n = s;
          n.q1 += arrive1;
          n.q3 += arrive3;
          if (done1) {
            if (q1_target == 1) {
              --n.q1;
              ++n.q2;
            } else {
              --n.q4;
            }
          }
          if (done2) {
            if (q2_target == 2) {
              --n.q2;
            } else {
              --n.q3;
              ++n.q4;
            }
          }
          n.q1 = std::clamp(n.q1, 0, c.b1);
          n.q2 = std::clamp(n.q2, 0, c.b2);
          n.q3 = std::clamp(n.q3, 0, c.b3);
          n.q4 = std::clamp(n.q4, 0, c.b4);
          const int code = encode_state(c, n);
          const double p = pa1 * pa3 * pd1 * pd2;
          bool merged = false;
          for (auto& kv : out) {
            if (kv.first == code) {
              kv.second += p;
              merged = true;
              break;
            }
          }
          if (!merged) out.emplace_back(code, p);
        }
      }
    }
  }
}

}  // namespace queue_detail

/**
 * Assembles the exact MDP: 4 actions per state, per-row transition kernels
 * from the Bernoulli enumeration, and loss |x|_1 / (b1+b2+b3+b4) so the
 * loss lands in [0,1].  Refuses instances above `max_state_actions`
 * (default admits the full-scale benchmark) with a size report.
 */
inline MdpModel build_queue_mdp(const QueueNetConfig& config,
                                long max_state_actions = 8000000) {
  config.validate();
  const long xa = config.num_state_actions();
  if (xa > max_state_actions) {
    std::ostringstream msg;
    msg << "build_queue_mdp: instance needs " << xa
        << " state-action rows but the guard allows " << max_state_actions
        << "; raise the guard to build it";
    throw std::invalid_argument(msg.str());
  }
  const int num_states = static_cast<int>(config.num_states());
  const double loss_scale = 1.0 / config.total_buffer();

  Vec loss(xa);
  std::vector<std::vector<Triplet>> buffers;

  const unsigned hw = std::thread::hardware_concurrency();
  const int num_threads =
      num_states > 20000 ? static_cast<int>(std::clamp(hw, 1u, 8u)) : 1;
  buffers.resize(num_threads);

  auto work = [&](int tid) {
    const int lo = static_cast<int>(static_cast<long>(num_states) * tid / num_threads);
    const int hi =
        static_cast<int>(static_cast<long>(num_states) * (tid + 1) / num_threads);
    auto& buf = buffers[tid];
    buf.reserve(static_cast<std::size_t>(hi - lo) * 4 * 12);
    std::vector<std::pair<int, double>> row;
    row.reserve(16);
    for (int x = lo; x < hi; ++x) {
      const QueueState s = decode_state(config, x);
      const double state_loss = s.total() * loss_scale;
      for (int a = 0; a < kQueueActions; ++a) {
        const long sa = static_cast<long>(x) * kQueueActions + a;
        loss[sa] = state_loss;
        queue_detail::transition_row(config, s, a, row);
        for (const auto& [next, p] : row)
          buf.emplace_back(static_cast<int>(sa), next, p);
      }
    }
  };
  if (num_threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(num_threads);
    for (int t = 0; t < num_threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }

  std::vector<Triplet> triplets;
  std::size_t total = 0;
  for (const auto& b : buffers) total += b.size();
  triplets.reserve(total);
  for (auto& b : buffers) {
    triplets.insert(triplets.end(), b.begin(), b.end());
    b.clear();
    b.shrink_to_fit();
  }
  return MdpModel(num_states, kQueueActions, loss, triplets);
}

enum class QueueHeuristic { kLonger, kLbfs };

/**
 * LONGER: each server works its longer queue, splitting 0.5/0.5 on ties.
 * LBFS: downstream priority; server 1 works queue 4 unless it is empty,
 * server 2 works queue 2 unless it is empty.
 */
inline Policy heuristic_policy(QueueHeuristic kind, const QueueNetConfig& config) {
  config.validate();
  const int num_states = static_cast<int>(config.num_states());
  Mat probs(num_states, kQueueActions);
  for (int x = 0; x < num_states; ++x) {
    const QueueState s = decode_state(config, x);
    double p_serve4, p_serve3;
    if (kind == QueueHeuristic::kLonger) {
      p_serve4 = s.q4 > s.q1 ? 1.0 : (s.q4 < s.q1 ? 0.0 : 0.5);
      p_serve3 = s.q3 > s.q2 ? 1.0 : (s.q3 < s.q2 ? 0.0 : 0.5);
    } else {
      p_serve4 = s.q4 > 0 ? 1.0 : 0.0;
      p_serve3 = s.q2 > 0 ? 0.0 : 1.0;
    }
    for (int a = 0; a < kQueueActions; ++a) {
      const double pa = (serves_queue4(a) ? p_serve4 : 1.0 - p_serve4) *
                        (serves_queue3(a) ? p_serve3 : 1.0 - p_serve3);
      probs(x, a) = pa;
    }
  }
  return Policy(probs);
}

/**
 * Result of the benchmark feature construction.  Columns, in order:
 * the two heuristic state-action distributions; one indicator per
 * (total-queue-length interval (5(k-1), 5k], k = 1..10, action); and one
 * indicator per (per-queue interval 4-tuple over [0,10], [11,20], [21,25],
 * action).  Every retained column is scaled to sum to one; all-zero
 * columns (intervals unreachable at the configured buffer sizes) are
 * dropped and recorded here.
 */
struct QueueFeatureBuild {
  FeatureMatrix features;
  int columns_before_drop = 0;
  std::vector<int> dropped;   // pre-drop column indices
  double max_row_norm = 0.0;  // over retained columns
};

inline QueueFeatureBuild build_queue_features(
    const QueueNetConfig& config, const StateActionDistribution& mu_longer,
    const StateActionDistribution& mu_lbfs, const StateActionDistribution& mu0,
    std::ostream* log = nullptr) {
  config.validate();
  const long xa = config.num_state_actions();
  if (mu_longer.mu.size() != xa || mu_lbfs.mu.size() != xa)
    throw std::invalid_argument(
        "build_queue_features: heuristic distribution size mismatch");
  const int num_states = static_cast<int>(config.num_states());
  constexpr int kLossIntervals = 10;
  constexpr int kTuples = 81;  // 3^4 interval assignments
  const int before = 2 + 4 * kLossIntervals + 4 * kTuples;

  // Interval index of one queue length: [0,10] -> 0, [11,20] -> 1,
  // [21,25] -> 2, above 25 -> no interval.
  auto coord_interval = [](int v) { return v <= 10 ? 0 : (v <= 20 ? 1 : (v <= 25 ? 2 : -1)); };

  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(xa) * 4);
  for (long sa = 0; sa < xa; ++sa) {
    if (mu_longer.mu[sa] != 0.0)
      trips.emplace_back(static_cast<int>(sa), 0, mu_longer.mu[sa]);
    if (mu_lbfs.mu[sa] != 0.0)
      trips.emplace_back(static_cast<int>(sa), 1, mu_lbfs.mu[sa]);
  }
  for (int x = 0; x < num_states; ++x) {
    const QueueState s = decode_state(config, x);
    const int total = s.total();
    const int k = total >= 1 && total <= 50 ? (total + 4) / 5 : 0;  // 1..10
    const int i1 = coord_interval(s.q1), i2 = coord_interval(s.q2),
              i3 = coord_interval(s.q3), i4 = coord_interval(s.q4);
    const int tuple = (i1 >= 0 && i2 >= 0 && i3 >= 0 && i4 >= 0)
                          ? ((i1 * 3 + i2) * 3 + i3) * 3 + i4
                          : -1;
    for (int a = 0; a < kQueueActions; ++a) {
      const int sa = x * kQueueActions + a;
      if (k >= 1) trips.emplace_back(sa, 2 + 4 * (k - 1) + a, 1.0);
      if (tuple >= 0) trips.emplace_back(sa, 2 + 4 * kLossIntervals + 4 * tuple + a, 1.0);
    }
  }

  Vec col_sum = Vec::Zero(before);
  for (const auto& t : trips) col_sum[t.col()] += t.value();

  std::vector<int> remap(before, -1);
  std::vector<int> dropped;
  int kept = 0;
  for (int j = 0; j < before; ++j) {
    if (col_sum[j] > 0.0)
      remap[j] = kept++;
    else
      dropped.push_back(j);
  }
  if (log && !dropped.empty()) {
    *log << "warning: dropped " << dropped.size()
         << " all-zero feature columns (unreachable at buffer sizes " << config.b1
         << "," << config.b2 << "," << config.b3 << "," << config.b4 << ")\n";
  }

  std::vector<Triplet> scaled;
  scaled.reserve(trips.size());
  for (const auto& t : trips)
    scaled.emplace_back(t.row(), remap[t.col()], t.value() / col_sum[t.col()]);
  SpMatRow rows(xa, kept);
  rows.setFromTriplets(scaled.begin(), scaled.end());

  Vec loss(xa);
  const double loss_scale = 1.0 / config.total_buffer();
  for (int x = 0; x < num_states; ++x) {
    const double v = decode_state(config, x).total() * loss_scale;
    for (int a = 0; a < kQueueActions; ++a) loss[x * kQueueActions + a] = v;
  }

  double max_row_norm = 0.0;
  for (int i = 0; i < rows.outerSize(); ++i) {
    double sq = 0.0;
    for (SpMatRow::InnerIterator it(rows, i); it; ++it) sq += it.value() * it.value();
    max_row_norm = std::max(max_row_norm, std::sqrt(sq));
  }
  return QueueFeatureBuild{FeatureMatrix(std::move(rows), mu0, loss), before,
                           std::move(dropped), max_row_norm};
}

enum class QueueSampler { kUniform, kFeatureNorm };

/**
 * Gradient-sampling distributions for the benchmark.  kUniform works at any
 * scale: above the enumeration limit the norm-ratio constants are declared
 * from cheap structural bounds (max feature-row norm, kernel in-degree)
 * instead of enumerated.  kFeatureNorm draws rows proportionally to their
 * feature norm and states proportionally to the norm of the summed feature
 * rows across their actions; it requires exact enumeration and is only
 * available below the limit.
 */
inline SamplingModel make_queue_sampling(const MdpModel& model,
                                         const FeatureMatrix& features,
                                         QueueSampler kind,
                                         double max_row_norm_hint = 0.0) {
  const long xa = model.num_state_actions();
  const int num_states = model.num_states();
  if (kind == QueueSampler::kUniform) {
    DiscreteDist q1 = DiscreteDist::uniform(static_cast<int>(xa));
    DiscreteDist q2 = DiscreteDist::uniform(num_states);
    if (xa <= kEnumerationLimit) return make_sampling_model(features, model, q1, q2);
    if (max_row_norm_hint <= 0.0)
      throw std::invalid_argument(
          "make_queue_sampling: above the enumeration limit a positive "
          "max_row_norm_hint is required to declare the constants");
    // ||(P-B)^T_{:,x} Phi|| <= (in-degree + A) * max row norm, so uniform
    // sampling gives C2 <= X * that bound; similarly C1 <= XA * row norm.
    long in_degree = 0;
    const SpMatCol& pc = model.kernel_cols();
    for (int x = 0; x < pc.outerSize(); ++x) {
      long nnz = pc.outerIndexPtr()[x + 1] - pc.outerIndexPtr()[x];
      in_degree = std::max(in_degree, nnz);
    }
    const double c1 = static_cast<double>(xa) * max_row_norm_hint;
    const double c2 = static_cast<double>(num_states) *
                      static_cast<double>(in_degree + model.num_actions()) *
                      max_row_norm_hint;
    return make_sampling_model_declared(q1, q2, c1, c2);
  }
  if (xa > kEnumerationLimit)
    throw std::invalid_argument(
        "make_queue_sampling: feature-norm sampling needs exact enumeration "
        "and the instance exceeds the limit");
  std::vector<double> w1(static_cast<std::size_t>(xa));
  for (long sa = 0; sa < xa; ++sa)
    w1[static_cast<std::size_t>(sa)] = features.row(static_cast<int>(sa)).norm();
  std::vector<double> w2(static_cast<std::size_t>(num_states));
  const int A = model.num_actions();
  for (int x = 0; x < num_states; ++x) {
    Vec sum = Vec::Zero(features.dim());
    for (int a = 0; a < A; ++a) sum += features.row(x * A + a);
    w2[static_cast<std::size_t>(x)] = sum.norm();
  }
  return make_sampling_model(features, model, DiscreteDist::weighted(std::move(w1)),
                             DiscreteDist::weighted(std::move(w2)));
}

/// Reads the network parameters from config keys a1,a3,d1..d4,B1..B4,
/// defaulting each missing key to the reduced benchmark value.
inline QueueNetConfig queue_config_from(const Config& cfg) {
  QueueNetConfig c = QueueNetConfig::reduced();
  c.a1 = cfg.get_double("a1", c.a1);
  c.a3 = cfg.get_double("a3", c.a3);
  c.d1 = cfg.get_double("d1", c.d1);
  c.d2 = cfg.get_double("d2", c.d2);
  c.d3 = cfg.get_double("d3", c.d3);
  c.d4 = cfg.get_double("d4", c.d4);
  c.b1 = static_cast<int>(cfg.get_int("B1", c.b1));
  c.b2 = static_cast<int>(cfg.get_int("B2", c.b2));
  c.b3 = static_cast<int>(cfg.get_int("B3", c.b3));
  c.b4 = static_cast<int>(cfg.get_int("B4", c.b4));
  c.validate();
  return c;
}

}  // namespace dualalp
