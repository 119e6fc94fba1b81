#pragma once
// Discrete-event model of an ad-hoc robot network.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace rimesa {

struct NetworkConfig {
  double rate = 1.0;        // initiations per step per pair in range
  double range = 30.0;      // meters
  double success = 0.9;
  long delay = 0;           // steps from initiation to completion
  double two_generals_rate = 0.05;
  std::uint64_t seed = 0;
  bool parallel = false;    // allow overlapping events on one pair

  void validate() const {
    if (!(rate >= 0.0) || !(range >= 0.0) || delay < 0) throw std::invalid_argument("network: negative parameter");
    if (!(success >= 0.0 && success <= 1.0)) throw std::invalid_argument("network: success outside [0, 1]");
    if (!(two_generals_rate >= 0.0 && two_generals_rate <= 1.0)) {
      throw std::invalid_argument("network: two_generals_rate outside [0, 1]");
    }
  }
};

// Communication-quality presets [delay, rate, range].
inline NetworkConfig quality_preset(char q, NetworkConfig base = {}) {
  switch (q) {
    case 'a': base.delay = 10, base.rate = 1, base.range = 30; break;
    case 'b': base.delay = 2, base.rate = 1, base.range = 35; break;
    case 'c': base.delay = 0, base.rate = 1, base.range = 40; break;
    case 'd': base.delay = 0, base.rate = 5, base.range = 45; break;
    case 'e': base.delay = 0, base.rate = 10, base.range = 50; break;
    default: throw std::invalid_argument(std::string("unknown communication quality '") + q + "'");
  }
  return base;
}

enum class Outcome { Success, Fail, OneSided };

struct CommEvent {
  std::size_t id = 0;
  int i = 0;
  int j = 0;
  long initiated = 0;
  long completes = 0;
  Outcome outcome = Outcome::Success;
  int receiver = -1;
  std::size_t payload_bytes = 0;

  bool delivers_to(int robot) const {
    if (outcome == Outcome::Success) return robot == i || robot == j;
    return outcome == Outcome::OneSided && robot == receiver;
  }
};

inline std::string outcome_string(const CommEvent& e) {
  switch (e.outcome) {
    case Outcome::Success: return "success";
    case Outcome::Fail: return "fail";
    case Outcome::OneSided: return "one_sided:" + std::to_string(e.receiver);
  }
  return "?";
}

class NetworkSimulator {
 public:
  explicit NetworkSimulator(NetworkConfig cfg) : cfg_(cfg), rng_(cfg.seed) { cfg_.validate(); }

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<CommEvent>& log() const { return log_; }

  // Initiates events among robots in range at step t. Positions are keyed by robot id.
  std::vector<CommEvent> step(long t, const std::map<int, Eigen::VectorXd>& positions) {
    if (t < last_step_) throw std::invalid_argument("network: time went backwards");
    last_step_ = t;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double p_init = std::min(1.0, cfg_.rate);
    std::vector<CommEvent> out;
    for (auto a = positions.begin(); a != positions.end(); ++a) {
      for (auto b = std::next(a); b != positions.end(); ++b) {
        if (a->second.size() != b->second.size()) throw std::invalid_argument("network: position dimension mismatch");
        if ((a->second - b->second).norm() > cfg_.range) continue;
        const std::pair<int, int> pair{a->first, b->first};
        if (!cfg_.parallel && busy_.count(pair)) continue;
        const double d_init = u(rng_);
        const double d_ok = u(rng_);
        const double d_tg = u(rng_);
        const double d_coin = u(rng_);
        if (d_init >= p_init) continue;

        CommEvent e;
        e.id = log_.size();
        e.i = pair.first;
        e.j = pair.second;
        e.initiated = t;
        e.completes = t + cfg_.delay;
        if (d_ok >= cfg_.success) {
          e.outcome = Outcome::Fail;
        } else if (d_tg < cfg_.two_generals_rate) {
          e.outcome = Outcome::OneSided;
          e.receiver = d_coin < 0.5 ? e.i : e.j;
        }
        log_.push_back(e);
        pending_.insert({e.completes, e.id});
        ++busy_[pair];
        out.push_back(e);
      }
    }
    return out;
  }

  // Events whose completion step is at or before t, in initiation order.
  std::vector<CommEvent> completed(long t) {
    std::vector<CommEvent> out;
    while (!pending_.empty() && pending_.begin()->first <= t) {
      const CommEvent& e = log_[pending_.begin()->second];
      pending_.erase(pending_.begin());
      auto it = busy_.find({e.i, e.j});
      if (--it->second == 0) busy_.erase(it);
      out.push_back(e);
    }
    return out;
  }

  std::size_t in_flight() const { return pending_.size(); }

  void set_payload(std::size_t id, std::size_t bytes) { log_.at(id).payload_bytes = bytes; }

  void write_log(std::ostream& os) const {
    os << "step_init\tstep_done\ti\tj\toutcome\tpayload_bytes\n";
    for (const auto& e : log_) {
      os << e.initiated << '\t' << e.completes << '\t' << e.i << '\t' << e.j << '\t' << outcome_string(e) << '\t'
         << e.payload_bytes << '\n';
    }
  }

 private:
  NetworkConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<CommEvent> log_;
  std::set<std::pair<long, std::size_t>> pending_;
  std::map<std::pair<int, int>, int> busy_;
  long last_step_ = std::numeric_limits<long>::min();
};

}  // namespace rimesa
