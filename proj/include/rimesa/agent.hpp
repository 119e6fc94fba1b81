#pragma once

// Per-robot incremental consensus agent: bookkeeping, update, two-stage exchange, incorporation.

#include <algorithm>
#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rimesa/consensus.hpp"
#include "rimesa/factors.hpp"
#include "rimesa/key.hpp"
#include "rimesa/solver.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

enum class PriorRobustness { None, Graduated, GemanMcClure };

struct AgentConfig {
  double beta_uninit = 1e-4;
  double beta_init = 1.0;
  double decay = 0.9;
  ConstraintKind constraint = ConstraintKind::Geodesic;
  ConsensusWeights weights;
  PriorRobustness prior_robustness = PriorRobustness::Graduated;
  double prior_gm_shape = 6.0;
  double inlier_influence = kOutlierInfluence;
  SolverConfig solver;

  void validate() const {
    if (!(beta_uninit > 0.0) || !(beta_init > 0.0)) throw std::invalid_argument("agent: penalties must be positive");
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("agent: decay outside [0, 1]");
    if (!(prior_gm_shape > 0.0)) throw std::invalid_argument("agent: GM shape must be positive");
    solver.validate();
  }
};

struct ObservabilityMask {
  bool rotation = false;
  bool translation = false;

  static ObservabilityMask full() { return {true, true}; }
  static ObservabilityMask none() { return {}; }
  static ObservabilityMask translation_only() { return {false, true}; }

  bool any() const { return rotation || translation; }
  ObservabilityMask operator|(const ObservabilityMask& o) const {
    return {rotation || o.rotation, translation || o.translation};
  }
  bool operator==(const ObservabilityMask&) const = default;
};

// What a factor observes of variable k, assuming the other keys are known.
template <int D>
ObservabilityMask observability(const Factor<D>& f, const Key& k) {
  const auto& keys = f.keys();
  const bool is_target = keys.size() > 1 && keys.back() == k;
  switch (f.kind()) {
    case FactorKind::PriorPose:
    case FactorKind::BetweenPose:
      return ObservabilityMask::full();
    case FactorKind::PriorPoint:
      return ObservabilityMask::translation_only();
    case FactorKind::BearingRange:
    case FactorKind::LandmarkObs:
      return is_target ? ObservabilityMask::translation_only() : ObservabilityMask::none();
    case FactorKind::Range:
    case FactorKind::BiasedPrior:
      return ObservabilityMask::none();
  }
  return ObservabilityMask::none();
}

// Keep locally observed components, take the rest from the owner.
template <int D>
Variable<D> robust_init(const Variable<D>& local, const Variable<D>& owner, const ObservabilityMask& mask) {
  if (local.index() != owner.index()) throw std::invalid_argument("robust_init: variable type mismatch");
  if (const auto* lp = std::get_if<Pose<D>>(&local)) {
    const auto& op = std::get<Pose<D>>(owner);
    return Pose<D>(mask.rotation ? lp->rotation() : op.rotation(),
                   mask.translation ? lp->translation() : op.translation());
  }
  const auto& lv = std::get<Eigen::VectorXd>(local);
  const auto& ov = std::get<Eigen::VectorXd>(owner);
  if (lv.size() != ov.size()) throw std::invalid_argument("robust_init: dimension mismatch");
  return mask.translation ? lv : ov;
}

struct Stage1Payload {
  std::set<Key> shared;
  std::set<Key> environment;
  std::set<Key> pending;
  std::map<Key, ObservabilityMask> masks;
};

template <int D>
struct CommSnapshot {
  int robot = 0;
  int neighbor = 0;
  Values<D> estimates;
  Stage1Payload meta;
};

template <int D>
struct CommResult {
  int robot = 0;
  int neighbor = 0;
  Stage1Payload sent;
  Stage1Payload received;
  std::set<Key> joint;
  std::map<Key, Variable<D>> sent_estimates;
  std::map<Key, Variable<D>> received_estimates;

  std::size_t payload_bytes() const {
    auto meta = [](const Stage1Payload& p) {
      return 8 * (p.shared.size() + p.environment.size() + p.pending.size()) + 9 * p.masks.size();
    };
    std::size_t n = meta(sent) + meta(received);
    for (const auto* m : {&sent_estimates, &received_estimates})
      for (const auto& [k, v] : *m) n += 8 + 8 * static_cast<std::size_t>(variable_dof<D>(v));
    return n;
  }
};

// Both stages of the pairwise protocol, as a pure function of the two snapshots.
template <int D>
std::pair<CommResult<D>, CommResult<D>> exchange(const CommSnapshot<D>& a, const CommSnapshot<D>& b) {
  if (a.neighbor != b.robot || b.neighbor != a.robot || a.robot == b.robot) {
    throw std::invalid_argument("exchange: snapshots are not addressed to each other");
  }
  std::set<Key> joint = a.meta.shared;
  joint.insert(b.meta.shared.begin(), b.meta.shared.end());
  std::set_intersection(a.meta.environment.begin(), a.meta.environment.end(), b.meta.environment.begin(),
                        b.meta.environment.end(), std::inserter(joint, joint.end()));

  auto estimates = [&](const CommSnapshot<D>& s) {
    std::map<Key, Variable<D>> out;
    for (const auto& k : joint)
      if (s.estimates.contains(k)) out.emplace(k, s.estimates.at(k));
    return out;
  };
  CommResult<D> ra{a.robot, b.robot, a.meta, b.meta, joint, estimates(a), estimates(b)};
  CommResult<D> rb{b.robot, a.robot, b.meta, a.meta, joint, ra.received_estimates, ra.sent_estimates};
  return {std::move(ra), std::move(rb)};
}

template <int D>
class Agent {
 public:
  using SharedEntry = std::pair<int, Key>;

  explicit Agent(int id, AgentConfig cfg = {}) : id_(id), cfg_(std::move(cfg)), solver_((cfg_.validate(), cfg_.solver)) {
    if (id < 0) throw std::invalid_argument("agent: robot id must be nonnegative");
  }

  int id() const { return id_; }
  const AgentConfig& config() const { return cfg_; }
  const Values<D>& estimate() const { return solver_.values(); }
  const IncrementalSolver<D>& solver() const { return solver_; }

  const std::set<Key>& shared_with(int j) const { return lookup(shared_, j); }
  const std::set<Key>& pending_from(int j) const { return lookup(pending_, j); }
  const std::set<Key>& environment() const { return environment_; }
  const std::set<Key>& reelim_cache() const { return reelim_; }
  const std::set<Key>& cvx_cache() const { return cvx_; }
  const std::vector<FactorPtr<D>>& prior_cache() const { return cached_priors_; }
  const std::map<Key, std::set<Key>>& connections() const { return connections_; }
  const std::map<Key, ObservabilityMask>& observability_map() const { return observed_; }

  std::vector<int> neighbors() const {
    std::vector<int> out;
    for (const auto& [j, s] : shared_)
      if (!s.empty()) out.push_back(j);
    return out;
  }

  bool has_term(int j, const Key& s) const { return terms_.count({j, s}) > 0; }
  const ConsensusTerm<D>& term(int j, const Key& s) const {
    auto it = terms_.find({j, s});
    if (it == terms_.end()) throw std::out_of_range("agent: no consensus term for " + to_string(s));
    return *it->second;
  }
  std::size_t term_count() const { return terms_.size(); }

  // Registers environment variables and shared variables; see update() for the usual entry point.
  void bookkeep(const std::set<Key>& env_new, const std::vector<SharedEntry>& shared_new, const Values<D>& inits,
                bool locally_observed, const std::map<Key, ObservabilityMask>& masks = {}) {
    std::set<SharedEntry> seen;
    for (const auto& [j, s] : shared_new) {
      if (j == id_ || j < 0) throw std::invalid_argument("bookkeep: invalid neighbor for " + to_string(s));
      if (lookup(shared_, j).count(s) || !seen.insert({j, s}).second) {
        throw std::invalid_argument("bookkeep: " + to_string(s) + " already registered for robot " +
                                    std::to_string(j));
      }
      if (!inits.contains(s)) throw std::invalid_argument("bookkeep: missing initial value for " + to_string(s));
    }

    environment_.insert(env_new.begin(), env_new.end());
    for (const auto& [j, s] : shared_new) {
      const Variable<D>& init = inits.at(s);
      shared_[j].insert(s);
      if (s.owner == j) pending_[j].insert(s);

      auto term = std::make_shared<ConsensusTerm<D>>();
      term->kind = effective_constraint<D>(cfg_.constraint, init);
      term->z = initial_edge_value<D>(term->kind, init);
      term->dual = Eigen::VectorXd::Zero(constraint_dim<D>(cfg_.constraint, init));
      term->penalty = cfg_.beta_uninit;
      terms_[{j, s}] = term;

      const Eigen::VectorXd w = constraint_weights<D>(cfg_.constraint, init, cfg_.weights);
      cached_priors_.push_back(
          std::make_shared<BiasedPriorFactor<D>>(s, term, w, prior_kernel(static_cast<int>(w.size())), j));

      auto& q = connections_[s];
      const auto nb = solver_.graph().neighbors(s);
      q.insert(nb.begin(), nb.end());

      if (locally_observed) {
        auto it = masks.find(s);
        const ObservabilityMask m = it == masks.end() ? ObservabilityMask::full() : it->second;
        observed_[s] = observed_.count(s) ? observed_[s] | m : m;
      }
    }
  }

  const Values<D>& update(const std::vector<FactorPtr<D>>& factors, const Values<D>& inits) {
    std::set<Key> env_new;
    std::vector<SharedEntry> shared_new;
    std::map<Key, ObservabilityMask> masks;
    for (const auto& f : factors) {
      if (!f) throw std::invalid_argument("agent update: null factor");
      for (const auto& k : f->keys()) {
        if (k.owner == id_) continue;
        if (k.owner == kEnvironment) {
          if (!environment_.count(k)) env_new.insert(k);
          continue;
        }
        masks[k] = masks.count(k) ? masks[k] | observability(*f, k) : observability(*f, k);
        const SharedEntry e{k.owner, k};
        if (!lookup(shared_, k.owner).count(k) &&
            std::find(shared_new.begin(), shared_new.end(), e) == shared_new.end()) {
          shared_new.push_back(e);
        }
      }
    }

    Values<D> phi = inits;
    for (const auto& [j, s] : shared_new)
      if (!phi.contains(s) && solver_.values().contains(s)) phi.insert(s, solver_.values().at(s));
    bookkeep(env_new, shared_new, phi, true, masks);
    for (const auto& [k, m] : masks)
      if (observed_.count(k)) observed_[k] = observed_[k] | m;

    std::vector<FactorPtr<D>> all = factors;
    all.insert(all.end(), cached_priors_.begin(), cached_priors_.end());
    solver_.update(all, inits, reelim_, cvx_);

    for (const auto& f : factors) {
      for (const auto& k : f->keys()) {
        auto it = connections_.find(k);
        if (it == connections_.end()) continue;
        for (const auto& o : f->keys())
          if (o != k) it->second.insert(o);
      }
    }
    cached_priors_.clear();
    reelim_.clear();
    cvx_.clear();
    return solver_.values();
  }

  CommSnapshot<D> begin_communication(int neighbor) const {
    if (neighbor == id_ || neighbor < 0) throw std::invalid_argument("begin_communication: invalid neighbor");
    CommSnapshot<D> snap;
    snap.robot = id_;
    snap.neighbor = neighbor;
    snap.estimates = solver_.values();
    snap.meta.shared = lookup(shared_, neighbor);
    snap.meta.environment = environment_;
    snap.meta.pending = lookup(pending_, neighbor);
    for (const auto& k : snap.meta.pending) {
      auto it = observed_.find(k);
      snap.meta.masks[k] = it == observed_.end() ? ObservabilityMask::none() : it->second;
    }
    return snap;
  }

  void incorporate(const CommResult<D>& r) {
    if (r.robot != id_) throw std::invalid_argument("incorporate: result addressed to robot " + std::to_string(r.robot));
    const int j = r.neighbor;
    if (j == id_ || j < 0) throw std::invalid_argument("incorporate: unknown neighbor " + std::to_string(j));

    const Values<D>& theta = solver_.values();
    std::vector<SharedEntry> shared_new;
    for (const auto& s : r.joint)
      if (!lookup(shared_, j).count(s) && theta.contains(s)) shared_new.push_back({j, s});
    bookkeep({}, shared_new, theta, false);

    std::map<Key, Variable<D>> mine = r.sent_estimates;
    std::map<Key, Variable<D>> theirs = r.received_estimates;
    auto usable = [&](const Key& s) { return mine.count(s) && theirs.count(s) && has_term(j, s); };

    std::set<Key> initialized;
    for (const auto& s : r.sent.pending) {
      if (!usable(s)) continue;
      const Variable<D> v = robust_init<D>(mine.at(s), theirs.at(s), mask_of(r.sent, s));
      if (theta.contains(s)) solver_.set_value(s, v);
      mine.insert_or_assign(s, v);
      initialized.insert(s);
    }
    for (const auto& s : r.received.pending) {
      if (!usable(s)) continue;
      theirs.insert_or_assign(s, robust_init<D>(theirs.at(s), mine.at(s), mask_of(r.received, s)));
    }
    auto& pend = pending_[j];
    for (const auto& s : initialized) pend.erase(s);

    std::set<Key> touched;
    for (const auto& s : r.joint) {
      if (!usable(s)) continue;
      auto& term = *terms_.at({j, s});
      const Variable<D>& lo = id_ < j ? mine.at(s) : theirs.at(s);
      const Variable<D>& hi = id_ < j ? theirs.at(s) : mine.at(s);
      term.z = edge_update<D>(term.kind, lo, hi);
      term.dual = dual_update(term.dual, term.penalty, constraint_residual<D>(term.kind, mine.at(s), term.z),
                              cfg_.decay);
      if (term.penalty == cfg_.beta_uninit) term.penalty = cfg_.beta_init;
      touched.insert(s);
    }

    reelim_.insert(touched.begin(), touched.end());
    if (!r.sent.pending.empty()) {
      for (const auto& s : touched) {
        cvx_.insert(s);
        for (const auto& q : connections_[s])
          if (theta.contains(q)) cvx_.insert(q);
      }
    }
  }

  // Inlier decisions for outlier-candidate measurement factors.
  std::vector<std::pair<FactorPtr<D>, bool>> classifications() const {
    std::vector<std::pair<FactorPtr<D>, bool>> out;
    const auto& g = solver_.graph();
    for (std::size_t f = 0; f < g.size(); ++f) {
      const auto& fac = g[f];
      if (!fac->outlier_candidate() || fac->kind() == FactorKind::BiasedPrior) continue;
      const bool inlier = fac->kernel().type == KernelType::Graduated
                              ? solver_.final_influence(f) >= cfg_.inlier_influence
                              : chi2_inlier(*fac, solver_.values());
      out.emplace_back(fac, inlier);
    }
    return out;
  }

 private:
  static const std::set<Key>& lookup(const std::map<int, std::set<Key>>& m, int j) {
    static const std::set<Key> kEmpty;
    auto it = m.find(j);
    return it == m.end() ? kEmpty : it->second;
  }

  static ObservabilityMask mask_of(const Stage1Payload& p, const Key& s) {
    auto it = p.masks.find(s);
    return it == p.masks.end() ? ObservabilityMask::none() : it->second;
  }

  RobustKernel prior_kernel(int dim) const {
    switch (cfg_.prior_robustness) {
      case PriorRobustness::Graduated: return RobustKernel::graduated_for_dim(dim, 1.0);
      case PriorRobustness::GemanMcClure: return RobustKernel::geman_mcclure(cfg_.prior_gm_shape);
      case PriorRobustness::None: break;
    }
    return RobustKernel::none();
  }

  int id_;
  AgentConfig cfg_;
  IncrementalSolver<D> solver_;

  std::map<int, std::set<Key>> shared_;
  std::map<int, std::set<Key>> pending_;
  std::set<Key> environment_;
  std::map<std::pair<int, Key>, TermPtr<D>> terms_;
  std::vector<FactorPtr<D>> cached_priors_;
  std::set<Key> reelim_;
  std::set<Key> cvx_;
  std::map<Key, std::set<Key>> connections_;
  std::map<Key, ObservabilityMask> observed_;
};

}  // namespace rimesa
