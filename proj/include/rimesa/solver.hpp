#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "rimesa/factors.hpp"
#include "rimesa/kernel.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

struct SolverConfig {
  int max_iterations = 100;
  double initial_trust_radius = 1.0;
  double relative_cost_tolerance = 1e-6;
  double absolute_gradient_tolerance = 1e-8;
  std::vector<double> mu_schedule{0.0, 0.5, 0.9, 0.95, 1.0};
  double activity_threshold = 0.01;
  double boundary_step_tolerance = 1e-4;

  void validate() const {
    if (max_iterations <= 0) throw std::invalid_argument("solver: max_iterations must be positive");
    if (!(initial_trust_radius > 0.0) || !(relative_cost_tolerance > 0.0) ||
        !(absolute_gradient_tolerance > 0.0) || !(activity_threshold > 0.0) ||
        !(boundary_step_tolerance > 0.0)) {
      throw std::invalid_argument("solver: tolerances must be positive");
    }
    if (mu_schedule.empty() || mu_schedule.back() != 1.0) {
      throw std::invalid_argument("solver: mu schedule must end at 1.0");
    }
    if (!std::is_sorted(mu_schedule.begin(), mu_schedule.end()) || mu_schedule.front() < 0.0) {
      throw std::invalid_argument("solver: mu schedule must be nondecreasing in [0, 1]");
    }
  }
};

template <int D>
class FactorGraph {
 public:
  std::size_t add(FactorPtr<D> f) {
    if (!f) throw std::invalid_argument("graph: null factor");
    const std::size_t idx = factors_.size();
    for (const auto& k : f->keys()) adjacency_[k].push_back(idx);
    factors_.push_back(std::move(f));
    return idx;
  }

  std::size_t size() const { return factors_.size(); }
  bool empty() const { return factors_.empty(); }
  const FactorPtr<D>& operator[](std::size_t i) const { return factors_[i]; }
  const std::vector<FactorPtr<D>>& factors() const { return factors_; }

  const std::vector<std::size_t>& factors_of(const Key& k) const {
    static const std::vector<std::size_t> kEmpty;
    auto it = adjacency_.find(k);
    return it == adjacency_.end() ? kEmpty : it->second;
  }

  std::set<Key> variables() const {
    std::set<Key> out;
    for (const auto& [k, _] : adjacency_) out.insert(k);
    return out;
  }

  std::set<Key> neighbors(const Key& k) const {
    std::set<Key> out;
    for (std::size_t f : factors_of(k))
      for (const auto& o : factors_[f]->keys())
        if (o != k) out.insert(o);
    return out;
  }

  bool has_unary() const {
    return std::any_of(factors_.begin(), factors_.end(), [](const auto& f) { return f->keys().size() == 1; });
  }

 private:
  std::vector<FactorPtr<D>> factors_;
  std::map<Key, std::vector<std::size_t>> adjacency_;
};

struct SolveReport {
  bool converged = false;
  int iterations = 0;
  double initial_cost = 0.0;
  double cost = 0.0;
  std::string message;
};

template <int D>
struct BatchResult {
  Values<D> values;
  bool converged = false;
  int iterations = 0;
  double cost = 0.0;
  std::string message;
};

struct RobustEntry {
  std::size_t factor = 0;
  int stage = 0;
  bool inlier = true;
};

using RobustState = std::vector<RobustEntry>;

template <int D>
struct GncResult {
  Values<D> values;
  RobustState robust;
  bool converged = false;
  int iterations = 0;
};

using KernelFn = std::function<RobustKernel(std::size_t)>;

// Squared whitened residual inside the chi-squared(0.95) gate.
template <int D>
bool chi2_inlier(const Factor<D>& f, const Values<D>& values) {
  return f.squared_error(values) < chi2_threshold(f.dim(), kInlierProbability);
}

namespace detail {

// Dogleg trust-region on a subset of variables; everything outside `active` is held fixed.
template <int D>
class SubsetProblem {
 public:
  SubsetProblem(const FactorGraph<D>& graph, Values<D>& values, const std::vector<Key>& active,
                KernelFn kernel_of)
      : graph_(graph), values_(values), kernel_of_(std::move(kernel_of)) {
    int offset = 0;
    for (const auto& k : active) {
      offsets_.emplace(k, offset);
      offset += variable_dof<D>(values_.at(k));
    }
    n_ = offset;
    std::set<std::size_t> fs;
    for (const auto& k : active)
      for (std::size_t f : graph_.factors_of(k)) fs.insert(f);
    factors_.assign(fs.begin(), fs.end());
    keys_ = active;
  }

  int dim() const { return n_; }
  const std::vector<std::size_t>& factors() const { return factors_; }

  double cost(const Values<D>& v) const {
    double c = 0.0;
    for (std::size_t f : factors_) {
      const auto& fac = *graph_[f];
      c += 0.5 * kernel_of_(f).value(fac.squared_error(v));
    }
    return c;
  }

  // IRLS-weighted normal equations: H = sum w J^T J, g = sum w J^T r.
  void linearize(Eigen::SparseMatrix<double>& H, Eigen::VectorXd& g) const {
    std::vector<Eigen::Triplet<double>> trip;
    g = Eigen::VectorXd::Zero(n_);
    for (std::size_t f : factors_) {
      const auto& fac = *graph_[f];
      const auto vars = fac.gather(values_);
      const typename Factor<D>::VarPtrs span(vars);
      const Eigen::VectorXd r = fac.whitened_error(span);
      const double w = kernel_of_(f).influence(r.squaredNorm());
      std::vector<std::pair<int, Eigen::MatrixXd>> blocks;
      for (std::size_t i = 0; i < vars.size(); ++i) {
        auto it = offsets_.find(fac.keys()[i]);
        if (it == offsets_.end()) continue;
        blocks.emplace_back(it->second, fac.jacobian(span, i));
      }
      for (const auto& [oi, Ji] : blocks) {
        g.segment(oi, Ji.cols()) += w * Ji.transpose() * r;
        for (const auto& [oj, Jj] : blocks) {
          const Eigen::MatrixXd Hij = w * Ji.transpose() * Jj;
          for (int a = 0; a < Hij.rows(); ++a)
            for (int b = 0; b < Hij.cols(); ++b) trip.emplace_back(oi + a, oj + b, Hij(a, b));
        }
      }
    }
    H.resize(n_, n_);
    H.setFromTriplets(trip.begin(), trip.end());
  }

  Values<D> retracted(const Eigen::VectorXd& h) const {
    Values<D> out = values_;
    for (const auto& [k, off] : offsets_) {
      const auto& v = values_.at(k);
      out.update(k, retract<D>(v, h.segment(off, variable_dof<D>(v))));
    }
    return out;
  }

  void accept(Values<D> v) { values_ = std::move(v); }
  const Values<D>& values() const { return values_; }

 private:
  const FactorGraph<D>& graph_;
  Values<D>& values_;
  KernelFn kernel_of_;
  std::map<Key, int> offsets_;
  std::vector<std::size_t> factors_;
  std::vector<Key> keys_;
  int n_ = 0;
};

inline Eigen::VectorXd dogleg_step(const Eigen::VectorXd& h_gn, const Eigen::VectorXd& g,
                                   const Eigen::SparseMatrix<double>& H, double radius) {
  if (h_gn.norm() <= radius) return h_gn;
  const double gHg = g.dot(H * g);
  const double alpha = gHg > 0.0 ? g.squaredNorm() / gHg : radius / std::max(g.norm(), 1e-300);
  const Eigen::VectorXd h_sd = -alpha * g;
  const double nsd = h_sd.norm();
  if (nsd >= radius) return (radius / nsd) * h_sd;
  const Eigen::VectorXd d = h_gn - h_sd;
  const double a = d.squaredNorm(), b = 2.0 * h_sd.dot(d), c = nsd * nsd - radius * radius;
  const double beta = (-b + std::sqrt(std::max(0.0, b * b - 4.0 * a * c))) / (2.0 * a);
  return h_sd + beta * d;
}

}  // namespace detail

// Gradient of the robust cost 0.5 * sum rho(|r|^2) over `active`.
template <int D>
Eigen::VectorXd robust_gradient(const FactorGraph<D>& graph, const Values<D>& values,
                                const std::vector<Key>& active, KernelFn kernel_of) {
  Values<D> copy = values;
  detail::SubsetProblem<D> p(graph, copy, active, std::move(kernel_of));
  Eigen::SparseMatrix<double> H;
  Eigen::VectorXd g;
  p.linearize(H, g);
  return g;
}

// Powell dogleg over `active`, modifying `values` in place.
template <int D>
SolveReport solve_subset(const FactorGraph<D>& graph, Values<D>& values, const std::vector<Key>& active,
                         const KernelFn& kernel_of, const SolverConfig& cfg) {
  SolveReport rep;
  if (active.empty()) {
    rep.converged = true;
    rep.message = "nothing to solve";
    return rep;
  }
  detail::SubsetProblem<D> prob(graph, values, active, kernel_of);
  double cost = prob.cost(values);
  rep.initial_cost = rep.cost = cost;
  double radius = cfg.initial_trust_radius;

  Eigen::SparseMatrix<double> H;
  Eigen::VectorXd g;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool analyzed = false;
  bool relinearize = true;
  Eigen::VectorXd h_gn;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    rep.iterations = it + 1;
    if (relinearize) {
      prob.linearize(H, g);
      if (g.lpNorm<Eigen::Infinity>() < cfg.absolute_gradient_tolerance) {
        rep.converged = true;
        rep.message = "gradient tolerance";
        break;
      }
      if (!analyzed) {
        ldlt.analyzePattern(H);
        analyzed = true;
      }
      ldlt.factorize(H);
      double damping = 0.0;
      const double scale = std::max(1e-12, H.diagonal().cwiseAbs().maxCoeff());
      while (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
        damping = damping == 0.0 ? 1e-9 * scale : damping * 10.0;
        if (damping > 1e6 * scale) {
          rep.message = "singular normal equations";
          rep.cost = cost;
          return rep;
        }
        Eigen::SparseMatrix<double> Hd = H;
        for (int i = 0; i < Hd.rows(); ++i) Hd.coeffRef(i, i) += damping;
        ldlt.factorize(Hd);
      }
      h_gn = ldlt.solve(-g);
      relinearize = false;
    }

    const double radius_used = radius;
    const Eigen::VectorXd h = detail::dogleg_step(h_gn, g, H, radius);
    const double predicted = -g.dot(h) - 0.5 * h.dot(H * h);
    Values<D> candidate = prob.retracted(h);
    const double new_cost = prob.cost(candidate);
    const double actual = cost - new_cost;
    const double ratio = predicted > 0.0 ? actual / predicted : (actual > 0.0 ? 1.0 : -1.0);

    if (actual > 0.0 && ratio > 0.0) {
      prob.accept(std::move(candidate));
      cost = new_cost;
      relinearize = true;
      if (ratio > 0.75) {
        radius = std::max(radius, 3.0 * h.norm());
      } else if (ratio < 0.25) {
        radius *= 0.5;
      }
      const bool full_step = h_gn.norm() <= radius_used;
      if (full_step && actual < cfg.relative_cost_tolerance * (cost + actual)) {
        rep.converged = true;
        rep.message = "relative cost tolerance";
        break;
      }
    } else {
      radius = 0.5 * std::min(radius, h.norm());
    }
    if (radius < 1e-12) {
      rep.converged = true;
      rep.message = "trust region collapsed";
      break;
    }
  }
  if (!rep.converged) rep.message = "max iterations";
  rep.cost = cost;
  return rep;
}

namespace detail {

template <int D>
void require_inits(const FactorGraph<D>& graph, const Values<D>& init) {
  if (!graph.has_unary()) throw std::invalid_argument("solver: unconstrained gauge (no prior factor)");
  for (const auto& k : graph.variables())
    if (!init.contains(k)) throw std::invalid_argument("solver: missing initial value for " + to_string(k));
}

template <int D>
std::vector<Key> all_keys(const FactorGraph<D>& graph) {
  const auto s = graph.variables();
  return {s.begin(), s.end()};
}

}  // namespace detail

template <int D>
BatchResult<D> optimize_batch(const FactorGraph<D>& graph, const Values<D>& init, const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::require_inits(graph, init);
  BatchResult<D> out;
  out.values = init;
  const auto rep = solve_subset<D>(graph, out.values, detail::all_keys(graph),
                                   [&](std::size_t f) { return graph[f]->kernel(); }, cfg);
  out.converged = rep.converged;
  out.iterations = rep.iterations;
  out.cost = rep.cost;
  out.message = rep.message;
  return out;
}

template <int D>
RobustState classify(const FactorGraph<D>& graph, const Values<D>& values, int stage) {
  RobustState rs;
  for (std::size_t f = 0; f < graph.size(); ++f) {
    if (!graph[f]->outlier_candidate()) continue;
    rs.push_back({f, stage, chi2_inlier(*graph[f], values)});
  }
  return rs;
}

template <int D>
GncResult<D> optimize_gnc(const FactorGraph<D>& graph, const Values<D>& init, const SolverConfig& cfg = {}) {
  cfg.validate();
  detail::require_inits(graph, init);
  GncResult<D> out;
  out.values = init;
  out.converged = true;
  const auto keys = detail::all_keys(graph);
  for (double mu : cfg.mu_schedule) {
    const auto rep = solve_subset<D>(graph, out.values, keys,
                                     [&](std::size_t f) { return graph[f]->kernel().with_mu(mu); }, cfg);
    out.iterations += rep.iterations;
    out.converged = rep.converged;
  }
  out.robust = classify(graph, out.values, static_cast<int>(cfg.mu_schedule.size()) - 1);
  return out;
}

// Warm-started incremental solver with the update(new factors, inits, reelim, cvx) contract.
template <int D>
class IncrementalSolver {
 public:
  explicit IncrementalSolver(SolverConfig cfg = {}) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const FactorGraph<D>& graph() const { return graph_; }
  const Values<D>& values() const { return values_; }
  const SolverConfig& config() const { return cfg_; }
  int final_stage() const { return static_cast<int>(cfg_.mu_schedule.size()) - 1; }
  int stage(std::size_t f) const { return stage_.at(f); }
  const SolveReport& last_report() const { return last_; }

  RobustKernel effective_kernel(std::size_t f) const {
    return graph_[f]->kernel().with_mu(cfg_.mu_schedule[static_cast<std::size_t>(stage_.at(f))]);
  }

  // Influence of the factor at its current residual under the final kernel (mu = 1).
  double final_influence(std::size_t f) const {
    const auto& fac = *graph_[f];
    return fac.kernel().with_mu(1.0).influence(fac.squared_error(values_));
  }

  RobustState robust_state() const {
    RobustState rs;
    for (std::size_t f = 0; f < graph_.size(); ++f) {
      if (!graph_[f]->outlier_candidate()) continue;
      rs.push_back({f, stage_[f], chi2_inlier(*graph_[f], values_)});
    }
    return rs;
  }

  // Overwrites an existing estimate (robust re-initialization).
  void set_value(const Key& k, Variable<D> v) { values_.update(k, std::move(v)); }

  const Values<D>& update(const std::vector<FactorPtr<D>>& new_factors, const Values<D>& new_inits,
                          const std::set<Key>& reelim = {}, const std::set<Key>& cvx = {}) {
    for (const auto& [k, v] : new_inits) {
      if (values_.contains(k)) throw std::invalid_argument("duplicate initialization of " + to_string(k));
    }
    for (const auto& f : new_factors) {
      if (!f) throw std::invalid_argument("incremental update: null factor");
      for (const auto& k : f->keys()) {
        if (!values_.contains(k) && !new_inits.contains(k)) {
          throw std::invalid_argument("incremental update: missing initial value for " + to_string(k));
        }
      }
    }
    for (const auto& [k, v] : new_inits) values_.insert(k, v);

    std::set<std::size_t> pending;
    for (const auto& k : cvx) {
      for (std::size_t f : graph_.factors_of(k)) {
        if (graph_[f]->outlier_candidate() && graph_[f]->kernel().type == KernelType::Graduated) {
          stage_[f] = 0;
          pending.insert(f);
        }
      }
    }
    std::set<Key> seeds(reelim.begin(), reelim.end());
    for (const auto& f : new_factors) {
      const std::size_t idx = graph_.add(f);
      const bool candidate = f->outlier_candidate() && f->kernel().type == KernelType::Graduated;
      stage_.push_back(candidate ? 0 : final_stage());
      if (candidate) pending.insert(idx);
      seeds.insert(f->keys().begin(), f->keys().end());
    }
    for (std::size_t f : pending) seeds.insert(graph_[f]->keys().begin(), graph_[f]->keys().end());
    for (auto it = seeds.begin(); it != seeds.end();) {
      it = values_.contains(*it) && !graph_.factors_of(*it).empty() ? std::next(it) : seeds.erase(it);
    }
    last_ = SolveReport{};
    last_.converged = true;
    if (seeds.empty()) return values_;
    if (!graph_.has_unary()) throw std::invalid_argument("solver: unconstrained gauge (no prior factor)");

    int first = final_stage();
    for (std::size_t f : pending) first = std::min(first, stage_[f]);

    std::set<Key> active = seeds;
    for (int st = first; st <= final_stage(); ++st) {
      for (std::size_t f : pending) stage_[f] = std::max(stage_[f], st);
      active = solve_wavefront(active);
    }
    return values_;
  }

 private:
  std::set<Key> solve_wavefront(std::set<Key> active) {
    const KernelFn kern = [this](std::size_t f) { return effective_kernel(f); };
    int rings = 1;
    for (int round = 0; round < 64; ++round) {
      const Values<D> before = values_;
      const std::vector<Key> keys(active.begin(), active.end());
      const auto rep = solve_subset<D>(graph_, values_, keys, kern, cfg_);
      last_.iterations += rep.iterations;
      last_.cost = rep.cost;
      last_.converged = last_.converged && rep.converged;
      last_.message = rep.message;

      std::set<Key> frontier;
      for (const auto& k : keys) {
        if (local_coordinates<D>(before.at(k), values_.at(k)).norm() > cfg_.activity_threshold) {
          for (const auto& n : graph_.neighbors(k))
            if (!active.count(n)) frontier.insert(n);
        }
      }
      for (const auto& b : boundary(active)) {
        if (!frontier.count(b) && boundary_step(b, kern) > cfg_.boundary_step_tolerance) frontier.insert(b);
      }
      if (frontier.empty()) break;
      // Ring doubling: expand further on each round so long corrections converge in few re-solves.
      std::set<Key> ring = frontier;
      for (int r = 1; r < rings; ++r) {
        std::set<Key> next;
        for (const auto& k : ring)
          for (const auto& n : graph_.neighbors(k))
            if (!active.count(n) && !frontier.count(n)) next.insert(n);
        if (next.empty()) break;
        frontier.insert(next.begin(), next.end());
        ring = std::move(next);
      }
      active.insert(frontier.begin(), frontier.end());
      rings *= 2;
    }
    return active;
  }

  std::set<Key> boundary(const std::set<Key>& active) const {
    std::set<Key> out;
    for (const auto& k : active)
      for (const auto& n : graph_.neighbors(k))
        if (!active.count(n)) out.insert(n);
    return out;
  }

  // Norm of the single-variable Newton step with all neighbors fixed.
  double boundary_step(const Key& k, const KernelFn& kern) const {
    Values<D> copy = values_;
    detail::SubsetProblem<D> p(graph_, copy, {k}, kern);
    Eigen::SparseMatrix<double> H;
    Eigen::VectorXd g;
    p.linearize(H, g);
    Eigen::MatrixXd Hd(H);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
    if (ldlt.info() != Eigen::Success) return 0.0;
    const Eigen::VectorXd step = ldlt.solve(-g);
    return step.allFinite() ? step.norm() : 0.0;
  }

  SolverConfig cfg_;
  FactorGraph<D> graph_;
  Values<D> values_;
  std::vector<int> stage_;
  SolveReport last_;
};

}  // namespace rimesa
