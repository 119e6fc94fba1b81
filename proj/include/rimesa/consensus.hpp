#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "rimesa/factors.hpp"
#include "rimesa/manifold.hpp"
#include "rimesa/solver.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

enum class ConstraintKind { Geodesic, ApxGeodesic, Split, Chordal, Linear };

inline const char* to_string(ConstraintKind c) {
  switch (c) {
    case ConstraintKind::Geodesic: return "geodesic";
    case ConstraintKind::ApxGeodesic: return "apx_geodesic";
    case ConstraintKind::Split: return "split";
    case ConstraintKind::Chordal: return "chordal";
    case ConstraintKind::Linear: return "linear";
  }
  return "?";
}

inline ConstraintKind parse_constraint(const std::string& s) {
  for (auto c : {ConstraintKind::Geodesic, ConstraintKind::ApxGeodesic, ConstraintKind::Split,
                 ConstraintKind::Chordal, ConstraintKind::Linear}) {
    if (s == to_string(c)) return c;
  }
  throw std::invalid_argument("unknown constraint function '" + s + "'");
}

// Edge variable: a pose for geodesic/split, a vector otherwise.
template <int D>
using EdgeValue = std::variant<Pose<D>, Eigen::VectorXd>;

// Point variables always use the linear constraint.
template <int D>
ConstraintKind effective_constraint(ConstraintKind c, const Variable<D>& v) {
  return std::holds_alternative<Pose<D>>(v) ? c : ConstraintKind::Linear;
}

template <int D>
int constraint_dim(ConstraintKind c, const Variable<D>& v) {
  switch (effective_constraint<D>(c, v)) {
    case ConstraintKind::Chordal: return D * D + D;
    case ConstraintKind::Linear: return variable_dof<D>(v);
    default: return kPoseDof<D>;
  }
}

namespace detail {

template <int D>
const Pose<D>& pose_arg(const Variable<D>& v, ConstraintKind c) {
  const auto* p = std::get_if<Pose<D>>(&v);
  if (!p) throw std::invalid_argument(std::string(to_string(c)) + " constraint requires a pose");
  return *p;
}

template <int D>
const Eigen::VectorXd& vector_arg(const Variable<D>& v, ConstraintKind c) {
  const auto* p = std::get_if<Eigen::VectorXd>(&v);
  if (!p) throw std::invalid_argument(std::string(to_string(c)) + " constraint requires a vector");
  return *p;
}

template <int D>
const Pose<D>& edge_pose(const EdgeValue<D>& z, ConstraintKind c) {
  const auto* p = std::get_if<Pose<D>>(&z);
  if (!p) throw std::invalid_argument(std::string(to_string(c)) + " edge value must be a pose");
  return *p;
}

template <int D>
const Eigen::VectorXd& edge_vector(const EdgeValue<D>& z, ConstraintKind c, Eigen::Index n) {
  const auto* p = std::get_if<Eigen::VectorXd>(&z);
  if (!p) throw std::invalid_argument(std::string(to_string(c)) + " edge value must be a vector");
  if (p->size() != n) throw std::invalid_argument(std::string(to_string(c)) + ": edge dimension mismatch");
  return *p;
}

}  // namespace detail

template <int D>
Eigen::VectorXd constraint_residual(ConstraintKind c, const Variable<D>& theta, const EdgeValue<D>& z) {
  switch (c) {
    case ConstraintKind::Geodesic: {
      const auto& t = detail::pose_arg<D>(theta, c);
      return between(detail::edge_pose<D>(z, c), t).log();
    }
    case ConstraintKind::ApxGeodesic: {
      const Eigen::VectorXd l = detail::pose_arg<D>(theta, c).log();
      return l - detail::edge_vector<D>(z, c, l.size());
    }
    case ConstraintKind::Split: {
      const auto& t = detail::pose_arg<D>(theta, c);
      const auto& zp = detail::edge_pose<D>(z, c);
      Eigen::VectorXd out(kPoseDof<D>);
      out.head(kRotationDof<D>) = (zp.rotation().inverse() * t.rotation()).log();
      out.tail(D) = t.translation() - zp.translation();
      return out;
    }
    case ConstraintKind::Chordal: {
      const Eigen::VectorXd v = chordal_vec(detail::pose_arg<D>(theta, c));
      return v - detail::edge_vector<D>(z, c, v.size());
    }
    case ConstraintKind::Linear: {
      const auto& a = detail::vector_arg<D>(theta, c);
      return a - detail::edge_vector<D>(z, c, a.size());
    }
  }
  throw std::invalid_argument("constraint_residual: unknown constraint");
}

// Closed-form (or lambda = 0 approximate) edge update. Callers pass the lower robot id first
// so both sides compute bit-identical values.
template <int D>
EdgeValue<D> edge_update(ConstraintKind c, const Variable<D>& a, const Variable<D>& b) {
  switch (c) {
    case ConstraintKind::Geodesic:
    case ConstraintKind::Split:
      return split_interpolate(detail::pose_arg<D>(a, c), detail::pose_arg<D>(b, c), 0.5);
    case ConstraintKind::ApxGeodesic:
      return Eigen::VectorXd(0.5 * (detail::pose_arg<D>(a, c).log() + detail::pose_arg<D>(b, c).log()));
    case ConstraintKind::Chordal:
      return Eigen::VectorXd(0.5 * (chordal_vec(detail::pose_arg<D>(a, c)) + chordal_vec(detail::pose_arg<D>(b, c))));
    case ConstraintKind::Linear: {
      const auto& x = detail::vector_arg<D>(a, c);
      const auto& y = detail::vector_arg<D>(b, c);
      if (x.size() != y.size()) throw std::invalid_argument("linear edge update: dimension mismatch");
      return Eigen::VectorXd(0.5 * (x + y));
    }
  }
  throw std::invalid_argument("edge_update: unknown constraint");
}

// Edge value that makes the constraint exactly satisfied at theta.
template <int D>
EdgeValue<D> initial_edge_value(ConstraintKind c, const Variable<D>& theta) {
  switch (c) {
    case ConstraintKind::Geodesic:
    case ConstraintKind::Split:
      return detail::pose_arg<D>(theta, c);
    case ConstraintKind::ApxGeodesic:
      return Eigen::VectorXd(detail::pose_arg<D>(theta, c).log());
    case ConstraintKind::Chordal:
      return chordal_vec(detail::pose_arg<D>(theta, c));
    case ConstraintKind::Linear:
      return detail::vector_arg<D>(theta, c);
  }
  throw std::invalid_argument("initial_edge_value: unknown constraint");
}

inline Eigen::VectorXd dual_update(const Eigen::VectorXd& lambda, double beta, const Eigen::VectorXd& q,
                                   double decay) {
  if (lambda.size() != q.size()) throw std::invalid_argument("dual_update: dimension mismatch");
  return decay * lambda + beta * q;
}

struct ConsensusWeights {
  double sigma_r = 0.1;
  double sigma_t = 1.0;
};

// Per-dimension inverse sigmas for the constraint residual.
template <int D>
Eigen::VectorXd constraint_weights(ConstraintKind c, const Variable<D>& theta, const ConsensusWeights& w) {
  const ConstraintKind e = effective_constraint<D>(c, theta);
  const int n = constraint_dim<D>(c, theta);
  Eigen::VectorXd out(n);
  if (e == ConstraintKind::Linear) {
    out.setConstant(1.0 / w.sigma_t);
  } else if (e == ConstraintKind::Chordal) {
    out.head(D * D).setConstant(1.0 / w.sigma_r);
    out.tail(D).setConstant(1.0 / w.sigma_t);
  } else {
    out.head(kRotationDof<D>).setConstant(1.0 / w.sigma_r);
    out.tail(D).setConstant(1.0 / w.sigma_t);
  }
  return out;
}

// Edge value, dual and penalty for one (neighbor, shared variable) constraint.
template <int D>
struct ConsensusTerm {
  ConstraintKind kind = ConstraintKind::Geodesic;
  EdgeValue<D> z;
  Eigen::VectorXd dual;
  double penalty = 1.0;
};

template <int D>
using TermPtr = std::shared_ptr<ConsensusTerm<D>>;

// (Robust) weighted biased prior. Reads z, lambda and beta from the shared term at evaluation time.
template <int D>
class BiasedPriorFactor final : public Factor<D> {
 public:
  BiasedPriorFactor(Key k, std::shared_ptr<const ConsensusTerm<D>> term, Eigen::VectorXd weights,
                    RobustKernel kernel, int neighbor)
      : Factor<D>(FactorKind::BiasedPrior, {k}, kernel, kernel.type == KernelType::Graduated),
        term_(std::move(term)), weights_(std::move(weights)), neighbor_(neighbor) {
    if (!term_) throw std::invalid_argument("biased prior: null consensus term");
    if (term_->dual.size() != weights_.size()) throw std::invalid_argument("biased prior: dimension mismatch");
  }

  int neighbor() const { return neighbor_; }
  const ConsensusTerm<D>& term() const { return *term_; }
  int dim() const override { return static_cast<int>(weights_.size()); }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    return constraint_residual<D>(term_->kind, *vars[0], term_->z) + term_->dual / term_->penalty;
  }

  Eigen::VectorXd whiten(const Eigen::VectorXd& e) const override {
    return std::sqrt(0.5 * term_->penalty) * weights_.cwiseProduct(e);
  }

  Eigen::MatrixXd jacobian(typename Factor<D>::VarPtrs vars, std::size_t i) const override {
    if (term_->kind != ConstraintKind::Linear) return Factor<D>::jacobian(vars, i);
    this->check_arity(vars);
    return std::sqrt(0.5 * term_->penalty) * Eigen::MatrixXd(weights_.asDiagonal());
  }

 private:
  std::shared_ptr<const ConsensusTerm<D>> term_;
  Eigen::VectorXd weights_;
  int neighbor_;
};

template <int D>
double variable_distance(const Variable<D>& a, const Variable<D>& b) {
  return local_coordinates<D>(a, b).norm();
}

// ---------------------------------------------------------------------------
// Batch MESA+

template <int D>
struct LocalProblem {
  int robot = 0;
  FactorGraph<D> graph;
  Values<D> init;
};

struct MesaPlusConfig {
  ConstraintKind constraint = ConstraintKind::Geodesic;
  double alpha = 1.0;
  double initial_penalty = 1.0;
  double tolerance = 1e-4;
  ConsensusWeights weights;
  SolverConfig solver;
};

template <int D>
struct MesaPlusResult {
  std::map<int, Values<D>> estimates;
  int iterations = 0;
  double max_disagreement = 0.0;
  bool converged = false;
  std::vector<double> disagreement_history;
};

using PairSchedule = std::vector<std::pair<int, int>>;

inline PairSchedule round_robin_schedule(const std::vector<int>& robots, int rounds) {
  PairSchedule s;
  for (int r = 0; r < rounds; ++r)
    for (std::size_t i = 0; i < robots.size(); ++i)
      for (std::size_t j = i + 1; j < robots.size(); ++j) s.emplace_back(robots[i], robots[j]);
  return s;
}

template <int D>
MesaPlusResult<D> mesa_plus(const std::vector<LocalProblem<D>>& problems, const PairSchedule& schedule,
                            const MesaPlusConfig& cfg = {}) {
  if (schedule.empty() && problems.size() > 1) throw std::invalid_argument("mesa_plus: empty schedule");
  if (!(cfg.alpha > 0.0) || !(cfg.initial_penalty > 0.0) || !(cfg.tolerance > 0.0)) {
    throw std::invalid_argument("mesa_plus: alpha, penalty and tolerance must be positive");
  }

  struct Robot {
    FactorGraph<D> graph;
    Values<D> estimate;
    std::map<int, std::map<Key, TermPtr<D>>> terms;
    std::map<int, double> beta;
    bool solved = false;
  };
  std::map<int, Robot> robots;
  for (const auto& p : problems) {
    if (robots.count(p.robot)) throw std::invalid_argument("mesa_plus: duplicate robot " + std::to_string(p.robot));
    robots[p.robot] = Robot{p.graph, p.init, {}, {}, false};
  }

  // Shared variables: keys present in two robots' graphs.
  std::map<std::pair<int, int>, std::vector<Key>> shared;
  for (auto it = robots.begin(); it != robots.end(); ++it) {
    const auto vi = it->second.graph.variables();
    for (auto jt = std::next(it); jt != robots.end(); ++jt) {
      const auto vj = jt->second.graph.variables();
      std::vector<Key> s;
      std::set_intersection(vi.begin(), vi.end(), vj.begin(), vj.end(), std::back_inserter(s));
      if (s.empty()) continue;
      shared[{it->first, jt->first}] = s;
      for (auto [a, b] : {std::pair{it->first, jt->first}, std::pair{jt->first, it->first}}) {
        Robot& r = robots[a];
        r.beta[b] = cfg.initial_penalty;
        for (const auto& k : s) {
          const auto& theta = r.estimate.at(k);
          auto term = std::make_shared<ConsensusTerm<D>>();
          term->kind = effective_constraint<D>(cfg.constraint, theta);
          term->z = initial_edge_value<D>(term->kind, theta);
          term->dual = Eigen::VectorXd::Zero(constraint_dim<D>(cfg.constraint, theta));
          term->penalty = cfg.initial_penalty;
          r.terms[b][k] = term;
          r.graph.add(std::make_shared<BiasedPriorFactor<D>>(
              k, term, constraint_weights<D>(cfg.constraint, theta, cfg.weights), RobustKernel::none(), b));
        }
      }
    }
  }

  auto solve = [&](int id) {
    Robot& r = robots.at(id);
    try {
      r.estimate = optimize_batch(r.graph, r.estimate, cfg.solver).values;
    } catch (const std::exception& e) {
      throw std::runtime_error("mesa_plus: local solve failed on robot " + std::to_string(id) + ": " + e.what());
    }
    r.solved = true;
  };

  auto disagreement = [&]() {
    double m = 0.0;
    for (const auto& [pair, keys] : shared)
      for (const auto& k : keys)
        m = std::max(m, variable_distance<D>(robots.at(pair.first).estimate.at(k),
                                             robots.at(pair.second).estimate.at(k)));
    return m;
  };

  MesaPlusResult<D> out;
  for (const auto& [i0, j0] : schedule) {
    if (!robots.count(i0) || !robots.count(j0) || i0 == j0) {
      throw std::invalid_argument("mesa_plus: invalid pair (" + std::to_string(i0) + ", " + std::to_string(j0) + ")");
    }
    const int i = std::min(i0, j0), j = std::max(i0, j0);
    solve(i);
    solve(j);
    auto sit = shared.find({i, j});
    if (sit != shared.end()) {
      Robot& ri = robots.at(i);
      Robot& rj = robots.at(j);
      for (const auto& k : sit->second) {
        const auto& ti = ri.estimate.at(k);
        const auto& tj = rj.estimate.at(k);
        const auto kind = effective_constraint<D>(cfg.constraint, ti);
        const EdgeValue<D> z = edge_update<D>(kind, ti, tj);
        for (auto [self, other, theta] : {std::tuple{&ri, j, &ti}, std::tuple{&rj, i, &tj}}) {
          auto& term = *self->terms.at(other).at(k);
          term.z = z;
          term.dual = dual_update(term.dual, term.penalty, constraint_residual<D>(kind, *theta, z), 1.0);
        }
      }
      for (auto [self, other] : {std::pair{&ri, j}, std::pair{&rj, i}}) {
        double& b = self->beta.at(other);
        b *= cfg.alpha;
        for (auto& [k, term] : self->terms.at(other)) term->penalty = b;
      }
    }
    ++out.iterations;
    out.max_disagreement = disagreement();
    out.disagreement_history.push_back(out.max_disagreement);
    const bool all_solved = std::all_of(robots.begin(), robots.end(), [](const auto& kv) {
      return kv.second.solved || kv.second.beta.empty();
    });
    if (all_solved && out.max_disagreement < cfg.tolerance) {
      out.converged = true;
      break;
    }
  }
  for (auto& [id, r] : robots) {
    if (!r.solved) solve(id);
  }
  out.max_disagreement = disagreement();
  if (shared.empty()) out.converged = true;
  for (auto& [id, r] : robots) out.estimates[id] = std::move(r.estimate);
  return out;
}

}  // namespace rimesa
