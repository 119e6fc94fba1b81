#pragma once

// Experiment driver: replays a dataset step by step through one or more methods,
// drives the network simulator and scores each method's solution history.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rimesa/agent.hpp"
#include "rimesa/consensus.hpp"
#include "rimesa/dataset.hpp"
#include "rimesa/eval.hpp"
#include "rimesa/netsim.hpp"
#include "rimesa/solver.hpp"

namespace rimesa {

enum class Method { Rimesa, Kimesa, Imesa, MesaPlus, Independent, CentralizedOracle, CentralizedGnc };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::Rimesa: return "rimesa";
    case Method::Kimesa: return "kimesa";
    case Method::Imesa: return "imesa";
    case Method::MesaPlus: return "mesa_plus";
    case Method::Independent: return "independent";
    case Method::CentralizedOracle: return "centralized_oracle";
    case Method::CentralizedGnc: return "centralized_gnc";
  }
  return "?";
}

inline Method parse_method_name(const std::string& s) {
  for (auto m : {Method::Rimesa, Method::Kimesa, Method::Imesa, Method::MesaPlus, Method::Independent,
                 Method::CentralizedOracle, Method::CentralizedGnc}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct MethodSpec {
  Method method = Method::Rimesa;
  double gm_shape = 0.0;  // GM kernel shape for kernel baselines
  double decay = 0.9;
  double beta_uninit = 1e-4;
  double beta_init = 1.0;
  double alpha = 1.0;     // mesa_plus penalty growth per pair iteration
  int rounds = 200;       // mesa_plus round-robin rounds
  ConstraintKind constraint = ConstraintKind::Geodesic;

  std::string name() const { return to_string(method); }

  static MethodSpec defaults(Method m) {
    MethodSpec s;
    s.method = m;
    if (m == Method::Kimesa) s.gm_shape = 6.0;
    if (m == Method::Independent) s.gm_shape = 3.0;
    return s;
  }

  bool distributed() const {
    return method == Method::Rimesa || method == Method::Kimesa || method == Method::Imesa;
  }

  void validate() const {
    if ((method == Method::Kimesa || method == Method::Independent) && !(gm_shape > 0.0)) {
      throw std::invalid_argument(name() + ": GM shape must be positive");
    }
    if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument(name() + ": decay outside [0, 1]");
    if (!(beta_uninit > 0.0) || !(beta_init > 0.0) || !(alpha > 0.0)) {
      throw std::invalid_argument(name() + ": penalties must be positive");
    }
    if (rounds <= 0) throw std::invalid_argument(name() + ": rounds must be positive");
  }
};

inline std::vector<MethodSpec> parse_methods(const std::string& list) {
  std::vector<MethodSpec> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    const Method m = parse_method_name(item);
    if (std::any_of(out.begin(), out.end(), [&](const auto& s) { return s.method == m; })) {
      throw std::invalid_argument("method '" + item + "' listed twice");
    }
    out.push_back(MethodSpec::defaults(m));
  }
  if (out.empty()) throw std::invalid_argument("no methods given");
  return out;
}

struct RunConfig {
  NetworkConfig network;
  std::vector<MethodSpec> methods;
  int record_every = 1;
  bool threaded = false;
  double anchor_sigma = 1e-3;
  SolverConfig solver;

  void validate() const {
    network.validate();
    solver.validate();
    if (methods.empty()) throw std::invalid_argument("run: no methods");
    for (const auto& m : methods) m.validate();
    if (record_every <= 0) throw std::invalid_argument("run: record_every must be positive");
    if (!(anchor_sigma > 0.0)) throw std::invalid_argument("run: anchor_sigma must be positive");
  }
};

template <int D>
struct MethodRun {
  std::string method;
  bool ok = false;
  std::string error;
  MetricReport report;
  SolutionHistory<D> history;
  std::vector<double> update_ms;  // one entry per robot update
  std::vector<CommEvent> events;
  std::string event_log;
  std::size_t incorporations = 0;
};

namespace detail {

template <int D>
std::optional<Variable<D>> infer(const Measurement<D>& m, const Values<D>& known, const Key& target) {
  if (target == m.b && known.contains(m.a)) {
    const Pose<D>& a = known.pose(m.a);
    auto place = [&](const Translation<D>& p) -> Variable<D> {
      if (m.b.kind == KeyKind::Pose) return Pose<D>(a.rotation(), p);
      return Eigen::VectorXd(p);
    };
    switch (m.type) {
      case MeasurementType::Range: {
        Translation<D> dir = Translation<D>::Zero();
        dir[0] = m.vector()[0];
        return place(a.transform(dir));
      }
      case MeasurementType::BearingRange: {
        const Eigen::VectorXd& v = m.vector();
        Translation<D> dir;
        if constexpr (D == 2) {
          dir << std::cos(v[0]), std::sin(v[0]);
        } else {
          dir << std::cos(v[1]) * std::cos(v[0]), std::cos(v[1]) * std::sin(v[0]), std::sin(v[1]);
        }
        return place(a.transform(v[D - 1] * dir));
      }
      case MeasurementType::Landmark:
        return place(a.transform(Translation<D>(m.vector())));
      default:
        return a * m.pose();
    }
  }
  if (target == m.a && known.contains(m.b) && is_pose_measurement(m.type)) {
    return known.pose(m.b) * m.pose().inverse();
  }
  return std::nullopt;
}

// Initial values for every key of `batch` that `base` does not hold yet.
template <int D>
Values<D> initial_values(const std::vector<const Measurement<D>*>& batch, const Values<D>& base) {
  Values<D> inits;
  bool progress = true;
  std::set<Key> missing;
  while (progress) {
    progress = false;
    missing.clear();
    for (const auto* m : batch) {
      for (const Key& k : {m->a, m->b}) {
        if (base.contains(k) || inits.contains(k)) continue;
        auto lookup = [&](const Key& q) -> const Values<D>& { return base.contains(q) ? base : inits; };
        const Key other = k == m->a ? m->b : m->a;
        const Values<D>& src = lookup(other);
        if (auto v = infer<D>(*m, src, k)) {
          inits.insert(k, *v);
          progress = true;
        } else {
          missing.insert(k);
        }
      }
    }
  }
  if (!missing.empty()) throw std::runtime_error("cannot initialize " + to_string(*missing.begin()));
  return inits;
}

template <int D>
FactorPtr<D> anchor(const Dataset<D>& ds, int robot, double sigma) {
  return make_prior_pose<D>(pose_key(robot, 0), ds.truth[static_cast<std::size_t>(robot)][0],
                            NoiseModel::from_sigmas(Eigen::VectorXd::Constant(kPoseDof<D>, sigma)));
}

inline bool drops_outliers(Method m) { return m == Method::Imesa || m == Method::CentralizedOracle; }

template <int D>
FactorPtr<D> make_factor(const Measurement<D>& m, const MethodSpec& spec) {
  if (!m.loop_closure()) return to_factor(m);
  const int dim = measurement_dim<D>(m.type);
  switch (spec.method) {
    case Method::Rimesa:
    case Method::CentralizedGnc:
      return to_factor(m, RobustKernel::graduated_for_dim(dim, 1.0), true);
    case Method::Kimesa:
    case Method::Independent:
      return to_factor(m, RobustKernel::geman_mcclure(spec.gm_shape), true);
    default:
      return to_factor(m);
  }
}

template <int D>
Values<D> own_poses(const Values<D>& est, int robot) {
  Values<D> out;
  for (const auto& [k, v] : est)
    if (k.kind == KeyKind::Pose && k.owner == robot) out.insert(k, v);
  return out;
}

template <int D>
class Replay {
 public:
  Replay(const Dataset<D>& ds, const MethodSpec& spec, const RunConfig& cfg)
      : ds_(ds), spec_(spec), cfg_(cfg), net_(cfg.network) {
    steps_.resize(static_cast<std::size_t>(ds.steps()));
    for (std::size_t i = 0; i < ds.measurements.size(); ++i) {
      const auto& m = ds.measurements[i];
      labels_[i] = m.inlier;
      if (m.loop_closure() && !m.inlier && drops_outliers(spec.method)) {
        dropped_.insert(i);
        continue;
      }
      steps_.at(static_cast<std::size_t>(m.step()))[m.holder()].push_back(i);
    }
  }

  MethodRun<D> run() {
    MethodRun<D> out;
    out.method = spec_.name();
    try {
      switch (spec_.method) {
        case Method::CentralizedOracle:
        case Method::CentralizedGnc: centralized(out); break;
        case Method::MesaPlus: batch_consensus(out); break;
        default: distributed(out); break;
      }
      out.report = evaluate(out.history, ds_.ground_truth(), labels_);
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
    out.events = net_.log();
    std::ostringstream log;
    net_.write_log(log);
    out.event_log = log.str();
    return out;
  }

 private:
  using Clock = std::chrono::steady_clock;

  static double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  }

  bool record_step(long k) const {
    const long last = static_cast<long>(steps_.size()) - 1;
    return k == last || k % cfg_.record_every == 0;
  }

  std::vector<const Measurement<D>*> batch(const std::vector<std::size_t>& ids) const {
    std::vector<const Measurement<D>*> out;
    for (std::size_t i : ids) out.push_back(&ds_.measurements[i]);
    return out;
  }

  std::map<int, Eigen::VectorXd> positions(long k) const {
    std::map<int, Eigen::VectorXd> p;
    for (int r = 0; r < ds_.robots(); ++r) {
      const auto& t = ds_.truth[static_cast<std::size_t>(r)];
      const std::size_t i = std::min(static_cast<std::size_t>(k), t.size() - 1);
      p[r] = t[i].translation();
    }
    return p;
  }

  // Loop closures dropped by the oracle count as rejected.
  void add_dropped(std::map<std::size_t, bool>& cls, long k) const {
    for (std::size_t i : dropped_)
      if (ds_.measurements[i].step() <= k) cls[i] = false;
  }

  AgentConfig agent_config() const {
    AgentConfig a;
    a.decay = spec_.decay;
    a.beta_uninit = spec_.beta_uninit;
    a.beta_init = spec_.beta_init;
    a.constraint = spec_.constraint;
    a.solver = cfg_.solver;
    switch (spec_.method) {
      case Method::Rimesa: a.prior_robustness = PriorRobustness::Graduated; break;
      case Method::Kimesa:
        a.prior_robustness = PriorRobustness::GemanMcClure;
        a.prior_gm_shape = spec_.gm_shape;
        break;
      default: a.prior_robustness = PriorRobustness::None; break;
    }
    return a;
  }

  void distributed(MethodRun<D>& out) {
    const bool talk = spec_.distributed();
    const int n = ds_.robots();
    std::vector<Agent<D>> agents;
    for (int r = 0; r < n; ++r) agents.emplace_back(r, agent_config());
    std::vector<std::map<const Factor<D>*, std::size_t>> ids(static_cast<std::size_t>(n));
    std::map<std::size_t, std::pair<CommSnapshot<D>, CommSnapshot<D>>> inflight;

    auto update_robot = [&](int r, long k) {
      const auto t0 = Clock::now();
      Agent<D>& agent = agents[static_cast<std::size_t>(r)];
      std::vector<FactorPtr<D>> factors;
      std::vector<const Measurement<D>*> ms;
      auto it = steps_[static_cast<std::size_t>(k)].find(r);
      if (it != steps_[static_cast<std::size_t>(k)].end()) {
        for (std::size_t i : it->second) {
          factors.push_back(make_factor(ds_.measurements[i], spec_));
          ids[static_cast<std::size_t>(r)][factors.back().get()] = i;
        }
        ms = batch(it->second);
      }
      Values<D> base = agent.estimate();
      if (k == 0) {
        factors.push_back(anchor(ds_, r, cfg_.anchor_sigma));
        base.insert(pose_key(r, 0), ds_.truth[static_cast<std::size_t>(r)][0]);
      }
      Values<D> inits = initial_values<D>(ms, base);
      if (k == 0) inits.insert(pose_key(r, 0), ds_.truth[static_cast<std::size_t>(r)][0]);
      agent.update(factors, inits);
      return ms_since(t0);
    };

    for (long k = 0; k < static_cast<long>(steps_.size()); ++k) {
      std::vector<double> times(static_cast<std::size_t>(n));
      if (cfg_.threaded) {
        std::vector<std::future<double>> jobs;
        for (int r = 0; r < n; ++r) jobs.push_back(std::async(std::launch::async, update_robot, r, k));
        for (int r = 0; r < n; ++r) times[static_cast<std::size_t>(r)] = jobs[static_cast<std::size_t>(r)].get();
      } else {
        for (int r = 0; r < n; ++r) times[static_cast<std::size_t>(r)] = update_robot(r, k);
      }
      double step_ms = 0.0;
      for (double t : times) {
        out.update_ms.push_back(t);
        step_ms += t;
      }

      for (const auto& e : net_.step(k, positions(k))) {
        if (!talk) continue;
        inflight.emplace(e.id, std::pair{agents[static_cast<std::size_t>(e.i)].begin_communication(e.j),
                                         agents[static_cast<std::size_t>(e.j)].begin_communication(e.i)});
      }
      for (const auto& e : net_.completed(k)) {
        auto node = inflight.extract(e.id);
        if (node.empty()) continue;
        const auto [ri, rj] = exchange(node.mapped().first, node.mapped().second);
        net_.set_payload(e.id, ri.payload_bytes());
        if (e.delivers_to(e.i)) {
          agents[static_cast<std::size_t>(e.i)].incorporate(ri);
          ++out.incorporations;
        }
        if (e.delivers_to(e.j)) {
          agents[static_cast<std::size_t>(e.j)].incorporate(rj);
          ++out.incorporations;
        }
      }

      if (!record_step(k)) continue;
      HistoryStep<D> h;
      h.k = k;
      h.update_ms = step_ms;
      for (int r = 0; r < n; ++r) {
        const auto& agent = agents[static_cast<std::size_t>(r)];
        for (const auto& [key, v] : own_poses(agent.estimate(), r)) h.estimate.insert(key, v);
        for (const auto& [f, inlier] : agent.classifications())
          h.classifications[ids[static_cast<std::size_t>(r)].at(f.get())] = inlier;
      }
      add_dropped(h.classifications, k);
      out.history.record(std::move(h));
    }
  }

  void centralized(MethodRun<D>& out) {
    const bool gnc = spec_.method == Method::CentralizedGnc;
    FactorGraph<D> graph;
    Values<D> values;
    std::map<std::size_t, std::size_t> ids;  // graph index -> measurement id
    for (long k = 0; k < static_cast<long>(steps_.size()); ++k) {
      const auto t0 = Clock::now();
      std::vector<const Measurement<D>*> ms;
      std::vector<std::size_t> mids;
      for (const auto& [r, list] : steps_[static_cast<std::size_t>(k)]) {
        for (std::size_t i : list) {
          ms.push_back(&ds_.measurements[i]);
          mids.push_back(i);
        }
      }
      if (k == 0) {
        for (int r = 0; r < ds_.robots(); ++r) {
          graph.add(anchor(ds_, r, cfg_.anchor_sigma));
          values.insert(pose_key(r, 0), ds_.truth[static_cast<std::size_t>(r)][0]);
        }
      }
      const Values<D> inits = initial_values<D>(ms, values);
      for (const auto& [key, v] : inits) values.insert(key, v);
      bool loop = k == 0;
      for (std::size_t j = 0; j < ms.size(); ++j) {
        ids[graph.add(make_factor(*ms[j], spec_))] = mids[j];
        loop = loop || ms[j]->loop_closure();
      }
      if (loop) {
        // Warm-started full re-solve whenever a loop closure arrives.
        values = gnc ? optimize_gnc(graph, values, cfg_.solver).values : optimize_batch(graph, values, cfg_.solver).values;
      }
      const double ms_step = ms_since(t0);
      out.update_ms.push_back(ms_step);
      net_.step(k, positions(k));
      net_.completed(k);

      if (!record_step(k)) continue;
      HistoryStep<D> h;
      h.k = k;
      h.update_ms = ms_step;
      for (const auto& [key, v] : values)
        if (key.kind == KeyKind::Pose) h.estimate.insert(key, v);
      for (const auto& [f, mid] : ids) {
        const auto& fac = *graph[f];
        if (!ds_.measurements[mid].loop_closure()) continue;
        h.classifications[mid] =
            gnc ? fac.kernel().with_mu(1.0).influence(fac.squared_error(values)) >= kOutlierInfluence : true;
      }
      add_dropped(h.classifications, k);
      out.history.record(std::move(h));
    }
  }

  // Batch consensus over the complete local problems, scored once at the final step.
  void batch_consensus(MethodRun<D>& out) {
    const auto t0 = Clock::now();
    std::vector<LocalProblem<D>> problems(static_cast<std::size_t>(ds_.robots()));
    std::map<std::size_t, std::pair<int, std::size_t>> where;
    for (int r = 0; r < ds_.robots(); ++r) {
      auto& p = problems[static_cast<std::size_t>(r)];
      p.robot = r;
      p.graph.add(anchor(ds_, r, cfg_.anchor_sigma));
      p.init.insert(pose_key(r, 0), ds_.truth[static_cast<std::size_t>(r)][0]);
      for (const auto& step : steps_) {
        auto it = step.find(r);
        if (it == step.end()) continue;
        const auto ms = batch(it->second);
        for (const auto& [key, v] : initial_values<D>(ms, p.init)) p.init.insert(key, v);
        for (std::size_t i : it->second) where[i] = {r, p.graph.add(make_factor(ds_.measurements[i], spec_))};
      }
    }
    std::vector<int> robots;
    for (int r = 0; r < ds_.robots(); ++r) robots.push_back(r);
    MesaPlusConfig mc;
    mc.constraint = spec_.constraint;
    mc.alpha = spec_.alpha;
    mc.initial_penalty = spec_.beta_init;
    mc.solver = cfg_.solver;
    const auto res = mesa_plus(problems, round_robin_schedule(robots, spec_.rounds), mc);
    const double total = ms_since(t0);
    out.update_ms.push_back(total);

    HistoryStep<D> h;
    h.k = static_cast<long>(steps_.size()) - 1;
    h.update_ms = total;
    for (const auto& [r, est] : res.estimates)
      for (const auto& [key, v] : own_poses(est, r)) h.estimate.insert(key, v);
    for (const auto& [mid, loc] : where) {
      if (!ds_.measurements[mid].loop_closure()) continue;
      const auto& g = problems[static_cast<std::size_t>(loc.first)].graph;
      h.classifications[mid] = chi2_inlier(*g[loc.second], res.estimates.at(loc.first));
    }
    out.history.record(std::move(h));
  }

  const Dataset<D>& ds_;
  MethodSpec spec_;
  RunConfig cfg_;
  NetworkSimulator net_;
  std::vector<std::map<int, std::vector<std::size_t>>> steps_;
  std::map<std::size_t, bool> labels_;
  std::set<std::size_t> dropped_;
};

}  // namespace detail

/// Runs one method; failures are captured in the result rather than thrown.
template <int D>
MethodRun<D> run_method(const Dataset<D>& ds, const MethodSpec& spec, const RunConfig& cfg) {
  cfg.validate();
  return detail::Replay<D>(ds, spec, cfg).run();
}

template <int D>
std::vector<MethodRun<D>> run(const Dataset<D>& ds, const RunConfig& cfg) {
  cfg.validate();
  std::vector<MethodRun<D>> out;
  for (const auto& m : cfg.methods) out.push_back(detail::Replay<D>(ds, m, cfg).run());
  return out;
}

// History text format:
//   HISTORY 1 <dim>
//   STEP <k>
//   EST <key> <pose...>
//   CLS <measurement id> <0|1>
template <int D>
void save_history(const SolutionHistory<D>& h, std::ostream& os) {
  os << "HISTORY 1 " << D << '\n';
  for (const auto& s : h.steps()) {
    os << "STEP " << s.k << '\n';
    for (const auto& [k, v] : s.estimate) {
      os << "EST " << to_string(k);
      detail::write_pose<D>(os, std::get<Pose<D>>(v));
      os << '\n';
    }
    for (const auto& [id, inlier] : s.classifications) os << "CLS " << id << ' ' << (inlier ? 1 : 0) << '\n';
  }
}

template <int D>
SolutionHistory<D> load_history(std::istream& is) {
  SolutionHistory<D> h;
  std::optional<HistoryStep<D>> cur;
  std::string line;
  long n = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++n;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    detail::LineReader in(tok, n);
    if (tok[0] == "HISTORY") {
      if (in.integer() != 1) in.fail("unsupported history version");
      if (in.integer() != D) in.fail("history dimension mismatch");
      in.done();
      header = true;
    } else if (!header) {
      in.fail("missing HISTORY header");
    } else if (tok[0] == "STEP") {
      if (cur) h.record(std::move(*cur));
      cur.emplace();
      cur->k = in.integer();
      in.done();
    } else if (!cur) {
      in.fail("record before first STEP");
    } else if (tok[0] == "EST") {
      const Key k = in.key();
      cur->estimate.insert(k, in.template pose<D>());
      in.done();
    } else if (tok[0] == "CLS") {
      const long id = in.integer(), flag = in.integer();
      in.done();
      if (id < 0 || (flag != 0 && flag != 1)) in.fail("bad classification record");
      cur->classifications[static_cast<std::size_t>(id)] = flag == 1;
    } else {
      in.fail("unknown record tag '" + tok[0] + "'");
    }
  }
  if (cur) h.record(std::move(*cur));
  return h;
}

template <int D>
std::map<std::size_t, bool> measurement_labels(const Dataset<D>& ds) {
  std::map<std::size_t, bool> out;
  for (std::size_t i = 0; i < ds.measurements.size(); ++i) out[i] = ds.measurements[i].inlier;
  return out;
}

// Output directory from the environment when set, otherwise the given one.
inline std::filesystem::path output_directory(const std::string& requested) {
  if (const char* env = std::getenv("RIMESA_OUTPUT_DIR"); env && *env) return env;
  return requested;
}

struct OutputFiles {
  std::ofstream results, series, timing;
};

inline OutputFiles open_outputs(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  OutputFiles f{std::ofstream(dir / "results.csv"), std::ofstream(dir / "series.csv"),
                std::ofstream(dir / "timing.csv")};
  if (!f.results || !f.series || !f.timing) throw std::runtime_error("cannot write into " + dir.string());
  write_report_header(f.results);
  write_series_header(f.series);
  write_timing_header(f.timing);
  return f;
}

template <int D>
void write_outputs(OutputFiles& f, const std::filesystem::path& dir, const std::string& dataset,
                   unsigned long long seed, const std::vector<MethodRun<D>>& runs, bool histories) {
  for (const auto& r : runs) {
    write_report_row(f.results, r.method, dataset, seed, r.ok ? "ok" : "failed", r.report);
    if (!r.ok) continue;
    write_series_rows(f.series, r.method, dataset, seed, r.report);
    write_timing_rows(f.timing, r.method, dataset, seed, r.report);
    const std::string stem = r.method + "_" + dataset + "_" + std::to_string(seed);
    std::ofstream ev(dir / ("events_" + stem + ".tsv"));
    ev << r.event_log;
    if (histories) {
      std::ofstream hs(dir / ("history_" + stem + ".txt"));
      save_history(r.history, hs);
    }
  }
}

}  // namespace rimesa
