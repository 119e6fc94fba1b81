#pragma once
// Trajectory and classification metrics.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

namespace detail {

template <int D>
Eigen::Matrix<double, D, Eigen::Dynamic> stack(const std::vector<Translation<D>>& pts) {
  Eigen::Matrix<double, D, Eigen::Dynamic> m(D, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

template <int D>
Pose<D> rigid_fit(const std::vector<Translation<D>>& est, const std::vector<Translation<D>>& ref) {
  const Eigen::MatrixXd h = Eigen::umeyama(stack<D>(est), stack<D>(ref), false);
  const Eigen::Matrix<double, D, D> r = h.topLeftCorner<D, D>();
  const Translation<D> t = h.topRightCorner<D, 1>();
  if constexpr (D == 2) {
    return Pose<D>(Rotation<2>(std::atan2(r(1, 0), r(0, 0))), t);
  } else {
    return Pose<D>(Rotation<3>(Eigen::Matrix3d(r)), t);
  }
}

}  // namespace detail

/// Rigid transform T minimizing sum |T * est_i - ref_i|^2.
template <int D>
Pose<D> umeyama_align(const std::vector<Translation<D>>& est, const std::vector<Translation<D>>& ref) {
  if (est.size() != ref.size()) throw std::invalid_argument("umeyama_align: correspondence count mismatch");
  if (est.size() < 3) throw std::invalid_argument("umeyama_align: need at least 3 correspondences");
  for (const auto* set : {&est, &ref}) {
    auto m = detail::stack<D>(*set);
    m.colwise() -= m.rowwise().mean();
    const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
    if (sv.size() < 2 || sv[1] <= 1e-9 * std::max(1.0, sv[0])) {
      throw std::invalid_argument("umeyama_align: collinear correspondences");
    }
  }
  return detail::rigid_fit<D>(est, ref);
}

struct AteResult {
  double translation = 0.0;  // meters, RMS
  double rotation = 0.0;     // radians, RMS
  std::size_t poses = 0;
};

/// Aligned RMS error pooled over every pose key. Landmarks are ignored.
template <int D>
AteResult ate_full(const Values<D>& est, const Values<D>& ref) {
  std::vector<Translation<D>> pe, pr;
  std::vector<const Pose<D>*> qe, qr;
  std::size_t ref_poses = 0;
  for (const auto& [k, v] : ref)
    if (k.kind == KeyKind::Pose) ++ref_poses;
  for (const auto& [k, v] : est) {
    if (k.kind != KeyKind::Pose) continue;
    if (!ref.contains(k)) throw std::invalid_argument("ate: key " + to_string(k) + " missing from reference");
    qe.push_back(&std::get<Pose<D>>(v));
    qr.push_back(&ref.pose(k));
    pe.push_back(qe.back()->translation());
    pr.push_back(qr.back()->translation());
  }
  if (pe.size() != ref_poses) throw std::invalid_argument("ate: key sets differ");
  AteResult out;
  out.poses = pe.size();
  if (pe.empty()) throw std::invalid_argument("ate: no poses");
  // The minimum is unique even when the optimal transform is not, so degenerate sets are fine here.
  const Pose<D> t = detail::rigid_fit<D>(pe, pr);
  double st = 0.0, sr = 0.0;
  for (std::size_t i = 0; i < pe.size(); ++i) {
    const Pose<D> aligned = t * *qe[i];
    st += (aligned.translation() - pr[i]).squaredNorm();
    const double a = (aligned.rotation().inverse() * qr[i]->rotation()).log().norm();
    sr += a * a;
  }
  out.translation = std::sqrt(st / static_cast<double>(pe.size()));
  out.rotation = std::sqrt(sr / static_cast<double>(pe.size()));
  return out;
}

template <int D>
double ate(const Values<D>& est, const Values<D>& ref) {
  return ate_full(est, ref).translation;
}

/// Sum_k (k / Sum k) * value_k.
inline double incremental(const std::vector<std::pair<long, double>>& series) {
  if (series.empty()) throw std::invalid_argument("incremental: empty series");
  double total = 0.0;
  for (const auto& [k, v] : series) {
    if (k <= 0) throw std::invalid_argument("incremental: step indices must be positive");
    total += static_cast<double>(k);
  }
  double out = 0.0, wsum = 0.0;
  for (const auto& [k, v] : series) {
    const double w = static_cast<double>(k) / total;
    out += w * v;
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) throw std::logic_error("incremental: weights do not sum to one");
  return out;
}

struct F1Result {
  double precision = 1.0;
  double recall = 1.0;
  double f1 = 1.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  bool empty = false;  // nothing to classify; scores defined as 1
};

/// Inlier is the positive class.
inline F1Result f1_score(const std::vector<bool>& predicted_inlier, const std::vector<bool>& truly_inlier) {
  if (predicted_inlier.size() != truly_inlier.size()) throw std::invalid_argument("f1: size mismatch");
  F1Result r;
  if (predicted_inlier.empty()) {
    r.empty = true;
    return r;
  }
  for (std::size_t i = 0; i < predicted_inlier.size(); ++i) {
    const bool p = predicted_inlier[i], t = truly_inlier[i];
    if (p && t) ++r.tp;
    else if (p) ++r.fp;
    else if (t) ++r.fn;
    else ++r.tn;
  }
  const auto ratio = [](std::size_t num, std::size_t den, std::size_t miss) {
    if (den == 0) return miss == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(r.tp, r.tp + r.fp, r.fn);
  r.recall = ratio(r.tp, r.tp + r.fn, r.fp);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

/// Classifications keyed by measurement id, scored against labels keyed the same way.
inline F1Result f1_score(const std::map<std::size_t, bool>& predicted, const std::map<std::size_t, bool>& labels) {
  std::vector<bool> p, t;
  for (const auto& [id, inlier] : predicted) {
    const auto it = labels.find(id);
    if (it == labels.end()) throw std::invalid_argument("f1: unlabeled measurement " + std::to_string(id));
    p.push_back(inlier);
    t.push_back(it->second);
  }
  return f1_score(p, t);
}

template <int D>
struct HistoryStep {
  long k = 0;
  Values<D> estimate;
  std::map<std::size_t, bool> classifications;
  double update_ms = 0.0;
};

template <int D>
class SolutionHistory {
 public:
  void record(HistoryStep<D> s) {
    if (!steps_.empty() && s.k <= steps_.back().k) throw std::invalid_argument("history: steps must increase");
    steps_.push_back(std::move(s));
  }
  const std::vector<HistoryStep<D>>& steps() const { return steps_; }
  bool empty() const { return steps_.empty(); }
  const HistoryStep<D>& back() const { return steps_.back(); }

 private:
  std::vector<HistoryStep<D>> steps_;
};

struct SeriesPoint {
  long k = 0;
  double ate = 0.0;
  double f1 = 1.0;
  double update_ms = 0.0;
  double cumulative_ms = 0.0;
};

struct MetricReport {
  double iate = 0.0;
  double final_ate = 0.0;
  double final_ate_rotation = 0.0;
  double if1 = 1.0;
  double final_f1 = 1.0;
  double precision = 1.0;
  double recall = 1.0;
  bool f1_empty = false;
  std::vector<SeriesPoint> series;
};

/// Scores each step against the reference restricted to the variables estimated at that step.
template <int D>
MetricReport evaluate(const SolutionHistory<D>& history, const Values<D>& reference,
                      const std::map<std::size_t, bool>& labels) {
  if (history.empty()) throw std::invalid_argument("evaluate: empty history");
  MetricReport r;
  std::vector<std::pair<long, double>> ates, f1s;
  double cumulative = 0.0;
  for (const auto& s : history.steps()) {
    Values<D> ref;
    for (const auto& [k, v] : s.estimate) {
      if (k.kind != KeyKind::Pose) continue;
      if (!reference.contains(k)) throw std::invalid_argument("evaluate: unknown key " + to_string(k));
      ref.insert(k, reference.at(k));
    }
    const AteResult a = ate_full(s.estimate, ref);
    const F1Result f = f1_score(s.classifications, labels);
    cumulative += s.update_ms;
    const long k = s.k + 1;
    r.series.push_back({s.k, a.translation, f.f1, s.update_ms, cumulative});
    ates.push_back({k, a.translation});
    f1s.push_back({k, f.f1});
    r.final_ate = a.translation;
    r.final_ate_rotation = a.rotation;
    r.final_f1 = f.f1;
    r.precision = f.precision;
    r.recall = f.recall;
    r.f1_empty = f.empty;
  }
  r.iate = incremental(ates);
  r.if1 = incremental(f1s);
  return r;
}

inline std::string format_metric(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

inline void write_report_header(std::ostream& os) {
  os << "method,dataset,seed,status,iate,final_ate,final_ate_rot,if1,final_f1,precision,recall,f1_empty\n";
}

inline void write_report_row(std::ostream& os, const std::string& method, const std::string& dataset,
                             unsigned long long seed, const std::string& status, const MetricReport& r) {
  os << method << ',' << dataset << ',' << seed << ',' << status << ',' << format_metric(r.iate) << ','
     << format_metric(r.final_ate) << ',' << format_metric(r.final_ate_rotation) << ',' << format_metric(r.if1)
     << ',' << format_metric(r.final_f1) << ',' << format_metric(r.precision) << ',' << format_metric(r.recall)
     << ',' << (r.f1_empty ? 1 : 0) << '\n';
}

inline void write_series_header(std::ostream& os) {
  os << "method,dataset,seed,step,ate,f1\n";
}

inline void write_series_rows(std::ostream& os, const std::string& method, const std::string& dataset,
                              unsigned long long seed, const MetricReport& r) {
  for (const auto& p : r.series) {
    os << method << ',' << dataset << ',' << seed << ',' << p.k << ',' << format_metric(p.ate) << ','
       << format_metric(p.f1) << '\n';
  }
}

// Wall-clock columns live apart from the metric CSVs, which stay reproducible.
inline void write_timing_header(std::ostream& os) { os << "method,dataset,seed,step,update_ms,cumulative_ms\n"; }

inline void write_timing_rows(std::ostream& os, const std::string& method, const std::string& dataset,
                              unsigned long long seed, const MetricReport& r) {
  for (const auto& p : r.series) {
    os << method << ',' << dataset << ',' << seed << ',' << p.k << ',' << format_metric(p.update_ms) << ','
       << format_metric(p.cumulative_ms) << '\n';
  }
}

}  // namespace rimesa
