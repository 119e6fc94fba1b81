#pragma once

/*
 * Synthetic multi-robot datasets and their line-oriented text format.
 *
 *   META <key> <value>
 *   ROBOT <id>
 *   GT_POSE <robot> <idx> <pose...>
 *   GT_LM <id> <coords...>
 *   ODOM <robot> <from> <to> <pose...> <sigmas...>
 *   LOOP <type> <keyA> <keyB> <payload...> <sigmas...> <inlier>
 *
 * Poses are "x y theta" in 2D and "x y z qx qy qz qw" in 3D.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "rimesa/factors.hpp"
#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

inline constexpr int kDatasetVersion = 1;

enum class Mobility { Planar, Free3d };
enum class DirectKind { None, RelativePose, Range, BearingRange };

inline double deg(double d) { return d * std::numbers::pi / 180.0; }

struct ScenarioConfig {
  std::string scenario = "cpgo-planar";
  int dim = 2;
  int robots = 6;
  int length = 1000;
  Mobility mobility = Mobility::Planar;
  bool intra_loop = true;
  DirectKind direct_inter = DirectKind::None;
  bool indirect_inter = true;
  bool landmarks = false;
  int landmark_count = 30;
  // Radians and meters.
  double sigma_r = deg(0.25);
  double sigma_rz = deg(1.0);
  double sigma_t = 0.05;
  double outlier_fraction = 0.15;
  double observation_range = 30.0;
  double loop_probability = 0.2;
  int min_loop_gap = 5;
  double forward_probability = 0.7;
  double start_box = 20.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim != 2 && dim != 3) throw std::invalid_argument("scenario: dim must be 2 or 3");
    if (mobility == Mobility::Free3d && dim != 3) throw std::invalid_argument("scenario: free3d mobility needs dim 3");
    if (robots < 1 || length < 2) throw std::invalid_argument("scenario: need at least one robot and two poses");
    if (landmarks && landmark_count <= 0) throw std::invalid_argument("scenario: landmarks enabled with zero landmarks");
    if (!(sigma_r >= 0.0 && sigma_rz >= 0.0 && sigma_t >= 0.0)) throw std::invalid_argument("scenario: negative noise");
    if (outlier_fraction != 0.0 && !(outlier_fraction >= 0.10 && outlier_fraction <= 0.25)) {
      throw std::invalid_argument("scenario: outlier fraction must be 0 or within [0.10, 0.25]");
    }
    if (!(observation_range > 0.0) || !(start_box >= 0.0)) throw std::invalid_argument("scenario: bad ranges");
    if (!(loop_probability >= 0.0 && loop_probability <= 1.0) ||
        !(forward_probability >= 0.0 && forward_probability <= 1.0)) {
      throw std::invalid_argument("scenario: probabilities outside [0, 1]");
    }
    if (min_loop_gap < 1) throw std::invalid_argument("scenario: min_loop_gap must be positive");
  }
};

// Named measurement configurations; noise and seed are left to the caller.
inline ScenarioConfig scenario_preset(const std::string& name, ScenarioConfig base = {}) {
  base.scenario = name;
  base.mobility = Mobility::Planar;
  base.intra_loop = base.indirect_inter = base.landmarks = false;
  base.direct_inter = DirectKind::None;
  if (name == "cpgo-planar") {
    base.intra_loop = base.indirect_inter = true;
  } else if (name == "range-aided-planar") {
    base.intra_loop = true;
    base.direct_inter = DirectKind::Range;
  } else if (name == "range-only-planar") {
    base.direct_inter = DirectKind::Range;
  } else if (name == "bearing-range-only-planar") {
    base.direct_inter = DirectKind::BearingRange;
  } else if (name == "landmark-planar") {
    base.landmarks = true;
  } else if (name == "landmark-direct-planar") {
    base.landmarks = true;
    base.direct_inter = DirectKind::BearingRange;
  } else if (name == "cpgo-3d") {
    base.dim = 3;
    base.mobility = Mobility::Free3d;
    base.intra_loop = base.indirect_inter = true;
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  return base;
}

enum class MeasurementType { Odometry, Intra, Indirect, DirectPose, Range, BearingRange, Landmark };

inline const char* to_string(MeasurementType t) {
  switch (t) {
    case MeasurementType::Odometry: return "odom";
    case MeasurementType::Intra: return "intra";
    case MeasurementType::Indirect: return "indirect";
    case MeasurementType::DirectPose: return "direct_pose";
    case MeasurementType::Range: return "range";
    case MeasurementType::BearingRange: return "bearing_range";
    case MeasurementType::Landmark: return "landmark";
  }
  return "?";
}

inline MeasurementType parse_measurement_type(const std::string& s) {
  for (auto t : {MeasurementType::Intra, MeasurementType::Indirect, MeasurementType::DirectPose,
                 MeasurementType::Range, MeasurementType::BearingRange, MeasurementType::Landmark}) {
    if (s == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown loop type '" + s + "'");
}

inline bool is_pose_measurement(MeasurementType t) {
  return t == MeasurementType::Odometry || t == MeasurementType::Intra || t == MeasurementType::Indirect ||
         t == MeasurementType::DirectPose;
}

template <int D>
int payload_size(MeasurementType t) {
  if (is_pose_measurement(t)) return D == 2 ? 3 : 7;
  if (t == MeasurementType::Range) return 1;
  return D;
}

template <int D>
int measurement_dim(MeasurementType t) {
  if (is_pose_measurement(t)) return kPoseDof<D>;
  if (t == MeasurementType::Range) return 1;
  return D;
}

template <int D>
struct Measurement {
  MeasurementType type = MeasurementType::Odometry;
  Key a;
  Key b;
  std::variant<Pose<D>, Eigen::VectorXd> value;
  Eigen::VectorXd sigmas;
  bool inlier = true;

  int holder() const { return static_cast<int>(a.owner); }
  bool loop_closure() const { return type != MeasurementType::Odometry; }
  bool inter_robot() const { return b.owner != a.owner && b.owner != kEnvironment; }
  long step() const {
    long s = 0;
    for (const Key& k : {a, b})
      if (k.kind == KeyKind::Pose) s = std::max<long>(s, k.index);
    return s;
  }
  const Pose<D>& pose() const { return std::get<Pose<D>>(value); }
  const Eigen::VectorXd& vector() const { return std::get<Eigen::VectorXd>(value); }
};

template <int D>
struct Dataset {
  std::map<std::string, std::string> meta;
  std::vector<std::vector<Pose<D>>> truth;
  std::map<std::uint32_t, Translation<D>> landmarks;
  std::vector<Measurement<D>> measurements;

  int robots() const { return static_cast<int>(truth.size()); }
  long steps() const {
    std::size_t n = 0;
    for (const auto& t : truth) n = std::max(n, t.size());
    return static_cast<long>(n);
  }

  Values<D> ground_truth() const {
    Values<D> v;
    for (int r = 0; r < robots(); ++r)
      for (std::size_t i = 0; i < truth[r].size(); ++i) v.insert(pose_key(r, static_cast<std::uint32_t>(i)), truth[r][i]);
    for (const auto& [id, p] : landmarks) v.insert(landmark_key(id), Eigen::VectorXd(p));
    return v;
  }

  std::size_t loop_closures() const {
    return static_cast<std::size_t>(std::count_if(measurements.begin(), measurements.end(),
                                                  [](const auto& m) { return m.loop_closure(); }));
  }
  std::size_t outliers() const {
    return static_cast<std::size_t>(std::count_if(measurements.begin(), measurements.end(),
                                                  [](const auto& m) { return !m.inlier; }));
  }
};

template <int D>
FactorPtr<D> to_factor(const Measurement<D>& m, RobustKernel kernel = {}, bool candidate = false) {
  NoiseModel noise = NoiseModel::from_sigmas(m.sigmas);
  switch (m.type) {
    case MeasurementType::Odometry:
    case MeasurementType::Intra:
    case MeasurementType::Indirect:
    case MeasurementType::DirectPose:
      return make_between<D>(m.a, m.b, m.pose(), std::move(noise), kernel, candidate);
    case MeasurementType::Range:
      return make_range<D>(m.a, m.b, m.vector()[0], std::move(noise), kernel, candidate);
    case MeasurementType::BearingRange:
      return make_bearing_range<D>(m.a, m.b, m.vector(), std::move(noise), kernel, candidate);
    case MeasurementType::Landmark:
      return make_landmark_obs<D>(m.a, m.b, m.vector(), std::move(noise), kernel, candidate);
  }
  throw std::invalid_argument("to_factor: unknown measurement type");
}

namespace detail {

template <int D>
class Generator {
 public:
  explicit Generator(const ScenarioConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  Dataset<D> run() {
    Dataset<D> ds;
    ds.meta = metadata();
    trajectories(ds);
    if (cfg_.landmarks) place_landmarks(ds);
    for (long k = 1; k < cfg_.length; ++k) {
      for (int r = 0; r < cfg_.robots; ++r) {
        odometry(ds, r, k);
        loops(ds, r, k);
      }
    }
    inject_outliers(ds);
    return ds;
  }

 private:
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double gauss(double s) { return s * std::normal_distribution<double>(0.0, 1.0)(rng_); }
  bool chance(double p) { return uniform(0.0, 1.0) < p; }
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  std::map<std::string, std::string> metadata() const {
    auto num = [](double v) {
      char b[40];
      std::snprintf(b, sizeof b, "%.17g", v);
      return std::string(b);
    };
    const char* direct[] = {"none", "relative_pose", "range", "bearing_range"};
    return {{"version", std::to_string(kDatasetVersion)},
            {"dim", std::to_string(D)},
            {"scenario", cfg_.scenario},
            {"seed", std::to_string(cfg_.seed)},
            {"mobility", cfg_.mobility == Mobility::Planar ? "planar" : "free3d"},
            {"direct_inter", direct[static_cast<int>(cfg_.direct_inter)]},
            {"sigma_r", num(cfg_.sigma_r)},
            {"sigma_rz", num(cfg_.sigma_rz)},
            {"sigma_t", num(cfg_.sigma_t)},
            {"outlier_fraction", num(cfg_.outlier_fraction)},
            {"observation_range", num(cfg_.observation_range)},
            {"loop_probability", num(cfg_.loop_probability)}};
  }

  Pose<D> yaw_pose(double yaw, const Translation<D>& t) const {
    if constexpr (D == 2) {
      return Pose<D>(Rotation<2>(yaw), t);
    } else {
      return Pose<D>(Rotation<3>(Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()))), t);
    }
  }

  Pose<D> motion() {
    constexpr double kQuarter = std::numbers::pi / 2.0;
    Translation<D> fwd = Translation<D>::Zero();
    fwd[0] = 1.0;
    if (chance(cfg_.forward_probability)) return Pose<D>(Rotation<D>(), fwd);
    const int axes = cfg_.mobility == Mobility::Planar ? 1 : 3;
    const std::size_t c = pick(static_cast<std::size_t>(2 * axes));
    const double angle = (c % 2 == 0 ? 1.0 : -1.0) * kQuarter;
    if constexpr (D == 2) {
      return Pose<D>(Rotation<2>(angle), Translation<D>::Zero());
    } else {
      Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
      if (axes == 3) axis = Eigen::Vector3d::Unit(static_cast<Eigen::Index>(c / 2));
      return Pose<D>(Rotation<3>(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis))), Translation<D>::Zero());
    }
  }

  void trajectories(Dataset<D>& ds) {
    ds.truth.resize(static_cast<std::size_t>(cfg_.robots));
    for (int r = 0; r < cfg_.robots; ++r) {
      Translation<D> t = Translation<D>::Zero();
      t[0] = uniform(0.0, cfg_.start_box);
      t[1] = uniform(0.0, cfg_.start_box);
      if (D == 3 && cfg_.mobility == Mobility::Free3d) t[D - 1] = uniform(0.0, cfg_.start_box);
      const double yaw = static_cast<double>(pick(4)) * std::numbers::pi / 2.0;
      auto& traj = ds.truth[static_cast<std::size_t>(r)];
      traj.push_back(yaw_pose(yaw, t));
      for (int i = 1; i < cfg_.length; ++i) traj.push_back(traj.back() * motion());
    }
    lo_ = hi_ = ds.truth[0][0].translation();
    for (const auto& traj : ds.truth)
      for (const auto& p : traj) {
        lo_ = lo_.cwiseMin(p.translation());
        hi_ = hi_.cwiseMax(p.translation());
      }
  }

  void place_landmarks(Dataset<D>& ds) {
    const double pad = 5.0;
    for (int l = 0; l < cfg_.landmark_count; ++l) {
      Translation<D> p;
      for (int d = 0; d < D; ++d) p[d] = uniform(lo_[d] - pad, hi_[d] + pad);
      if (D == 3 && cfg_.mobility == Mobility::Planar) p[D - 1] = uniform(-1.0, 2.0);
      ds.landmarks[static_cast<std::uint32_t>(l)] = p;
    }
  }

  Eigen::VectorXd pose_sigmas() const {
    Eigen::VectorXd s(kPoseDof<D>);
    if constexpr (D == 2) {
      s << cfg_.sigma_rz, cfg_.sigma_t, cfg_.sigma_t;
    } else {
      const double rz = cfg_.mobility == Mobility::Planar ? cfg_.sigma_rz : cfg_.sigma_r;
      s << cfg_.sigma_r, cfg_.sigma_r, rz, cfg_.sigma_t, cfg_.sigma_t, cfg_.sigma_t;
    }
    return s;
  }

  Eigen::VectorXd sigmas(MeasurementType t) const {
    if (is_pose_measurement(t)) return pose_sigmas();
    if (t == MeasurementType::Range) return Eigen::VectorXd::Constant(1, cfg_.sigma_t);
    if (t == MeasurementType::Landmark) return Eigen::VectorXd::Constant(D, cfg_.sigma_t);
    Eigen::VectorXd s(D);
    if constexpr (D == 2) {
      s << cfg_.sigma_rz, cfg_.sigma_t;
    } else {
      s << cfg_.sigma_rz, cfg_.sigma_r, cfg_.sigma_t;
    }
    return s;
  }

  // Zero-noise sigmas are allowed; whitening needs strictly positive values, so floor them.
  static Eigen::VectorXd model_sigmas(Eigen::VectorXd s) { return s.cwiseMax(1e-9); }

  std::variant<Pose<D>, Eigen::VectorXd> ideal(MeasurementType t, const Pose<D>& a, const Pose<D>& b_pose,
                                               const Translation<D>& b_point) const {
    switch (t) {
      case MeasurementType::Range:
        return Eigen::VectorXd::Constant(1, (b_point - a.translation()).norm());
      case MeasurementType::BearingRange:
        return BearingRangeFactor<D>::predict(a, b_point);
      case MeasurementType::Landmark:
        return Eigen::VectorXd(a.transform_to(b_point));
      default:
        return between(a, b_pose);
    }
  }

  std::variant<Pose<D>, Eigen::VectorXd> perturb(MeasurementType t, std::variant<Pose<D>, Eigen::VectorXd> v,
                                                 const Eigen::VectorXd& s) {
    Eigen::VectorXd n(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) n[i] = gauss(s[i]);
    if (auto* p = std::get_if<Pose<D>>(&v)) return *p * Pose<D>::exp(Tangent<D>(n));
    Eigen::VectorXd x = std::get<Eigen::VectorXd>(v) + n;
    if (t == MeasurementType::BearingRange)
      for (int i = 0; i < D - 1; ++i) x[i] = wrap_angle(x[i]);
    return x;
  }

  void add(Dataset<D>& ds, MeasurementType t, Key a, Key b, const Pose<D>& pa, const Pose<D>& pb,
           const Translation<D>& point) {
    const Eigen::VectorXd s = sigmas(t);
    Measurement<D> m;
    m.type = t;
    m.a = a;
    m.b = b;
    m.value = perturb(t, ideal(t, pa, pb, point), s);
    m.sigmas = model_sigmas(s);
    ds.measurements.push_back(std::move(m));
  }

  void odometry(Dataset<D>& ds, int r, long k) {
    const auto& tr = ds.truth[static_cast<std::size_t>(r)];
    add(ds, MeasurementType::Odometry, pose_key(r, static_cast<std::uint32_t>(k - 1)),
        pose_key(r, static_cast<std::uint32_t>(k)), tr[static_cast<std::size_t>(k - 1)], tr[static_cast<std::size_t>(k)],
        tr[static_cast<std::size_t>(k)].translation());
  }

  bool near(const Pose<D>& a, const Translation<D>& b) const {
    return (a.translation() - b).norm() <= cfg_.observation_range;
  }

  void loops(Dataset<D>& ds, int r, long k) {
    const auto idx = static_cast<std::uint32_t>(k);
    const Pose<D>& me = ds.truth[static_cast<std::size_t>(r)][idx];
    const Key self = pose_key(r, idx);

    if (cfg_.intra_loop) {
      std::vector<std::uint32_t> cand;
      for (long i = 0; i + cfg_.min_loop_gap <= k; ++i)
        if (near(me, ds.truth[static_cast<std::size_t>(r)][static_cast<std::size_t>(i)].translation()))
          cand.push_back(static_cast<std::uint32_t>(i));
      if (!cand.empty() && chance(cfg_.loop_probability)) {
        const auto i = cand[pick(cand.size())];
        const Pose<D>& other = ds.truth[static_cast<std::size_t>(r)][i];
        add(ds, MeasurementType::Intra, self, pose_key(r, i), me, other, other.translation());
      }
    }
    if (cfg_.indirect_inter) {
      std::vector<Key> cand;
      for (int s = 0; s < cfg_.robots; ++s) {
        if (s == r) continue;
        for (long i = 0; i <= k; ++i)
          if (near(me, ds.truth[static_cast<std::size_t>(s)][static_cast<std::size_t>(i)].translation()))
            cand.push_back(pose_key(s, static_cast<std::uint32_t>(i)));
      }
      if (!cand.empty() && chance(cfg_.loop_probability)) {
        const Key o = cand[pick(cand.size())];
        const Pose<D>& other = ds.truth[static_cast<std::size_t>(o.owner)][o.index];
        add(ds, MeasurementType::Indirect, self, o, me, other, other.translation());
      }
    }
    if (cfg_.direct_inter != DirectKind::None) {
      std::vector<int> cand;
      for (int s = 0; s < cfg_.robots; ++s)
        if (s != r && near(me, ds.truth[static_cast<std::size_t>(s)][idx].translation())) cand.push_back(s);
      if (!cand.empty() && chance(cfg_.loop_probability)) {
        const int s = cand[pick(cand.size())];
        const Pose<D>& other = ds.truth[static_cast<std::size_t>(s)][idx];
        const MeasurementType t = cfg_.direct_inter == DirectKind::RelativePose ? MeasurementType::DirectPose
                                  : cfg_.direct_inter == DirectKind::Range     ? MeasurementType::Range
                                                                               : MeasurementType::BearingRange;
        add(ds, t, self, pose_key(s, idx), me, other, other.translation());
      }
    }
    if (cfg_.landmarks) {
      for (const auto& [id, p] : ds.landmarks)
        if (near(me, p) && chance(cfg_.loop_probability))
          add(ds, MeasurementType::Landmark, self, landmark_key(id), me, Pose<D>(), p);
    }
  }

  Pose<D> random_pose() {
    Translation<D> t;
    for (int d = 0; d < D; ++d) t[d] = uniform(lo_[d], hi_[d] + 1e-9);
    if constexpr (D == 2) {
      return Pose<D>(Rotation<2>(uniform(-std::numbers::pi, std::numbers::pi)), t);
    } else {
      if (cfg_.mobility == Mobility::Planar) return yaw_pose(uniform(-std::numbers::pi, std::numbers::pi), t);
      Eigen::Quaterniond q(gauss(1.0), gauss(1.0), gauss(1.0), gauss(1.0));
      return Pose<D>(Rotation<3>(q), t);
    }
  }

  // Replaces an exact share of loop closures with measurements of a random wrong pose.
  void inject_outliers(Dataset<D>& ds) {
    std::vector<std::size_t> loops;
    for (std::size_t i = 0; i < ds.measurements.size(); ++i)
      if (ds.measurements[i].loop_closure()) loops.push_back(i);
    const auto n = static_cast<std::size_t>(std::llround(cfg_.outlier_fraction * static_cast<double>(loops.size())));
    std::shuffle(loops.begin(), loops.end(), rng_);
    loops.resize(n);
    std::sort(loops.begin(), loops.end());
    for (std::size_t i : loops) {
      auto& m = ds.measurements[i];
      const Pose<D>& a = ds.truth[static_cast<std::size_t>(m.a.owner)][m.a.index];
      const Pose<D> wrong = random_pose();
      m.value = ideal(m.type, a, wrong, wrong.translation());
      m.inlier = false;
    }
  }

  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
  Translation<D> lo_ = Translation<D>::Zero();
  Translation<D> hi_ = Translation<D>::Zero();
};

inline std::string format_double(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

template <int D>
void write_pose(std::ostream& os, const Pose<D>& p) {
  for (int d = 0; d < D; ++d) os << ' ' << format_double(p.translation()[d]);
  if constexpr (D == 2) {
    os << ' ' << format_double(p.rotation().angle());
  } else {
    const auto& q = p.rotation().quaternion();
    os << ' ' << format_double(q.x()) << ' ' << format_double(q.y()) << ' ' << format_double(q.z()) << ' '
       << format_double(q.w());
  }
}

inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ' ' << format_double(v[i]);
}

class LineReader {
 public:
  LineReader(std::vector<std::string> tokens, long line) : tok_(std::move(tokens)), line_(line) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error("line " + std::to_string(line_) + ": " + what);
  }

  const std::string& next() {
    if (pos_ >= tok_.size()) fail("unexpected end of record '" + tok_.front() + "'");
    return tok_[pos_++];
  }

  double number() {
    const std::string& s = next();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') fail("bad number '" + s + "'");
    return v;
  }

  long integer() {
    const std::string& s = next();
    char* end = nullptr;
    const long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') fail("bad integer '" + s + "'");
    return v;
  }

  Key key() {
    const std::string& s = next();
    try {
      return parse_key(s);
    } catch (const std::invalid_argument&) {
      fail("bad key '" + s + "'");
    }
  }

  Eigen::VectorXd vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = number();
    return v;
  }

  template <int D>
  Pose<D> pose() {
    Translation<D> t;
    for (int d = 0; d < D; ++d) t[d] = number();
    try {
      if constexpr (D == 2) {
        return Pose<D>(Rotation<2>(number()), t);
      } else {
        const double x = number(), y = number(), z = number(), w = number();
        return Pose<D>(Rotation<3>(Eigen::Quaterniond(w, x, y, z)), t);
      }
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }

  void done() const {
    if (pos_ != tok_.size()) fail("trailing tokens in record '" + tok_.front() + "'");
  }

 private:
  std::vector<std::string> tok_;
  std::size_t pos_ = 1;
  long line_;
};

}  // namespace detail

template <int D>
Dataset<D> generate(const ScenarioConfig& cfg) {
  cfg.validate();
  if (cfg.dim != D) throw std::invalid_argument("generate: scenario dim does not match the requested dimension");
  return detail::Generator<D>(cfg).run();
}

template <int D>
void save(const Dataset<D>& ds, std::ostream& os) {
  auto meta = ds.meta;
  meta["version"] = std::to_string(kDatasetVersion);
  meta["dim"] = std::to_string(D);
  os << "META version " << meta["version"] << "\nMETA dim " << meta["dim"] << '\n';
  for (const auto& [k, v] : meta)
    if (k != "version" && k != "dim") os << "META " << k << ' ' << v << '\n';
  for (int r = 0; r < ds.robots(); ++r) os << "ROBOT " << r << '\n';
  for (int r = 0; r < ds.robots(); ++r) {
    for (std::size_t i = 0; i < ds.truth[r].size(); ++i) {
      os << "GT_POSE " << r << ' ' << i;
      detail::write_pose<D>(os, ds.truth[r][i]);
      os << '\n';
    }
  }
  for (const auto& [id, p] : ds.landmarks) {
    os << "GT_LM " << id;
    detail::write_vector(os, p);
    os << '\n';
  }
  for (const auto& m : ds.measurements) {
    if (m.type == MeasurementType::Odometry) {
      os << "ODOM " << m.a.owner << ' ' << m.a.index << ' ' << m.b.index;
      detail::write_pose<D>(os, m.pose());
      detail::write_vector(os, m.sigmas);
    } else {
      os << "LOOP " << to_string(m.type) << ' ' << to_string(m.a) << ' ' << to_string(m.b);
      if (is_pose_measurement(m.type)) {
        detail::write_pose<D>(os, m.pose());
      } else {
        detail::write_vector(os, m.vector());
      }
      detail::write_vector(os, m.sigmas);
      os << ' ' << (m.inlier ? 1 : 0);
    }
    os << '\n';
  }
}

template <int D>
void save(const Dataset<D>& ds, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  save(ds, f);
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Reads the dimension declared by a dataset stream (META dim), defaulting to 2.
inline int dataset_dimension(std::istream& is) {
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag, key, value;
    if (ls >> tag >> key >> value && tag == "META" && key == "dim") return std::stoi(value);
  }
  return 2;
}

inline int dataset_dimension(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return dataset_dimension(f);
}

template <int D>
Dataset<D> load(std::istream& is) {
  Dataset<D> ds;
  std::string line;
  long n = 0;
  std::map<long, std::map<long, Pose<D>>> poses;
  std::set<long> robots;
  while (std::getline(is, line)) {
    ++n;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty() || tok[0][0] == '#') continue;
    detail::LineReader in(tok, n);
    const std::string& tag = tok[0];
    if (tag == "META") {
      const std::string key = in.next();
      const std::string value = in.next();
      in.done();
      if (key == "version" && value != std::to_string(kDatasetVersion)) in.fail("unsupported version " + value);
      if (key == "dim" && value != std::to_string(D)) in.fail("dataset dimension " + value + " does not match " + std::to_string(D));
      ds.meta[key] = value;
    } else if (tag == "ROBOT") {
      const long r = in.integer();
      in.done();
      if (r < 0 || !robots.insert(r).second) in.fail("bad or duplicate robot id " + std::to_string(r));
    } else if (tag == "GT_POSE") {
      const long r = in.integer(), i = in.integer();
      const Pose<D> p = in.template pose<D>();
      in.done();
      if (!robots.count(r)) in.fail("pose for undeclared robot " + std::to_string(r));
      if (!poses[r].emplace(i, p).second) in.fail("duplicate pose");
    } else if (tag == "GT_LM") {
      const long id = in.integer();
      const Eigen::VectorXd p = in.vector(D);
      in.done();
      if (id < 0 || !ds.landmarks.emplace(static_cast<std::uint32_t>(id), Translation<D>(p)).second) {
        in.fail("bad or duplicate landmark " + std::to_string(id));
      }
    } else if (tag == "ODOM") {
      Measurement<D> m;
      const long r = in.integer(), from = in.integer(), to = in.integer();
      if (r < 0 || from < 0 || to < 0) in.fail("negative index");
      m.a = pose_key(static_cast<std::int32_t>(r), static_cast<std::uint32_t>(from));
      m.b = pose_key(static_cast<std::int32_t>(r), static_cast<std::uint32_t>(to));
      m.value = in.template pose<D>();
      m.sigmas = in.vector(kPoseDof<D>);
      in.done();
      ds.measurements.push_back(std::move(m));
    } else if (tag == "LOOP") {
      Measurement<D> m;
      try {
        m.type = parse_measurement_type(in.next());
      } catch (const std::invalid_argument& e) {
        in.fail(e.what());
      }
      m.a = in.key();
      m.b = in.key();
      if (is_pose_measurement(m.type)) {
        m.value = in.template pose<D>();
      } else {
        m.value = in.vector(payload_size<D>(m.type));
      }
      m.sigmas = in.vector(measurement_dim<D>(m.type));
      const long flag = in.integer();
      in.done();
      if (flag != 0 && flag != 1) in.fail("inlier flag must be 0 or 1");
      m.inlier = flag == 1;
      ds.measurements.push_back(std::move(m));
    } else {
      in.fail("unknown record tag '" + tag + "'");
    }
  }
  if (!robots.empty() && (*robots.begin() != 0 || *robots.rbegin() != static_cast<long>(robots.size()) - 1)) {
    throw std::runtime_error("robot ids must be contiguous from 0");
  }
  ds.truth.resize(robots.size());
  for (auto& [r, ps] : poses) {
    auto& t = ds.truth[static_cast<std::size_t>(r)];
    for (auto& [i, p] : ps) {
      if (i != static_cast<long>(t.size())) throw std::runtime_error("robot " + std::to_string(r) + ": pose indices must be contiguous");
      t.push_back(p);
    }
  }
  std::stable_sort(ds.measurements.begin(), ds.measurements.end(),
                   [](const auto& x, const auto& y) { return x.step() < y.step(); });
  return ds;
}

template <int D>
Dataset<D> load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return load<D>(f);
}

}  // namespace rimesa
