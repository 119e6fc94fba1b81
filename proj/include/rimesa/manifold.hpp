#pragma once

// SE(2) / SE(3) poses. Tangent vectors are rotation-first:
//   SE(2): (theta, rho_x, rho_y)
//   SE(3): (omega_x, omega_y, omega_z, rho_x, rho_y, rho_z)

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace rimesa {

template <int D>
struct GroupTraits;

template <>
struct GroupTraits<2> {
  static constexpr int kRotationDof = 1;
  static constexpr int kDof = 3;
};

template <>
struct GroupTraits<3> {
  static constexpr int kRotationDof = 3;
  static constexpr int kDof = 6;
};

template <int D>
inline constexpr int kPoseDof = GroupTraits<D>::kDof;

template <int D>
inline constexpr int kRotationDof = GroupTraits<D>::kRotationDof;

template <int D>
using Tangent = Eigen::Matrix<double, kPoseDof<D>, 1>;

template <int D>
using Translation = Eigen::Matrix<double, D, 1>;

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  a = std::remainder(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

namespace detail {

inline Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& v, const char* what) {
  if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace detail

template <int D>
class Rotation;

/// SO(2), stored as an angle in (-pi, pi].
template <>
class Rotation<2> {
 public:
  using Matrix = Eigen::Matrix2d;
  using Vector = Eigen::Matrix<double, 1, 1>;

  Rotation() = default;
  explicit Rotation(double angle) : angle_(wrap_angle(angle)) {}

  static Rotation identity() { return Rotation(); }

  static Rotation exp(const Vector& v) {
    detail::require_finite(v, "Rotation<2>::exp");
    return Rotation(v[0]);
  }

  Vector log() const { return Vector(angle_); }
  double angle() const { return angle_; }

  Matrix matrix() const {
    const double c = std::cos(angle_), s = std::sin(angle_);
    Matrix m;
    m << c, -s, s, c;
    return m;
  }

  Rotation operator*(const Rotation& o) const { return Rotation(angle_ + o.angle_); }
  Rotation inverse() const { return Rotation(-angle_); }
  Eigen::Vector2d operator*(const Eigen::Vector2d& p) const { return matrix() * p; }

 private:
  double angle_ = 0.0;
};

/// SO(3), stored as a unit quaternion.
template <>
class Rotation<3> {
 public:
  using Matrix = Eigen::Matrix3d;
  using Vector = Eigen::Vector3d;

  Rotation() : q_(Eigen::Quaterniond::Identity()) {}
  // Already-unit inputs are stored as given so text round trips stay exact.
  explicit Rotation(const Eigen::Quaterniond& q) : q_(q) {
    if (std::abs(q_.squaredNorm() - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) q_.normalize();
    if (!q_.coeffs().allFinite()) throw std::invalid_argument("Rotation<3>: degenerate quaternion");
  }
  explicit Rotation(const Matrix& m) : Rotation(Eigen::Quaterniond(m)) {}

  static Rotation identity() { return Rotation(); }

  static Rotation exp(const Vector& w) {
    detail::require_finite(w, "Rotation<3>::exp");
    const double theta = w.norm();
    if (theta < 1e-10) {
      return Rotation(Eigen::Quaterniond(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z()));
    }
    const double half = 0.5 * theta;
    const Eigen::Vector3d v = (std::sin(half) / theta) * w;
    return Rotation(Eigen::Quaterniond(std::cos(half), v.x(), v.y(), v.z()));
  }

  Vector log() const {
    Eigen::Quaterniond q = q_;
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const Eigen::Vector3d v = q.vec();
    const double n = v.norm();
    if (n < 1e-10) {
      const double w = q.w();
      return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v;
    }
    const double theta = 2.0 * std::atan2(n, q.w());
    return (theta / n) * v;
  }

  double angle() const { return log().norm(); }

  Matrix matrix() const { return q_.toRotationMatrix(); }
  const Eigen::Quaterniond& quaternion() const { return q_; }

  Rotation operator*(const Rotation& o) const { return Rotation(q_ * o.q_); }
  Rotation inverse() const { return Rotation(q_.conjugate()); }
  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return q_ * p; }

 private:
  Eigen::Quaterniond q_;
};

/// Left Jacobian of SO(D) ("V matrix"): maps the translational tangent part to translation.
inline Eigen::Matrix2d se_v_matrix(double theta) {
  double a, b;
  if (std::abs(theta) < 1e-8) {
    a = 1.0 - theta * theta / 6.0;
    b = 0.5 * theta;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta;
  }
  Eigen::Matrix2d v;
  v << a, -b, b, a;
  return v;
}

inline Eigen::Matrix3d se_v_matrix(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = detail::hat(w);
  if (theta < 1e-8) return Eigen::Matrix3d::Identity() + 0.5 * W + W * W / 6.0;
  const double t2 = theta * theta;
  return Eigen::Matrix3d::Identity() + (1.0 - std::cos(theta)) / t2 * W +
         (theta - std::sin(theta)) / (t2 * theta) * W * W;
}

inline Eigen::Matrix2d se_v_inverse(double theta) {
  double a, b;
  if (std::abs(theta) < 1e-8) {
    a = 1.0 - theta * theta / 6.0;
    b = 0.5 * theta;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta;
  }
  const double den = a * a + b * b;
  Eigen::Matrix2d v;
  v << a, b, -b, a;
  return v / den;
}

inline Eigen::Matrix3d se_v_inverse(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  const Eigen::Matrix3d W = detail::hat(w);
  if (theta < 1e-8) return Eigen::Matrix3d::Identity() - 0.5 * W + W * W / 12.0;
  const double coeff =
      (1.0 - theta * std::sin(theta) / (2.0 * (1.0 - std::cos(theta)))) / (theta * theta);
  return Eigen::Matrix3d::Identity() - 0.5 * W + coeff * W * W;
}

/// Element of SE(D).
template <int D>
class Pose {
 public:
  using RotationType = Rotation<D>;
  using TranslationType = Translation<D>;
  using TangentType = Tangent<D>;

  Pose() : translation_(TranslationType::Zero()) {}
  Pose(const RotationType& r, const TranslationType& t) : rotation_(r), translation_(t) {
    detail::require_finite(translation_, "Pose");
  }

  static Pose identity() { return Pose(); }

  const RotationType& rotation() const { return rotation_; }
  const TranslationType& translation() const { return translation_; }

  Pose operator*(const Pose& o) const {
    return Pose(rotation_ * o.rotation_, rotation_ * o.translation_ + translation_);
  }

  Pose inverse() const {
    const RotationType rinv = rotation_.inverse();
    return Pose(rinv, -(rinv * translation_));
  }

  TranslationType transform(const TranslationType& p) const { return rotation_ * p + translation_; }
  TranslationType transform_to(const TranslationType& p) const {
    return rotation_.inverse() * (p - translation_);
  }

  static Pose exp(const TangentType& v) {
    detail::require_finite(v, "Pose::exp");
    constexpr int r = kRotationDof<D>;
    const auto w = v.template head<r>();
    const TranslationType rho = v.template tail<D>();
    if constexpr (D == 2) {
      return Pose(RotationType(w[0]), se_v_matrix(w[0]) * rho);
    } else {
      const Eigen::Vector3d wv = w;
      return Pose(RotationType::exp(wv), se_v_matrix(wv) * rho);
    }
  }

  TangentType log() const {
    TangentType out;
    constexpr int r = kRotationDof<D>;
    const auto w = rotation_.log();
    out.template head<r>() = w;
    if constexpr (D == 2) {
      out.template tail<D>() = se_v_inverse(w[0]) * translation_;
    } else {
      out.template tail<D>() = se_v_inverse(w) * translation_;
    }
    return out;
  }

  /// Right-perturbation retraction used by the solver.
  Pose retract(const TangentType& delta) const { return *this * exp(delta); }

 private:
  RotationType rotation_;
  TranslationType translation_;
};

template <int D>
Pose<D> compose(const Pose<D>& a, const Pose<D>& b) {
  return a * b;
}

template <int D>
Pose<D> inverse(const Pose<D>& p) {
  return p.inverse();
}

/// a^{-1} * b
template <int D>
Pose<D> between(const Pose<D>& a, const Pose<D>& b) {
  return a.inverse() * b;
}

template <int D>
Tangent<D> log_map(const Pose<D>& p) {
  return p.log();
}

template <int D>
Pose<D> exp_map(const Tangent<D>& v) {
  return Pose<D>::exp(v);
}

/// Geodesic distance in tangent norm, |Log(a^{-1} b)|.
template <int D>
double pose_distance(const Pose<D>& a, const Pose<D>& b) {
  return between(a, b).log().norm();
}

/// Translation interpolated linearly, rotation along the geodesic from a to b.
/// Throws std::domain_error when the rotations are antipodal.
template <int D>
Pose<D> split_interpolate(const Pose<D>& a, const Pose<D>& b, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("split_interpolate: t outside [0, 1]");
  const Rotation<D> rel = a.rotation().inverse() * b.rotation();
  const auto w = rel.log();
  if (std::abs(w.norm() - std::numbers::pi) < 1e-9) {
    throw std::domain_error("split_interpolate: antipodal rotations");
  }
  const typename Rotation<D>::Vector scaled = t * w;
  const Rotation<D> r = a.rotation() * Rotation<D>::exp(scaled);
  const Translation<D> tr = (1.0 - t) * a.translation() + t * b.translation();
  return Pose<D>(r, tr);
}

/// Rotation matrix entries in column-major order followed by the translation.
template <int D>
Eigen::VectorXd chordal_vec(const Pose<D>& p) {
  Eigen::VectorXd out(D * D + D);
  const auto m = p.rotation().matrix();
  for (int c = 0; c < D; ++c)
    for (int r = 0; r < D; ++r) out[c * D + r] = m(r, c);
  out.tail(D) = p.translation();
  return out;
}

inline Pose<2> make_pose2(double x, double y, double theta) {
  return Pose<2>(Rotation<2>(theta), Eigen::Vector2d(x, y));
}

inline Pose<3> make_pose3(const Eigen::Vector3d& t, double roll, double pitch, double yaw) {
  const Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                               Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX());
  return Pose<3>(Rotation<3>(q), t);
}

}  // namespace rimesa
