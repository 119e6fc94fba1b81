#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"

using namespace rimesa;
constexpr double kPi = std::numbers::pi;

namespace {

Pose<3> random_pose3(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = max_angle * std::abs(u(rng));
  Eigen::Vector3d t(5 * u(rng), 5 * u(rng), 5 * u(rng));
  return Pose<3>(Rotation<3>::exp(angle * axis), t);
}

Pose<2> random_pose2(std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return make_pose2(5 * u(rng), 5 * u(rng), max_angle * u(rng));
}

template <int D>
void expect_pose_near(const Pose<D>& a, const Pose<D>& b, double tol) {
  EXPECT_LT(pose_distance(a, b), tol);
  EXPECT_LT((a.translation() - b.translation()).norm(), tol);
}

}  // namespace

TEST(Manifold, ComposeSE2ByHand) {
  const auto p = compose(make_pose2(1, 0, kPi / 2), make_pose2(1, 0, 0));
  EXPECT_NEAR(p.translation().x(), 1.0, 1e-12);
  EXPECT_NEAR(p.translation().y(), 1.0, 1e-12);
  EXPECT_NEAR(p.rotation().angle(), kPi / 2, 1e-12);
}

TEST(Manifold, IdentityAndInverseLaws) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_pose3(rng, 3.0);
    expect_pose_near(compose(Pose<3>::identity(), p), p, 1e-9);
    const auto e = compose(p, inverse(p));
    EXPECT_LT(e.rotation().angle(), 1e-9);
    EXPECT_LT(e.translation().norm(), 1e-9);
    const auto q = random_pose2(rng, 3.0);
    const auto e2 = compose(q, inverse(q));
    EXPECT_LT(std::abs(e2.rotation().angle()), 1e-9);
    EXPECT_LT(e2.translation().norm(), 1e-9);
  }
}

TEST(Manifold, Associativity) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_pose3(rng, 3.0), b = random_pose3(rng, 3.0), c = random_pose3(rng, 3.0);
    expect_pose_near((a * b) * c, a * (b * c), 1e-9);
    const auto x = random_pose2(rng, 3.0), y = random_pose2(rng, 3.0), z = random_pose2(rng, 3.0);
    expect_pose_near((x * y) * z, x * (y * z), 1e-9);
  }
}

TEST(Manifold, QuaternionStaysUnit) {
  std::mt19937_64 rng(3);
  Pose<3> acc;
  for (int i = 0; i < 1000; ++i) acc = acc * random_pose3(rng, 0.3);
  EXPECT_NEAR(acc.rotation().quaternion().norm(), 1.0, 1e-9);
  const Eigen::Matrix3d R = acc.rotation().matrix();
  EXPECT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).norm(), 1e-9);
}

TEST(Manifold, LogIdentityIsZero) {
  EXPECT_EQ(Pose<2>::identity().log().norm(), 0.0);
  EXPECT_EQ(Pose<3>::identity().log().norm(), 0.0);
}

// Oracle: integrate the constant body twist (omega, v) with fine Euler steps.
TEST(Manifold, ExpSE2MatchesTwistIntegration) {
  Tangent<2> v(kPi / 2, kPi / 2, 0.0);
  const auto p = exp_map<2>(v);
  EXPECT_NEAR(p.translation().x(), 1.0, 1e-9);
  EXPECT_NEAR(p.translation().y(), 1.0, 1e-9);

  const int n = 200000;
  double x = 0, y = 0, th = 0;
  const double dt = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const double mid = th + 0.5 * v[0] * dt;
    x += (std::cos(mid) * v[1] - std::sin(mid) * v[2]) * dt;
    y += (std::sin(mid) * v[1] + std::cos(mid) * v[2]) * dt;
    th += v[0] * dt;
  }
  EXPECT_NEAR(p.translation().x(), x, 1e-8);
  EXPECT_NEAR(p.translation().y(), y, 1e-8);
}

TEST(Manifold, ExpSE3MatchesTwistIntegration) {
  Tangent<3> v;
  v << 0.3, -0.7, 1.1, 1.0, 2.0, -0.5;
  const auto p = exp_map<3>(v);
  const int n = 20000;
  const double dt = 1.0 / n;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  const Eigen::Vector3d w = v.head<3>(), rho = v.tail<3>();
  const Eigen::Matrix3d step = Eigen::AngleAxisd(w.norm() * dt, w.normalized()).toRotationMatrix();
  const Eigen::Matrix3d half = Eigen::AngleAxisd(0.5 * w.norm() * dt, w.normalized()).toRotationMatrix();
  for (int i = 0; i < n; ++i) {
    t += R * half * rho * dt;
    R = R * step;
  }
  EXPECT_LT((p.translation() - t).norm(), 1e-7);
  EXPECT_LT((p.rotation().matrix() - R).norm(), 1e-9);
}

TEST(Manifold, LogExpRoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    Tangent<3> v;
    Eigen::Vector3d axis(u(rng), u(rng), u(rng));
    v.head<3>() = axis.normalized() * 0.9 * kPi * std::abs(u(rng));
    v.tail<3>() << 3 * u(rng), 3 * u(rng), 3 * u(rng);
    EXPECT_LT((log_map(exp_map<3>(v)) - v).norm(), 1e-8);
    Tangent<2> w(0.9 * kPi * u(rng), 3 * u(rng), 3 * u(rng));
    EXPECT_LT((log_map(exp_map<2>(w)) - w).norm(), 1e-8);
  }
}

TEST(Manifold, ExpLogRoundTripNearPi) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::Vector3d axis(u(rng), u(rng), u(rng));
    const Pose<3> p(Rotation<3>::exp(0.9 * kPi * axis.normalized()), Eigen::Vector3d(u(rng), u(rng), u(rng)));
    expect_pose_near(exp_map<3>(log_map(p)), p, 1e-9);
    const auto q = make_pose2(u(rng), u(rng), 0.9 * kPi);
    expect_pose_near(exp_map<2>(log_map(q)), q, 1e-9);
  }
}

TEST(Manifold, SmallAngleBranches) {
  Tangent<3> v;
  v << 1e-12, -2e-12, 3e-13, 1.0, 2.0, 3.0;
  EXPECT_LT((log_map(exp_map<3>(v)) - v).norm(), 1e-12);
  Tangent<2> w(1e-13, 1.0, -1.0);
  EXPECT_LT((log_map(exp_map<2>(w)) - w).norm(), 1e-12);
}

TEST(Manifold, RejectsNonFinite) {
  Tangent<2> v(std::nan(""), 0, 0);
  EXPECT_THROW(exp_map<2>(v), std::invalid_argument);
  Tangent<3> w = Tangent<3>::Zero();
  w[4] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(exp_map<3>(w), std::invalid_argument);
}

TEST(Manifold, SplitEndpointsAndMidpoint) {
  std::mt19937_64 rng(6);
  const auto a = random_pose3(rng, 2.0), b = random_pose3(rng, 2.0);
  expect_pose_near(split_interpolate(a, a, 0.5), a, 1e-12);
  expect_pose_near(split_interpolate(a, b, 0.0), a, 1e-12);
  expect_pose_near(split_interpolate(a, b, 1.0), b, 1e-9);

  const auto m = split_interpolate(make_pose2(0, 0, 0), make_pose2(2, 4, kPi / 2), 0.5);
  EXPECT_NEAR(m.rotation().angle(), kPi / 4, 1e-12);
  EXPECT_NEAR(m.translation().x(), 1.0, 1e-12);
  EXPECT_NEAR(m.translation().y(), 2.0, 1e-12);
}

TEST(Manifold, SplitMidpointSymmetric) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_pose3(rng, 3.0), b = random_pose3(rng, 3.0);
    if (pose_distance(Pose<3>(a.rotation(), {0, 0, 0}), Pose<3>(b.rotation(), {0, 0, 0})) > 3.0) continue;
    expect_pose_near(split_interpolate(a, b, 0.5), split_interpolate(b, a, 0.5), 1e-9);
    const auto x = random_pose2(rng, 1.5), y = random_pose2(rng, 1.5);
    expect_pose_near(split_interpolate(x, y, 0.5), split_interpolate(y, x, 0.5), 1e-9);
  }
}

TEST(Manifold, SplitAntipodalThrows) {
  EXPECT_THROW(split_interpolate(make_pose2(0, 0, 0), make_pose2(0, 0, kPi), 0.5), std::domain_error);
  const Pose<3> a;
  const Pose<3> b(Rotation<3>::exp(Eigen::Vector3d(0, kPi, 0)), Eigen::Vector3d::Zero());
  EXPECT_THROW(split_interpolate(a, b, 0.5), std::domain_error);
  EXPECT_THROW(split_interpolate(a, a, 1.5), std::invalid_argument);
}

TEST(Manifold, ChordalVec) {
  const auto id = chordal_vec(Pose<2>::identity());
  Eigen::VectorXd expected(6);
  expected << 1, 0, 0, 1, 0, 0;
  EXPECT_LT((id - expected).norm(), 1e-15);
  const auto r = chordal_vec(make_pose2(2, 3, kPi / 2));
  expected << 0, 1, -1, 0, 2, 3;
  EXPECT_LT((r - expected).norm(), 1e-12);
  EXPECT_EQ(chordal_vec(Pose<3>::identity()).size(), 12);
}

TEST(Manifold, ChordalVecInjective) {
  std::mt19937_64 rng(8);
  std::vector<Pose<3>> poses;
  for (int i = 0; i < 100; ++i) poses.push_back(random_pose3(rng, 3.0));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      if (pose_distance(poses[i], poses[j]) > 1e-6) {
        EXPECT_GT((chordal_vec(poses[i]) - chordal_vec(poses[j])).norm(), 1e-7);
      }
    }
  }
}

TEST(Keys, OrderingAndText) {
  EXPECT_LT(pose_key(0, 5), pose_key(1, 0));
  EXPECT_LT(pose_key(0, 5), pose_key(0, 6));
  EXPECT_LT(landmark_key(100), pose_key(0, 0));
  EXPECT_EQ(to_string(pose_key(2, 17)), "r2:17");
  EXPECT_EQ(to_string(landmark_key(4)), "l4");
  EXPECT_EQ(parse_key("r2:17"), pose_key(2, 17));
  EXPECT_EQ(parse_key("l4"), landmark_key(4));
  EXPECT_THROW(parse_key("x1"), std::invalid_argument);
  EXPECT_THROW(parse_key("r1"), std::invalid_argument);
  EXPECT_THROW(parse_key("r1:x"), std::invalid_argument);
}
