#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "rimesa/eval.hpp"

using namespace rimesa;

namespace {

Values<2> planar_trajectory(int robots, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Values<2> v;
  for (int r = 0; r < robots; ++r) {
    Pose<2> p = make_pose2(3.0 * r, g(rng), g(rng));
    for (int i = 0; i < n; ++i) {
      v.insert(pose_key(r, static_cast<std::uint32_t>(i)), p);
      p = p * make_pose2(1.0, 0.2 * g(rng), 0.3 * g(rng));
    }
  }
  return v;
}

Values<2> transformed(const Values<2>& v, const Pose<2>& t) {
  Values<2> out;
  for (const auto& [k, x] : v) out.insert(k, t * std::get<Pose<2>>(x));
  return out;
}

// Independent minimizer: dense angle scan then golden-section refinement, translation in closed form.
double scan_residual(const std::vector<Eigen::Vector2d>& est, const std::vector<Eigen::Vector2d>& ref,
                     double* best_angle) {
  Eigen::Vector2d me = Eigen::Vector2d::Zero(), mr = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) me += est[i], mr += ref[i];
  me /= static_cast<double>(est.size());
  mr /= static_cast<double>(est.size());
  auto cost = [&](double th) {
    const Eigen::Matrix2d r = Eigen::Rotation2Dd(th).toRotationMatrix();
    double c = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) c += (r * (est[i] - me) - (ref[i] - mr)).squaredNorm();
    return c;
  };
  double best = 0.0, bc = cost(0.0);
  for (int i = 1; i < 3600; ++i) {
    const double th = -std::numbers::pi + 2.0 * std::numbers::pi * i / 3600.0;
    if (const double c = cost(th); c < bc) bc = c, best = th;
  }
  double lo = best - 0.01, hi = best + 0.01;
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    const double a = hi - phi * (hi - lo), b = lo + phi * (hi - lo);
    (cost(a) < cost(b) ? hi : lo) = (cost(a) < cost(b) ? b : a);
  }
  *best_angle = 0.5 * (lo + hi);
  return std::sqrt(cost(*best_angle) / static_cast<double>(est.size()));
}

}  // namespace

TEST(Umeyama, IdentityForEqualSets) {
  const std::vector<Eigen::Vector2d> p{{0, 0}, {1, 0}, {0, 2}, {3, 1}};
  const auto t = umeyama_align<2>(p, p);
  EXPECT_LT(t.log().norm(), 1e-12);
}

TEST(Umeyama, RecoversKnownTransform) {
  const std::vector<Eigen::Vector3d> p{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}, {3, 1, 1}, {-1, 2, 4}};
  const Pose<3> truth = make_pose3(Eigen::Vector3d(1.5, -2, 0.3), 0.2, -0.4, 1.1);
  std::vector<Eigen::Vector3d> q;
  for (const auto& x : p) q.push_back(truth.transform(x));
  const auto t = umeyama_align<3>(p, q);
  EXPECT_LT(between(t, truth).log().norm(), 1e-9);
}

TEST(Umeyama, MatchesIterativeMinimizerOnNoisyCloud) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Eigen::Vector2d> est, ref;
    const Pose<2> truth = make_pose2(g(rng), g(rng), 3.0 * g(rng));
    for (int i = 0; i < 40; ++i) {
      est.emplace_back(5.0 * g(rng), 5.0 * g(rng));
      ref.push_back(truth.transform(est.back()) + 0.01 * Eigen::Vector2d(g(rng), g(rng)));
    }
    const Pose<2> t = umeyama_align<2>(est, ref);
    double rms = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) rms += (t.transform(est[i]) - ref[i]).squaredNorm();
    rms = std::sqrt(rms / static_cast<double>(est.size()));
    double angle = 0.0;
    const double oracle = scan_residual(est, ref, &angle);
    EXPECT_LE(rms, 0.02);
    EXPECT_NEAR(rms, oracle, 1e-9);
    EXPECT_NEAR(wrap_angle(t.rotation().angle() - angle), 0.0, 1e-6);
  }
}

TEST(Umeyama, RejectsDegenerateInput) {
  const std::vector<Eigen::Vector2d> two{{0, 0}, {1, 0}};
  EXPECT_THROW(umeyama_align<2>(two, two), std::invalid_argument);
  const std::vector<Eigen::Vector2d> line{{0, 0}, {1, 1}, {2, 2}, {5, 5}};
  EXPECT_THROW(umeyama_align<2>(line, line), std::invalid_argument);
  const std::vector<Eigen::Vector2d> three{{0, 0}, {1, 0}, {0, 1}};
  EXPECT_THROW(umeyama_align<2>(three, line), std::invalid_argument);
}

TEST(Ate, ZeroForIdenticalAndRigidlyMovedEstimates) {
  const auto ref = planar_trajectory(3, 30, 1);
  EXPECT_NEAR(ate(ref, ref), 0.0, 1e-12);
  EXPECT_NEAR(ate(transformed(ref, make_pose2(10, -4, 0)), ref), 0.0, 1e-9);
}

TEST(Ate, InvariantToRigidTransformOfEstimate) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto ref = planar_trajectory(3, 40, 2);
  Values<2> est;
  for (const auto& [k, x] : ref) est.insert(k, std::get<Pose<2>>(x) * make_pose2(0.1 * g(rng), 0.1 * g(rng), 0.05 * g(rng)));
  const double base = ate(est, ref);
  EXPECT_GT(base, 0.01);
  for (int i = 0; i < 10; ++i) {
    const Pose<2> t = make_pose2(20 * g(rng), 20 * g(rng), 3 * g(rng));
    EXPECT_NEAR(ate(transformed(est, t), ref), base, 1e-9);
  }
}

TEST(Ate, SingleOffsetPoseGivesRmsShare) {
  auto ref = planar_trajectory(1, 100, 5);
  Values<2> est = ref;
  const Key k = pose_key(0, 50);
  const Pose<2> p = ref.pose(k);
  est.update(k, Pose<2>(p.rotation(), p.translation() + Eigen::Vector2d(1.0, 0.0)));
  EXPECT_NEAR(ate(est, ref), 0.1, 1e-3);
}

TEST(Ate, PooledAcrossRobotsAndRejectsMismatch) {
  const auto ref = planar_trajectory(2, 10, 7);
  Values<2> est = ref;
  est.erase(pose_key(1, 3));
  EXPECT_THROW(ate(est, ref), std::invalid_argument);
  Values<2> extra = ref;
  extra.insert(pose_key(5, 0), Pose<2>());
  EXPECT_THROW(ate(extra, ref), std::invalid_argument);
}

TEST(Ate, CollinearTrajectoryStillScores) {
  Values<2> ref;
  for (std::uint32_t i = 0; i < 5; ++i) ref.insert(pose_key(0, i), make_pose2(i, 0, 0));
  EXPECT_NEAR(ate(transformed(ref, make_pose2(1, 2, 0.3)), ref), 0.0, 1e-9);
}

TEST(Incremental, WeightsLaterStepsMore) {
  EXPECT_DOUBLE_EQ(incremental({{1, 3.0}, {2, 3.0}, {3, 0.0}}), 1.5);
  EXPECT_DOUBLE_EQ(incremental({{4, 2.5}}), 2.5);
  EXPECT_NEAR(incremental({{1, 0.7}, {5, 0.7}, {9, 0.7}, {10, 0.7}}), 0.7, 1e-15);
  EXPECT_THROW(incremental({}), std::invalid_argument);
  EXPECT_THROW(incremental({{0, 1.0}}), std::invalid_argument);
}

TEST(F1, StandardDefinitions) {
  std::vector<bool> pred, truth;
  for (int i = 0; i < 8; ++i) pred.push_back(true), truth.push_back(true);
  for (int i = 0; i < 2; ++i) pred.push_back(true), truth.push_back(false);
  for (int i = 0; i < 2; ++i) pred.push_back(false), truth.push_back(true);
  for (int i = 0; i < 5; ++i) pred.push_back(false), truth.push_back(false);
  const auto r = f1_score(pred, truth);
  EXPECT_DOUBLE_EQ(r.precision, 0.8);
  EXPECT_DOUBLE_EQ(r.recall, 0.8);
  EXPECT_NEAR(r.f1, 0.8, 1e-15);
  EXPECT_EQ(r.tn, 5u);

  EXPECT_DOUBLE_EQ(f1_score(truth, truth).f1, 1.0);
  const auto miss = f1_score(std::vector<bool>(5, false), std::vector<bool>(5, true));
  EXPECT_DOUBLE_EQ(miss.recall, 0.0);
  EXPECT_DOUBLE_EQ(miss.f1, 0.0);

  const auto empty = f1_score(std::vector<bool>{}, std::vector<bool>{});
  EXPECT_TRUE(empty.empty);
  EXPECT_DOUBLE_EQ(empty.f1, 1.0);
}

TEST(F1, PermutationInvariant) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution b(0.7);
  std::vector<std::pair<bool, bool>> items(60);
  for (auto& [p, t] : items) p = b(rng), t = b(rng);
  auto score = [&] {
    std::vector<bool> p, t;
    for (auto [a, c] : items) p.push_back(a), t.push_back(c);
    return f1_score(p, t).f1;
  };
  const double base = score();
  for (int i = 0; i < 10; ++i) {
    std::shuffle(items.begin(), items.end(), rng);
    EXPECT_DOUBLE_EQ(score(), base);
  }
}

TEST(F1, KeyedByMeasurementId) {
  const std::map<std::size_t, bool> labels{{0, true}, {1, false}, {2, true}};
  EXPECT_DOUBLE_EQ(f1_score(std::map<std::size_t, bool>{{0, true}, {1, false}}, labels).f1, 1.0);
  EXPECT_THROW(f1_score(std::map<std::size_t, bool>{{7, true}}, labels), std::invalid_argument);
}

TEST(Evaluate, IncrementalOverHistory) {
  const auto ref = planar_trajectory(2, 3, 4);
  SolutionHistory<2> h;
  for (long k = 0; k < 3; ++k) {
    HistoryStep<2> s;
    s.k = k;
    for (const auto& [key, x] : ref)
      if (key.index <= k) s.estimate.insert(key, x);
    if (k == 2) s.estimate.update(pose_key(0, 2), std::get<Pose<2>>(ref.at(pose_key(0, 2))) * make_pose2(0.5, 0, 0));
    h.record(std::move(s));
  }
  const auto r = evaluate(h, ref, {});
  ASSERT_EQ(r.series.size(), 3u);
  EXPECT_NEAR(r.series[0].ate, 0.0, 1e-9);
  EXPECT_NEAR(r.iate, 0.5 * r.final_ate, 1e-12);
  EXPECT_GT(r.final_ate, 0.0);
  EXPECT_TRUE(r.f1_empty);

  HistoryStep<2> stale;
  stale.k = 1;
  EXPECT_THROW(h.record(stale), std::invalid_argument);
}
