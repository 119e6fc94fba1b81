#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "rimesa/consensus.hpp"

using namespace rimesa;
constexpr double kPi = std::numbers::pi;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

const std::vector<ConstraintKind> kPoseKinds{ConstraintKind::Geodesic, ConstraintKind::ApxGeodesic,
                                             ConstraintKind::Split, ConstraintKind::Chordal};

Pose<3> random_pose3(std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tangent<3> v;
  v << scale * u(rng), scale * u(rng), scale * u(rng), 5 * u(rng), 5 * u(rng), 5 * u(rng);
  return exp_map<3>(v);
}

}  // namespace

TEST(Constraint, ResidualExamples) {
  const Variable<2> id = Pose<2>();
  EXPECT_EQ(constraint_residual<2>(ConstraintKind::Geodesic, id, Pose<2>()).norm(), 0.0);
  EXPECT_EQ(constraint_residual<2>(ConstraintKind::Chordal, id, chordal_vec(Pose<2>())).size(), 6);
  EXPECT_EQ(constraint_residual<2>(ConstraintKind::Chordal, id, chordal_vec(Pose<2>())).norm(), 0.0);
  const Variable<2> rot = make_pose2(0, 0, kPi / 2);
  const auto q = constraint_residual<2>(ConstraintKind::Geodesic, rot, Pose<2>());
  EXPECT_LT((q - log_map(make_pose2(0, 0, kPi / 2))).norm(), 1e-15);
  EXPECT_NEAR(q[0], kPi / 2, 1e-15);
  const Variable<2> pt = vec({1.0, 2.0});
  EXPECT_THROW(constraint_residual<2>(ConstraintKind::Geodesic, pt, Pose<2>()), std::invalid_argument);
  EXPECT_THROW(constraint_residual<2>(ConstraintKind::Linear, id, vec({1.0})), std::invalid_argument);
  EXPECT_THROW(constraint_residual<2>(ConstraintKind::Linear, pt, vec({1.0})), std::invalid_argument);
}

TEST(Constraint, ZeroIffSameElement) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const Variable<3> a = random_pose3(rng), b = random_pose3(rng);
    for (auto c : kPoseKinds) {
      EXPECT_LT(constraint_residual<3>(c, a, initial_edge_value<3>(c, a)).norm(), 1e-9) << to_string(c);
      EXPECT_LT(constraint_residual<3>(c, a, edge_update<3>(c, a, a)).norm(), 1e-9) << to_string(c);
      EXPECT_GT(constraint_residual<3>(c, a, initial_edge_value<3>(c, b)).norm(), 1e-6) << to_string(c);
    }
  }
}

TEST(EdgeUpdate, Examples) {
  std::mt19937_64 rng(2);
  const Variable<3> p = random_pose3(rng);
  EXPECT_LT(pose_distance(std::get<Pose<3>>(edge_update<3>(ConstraintKind::Geodesic, p, p)), std::get<Pose<3>>(p)), 1e-12);
  const auto z = std::get<Eigen::VectorXd>(edge_update<2>(ConstraintKind::Linear, vec({1, 2, 3}), vec({3, 2, 1})));
  EXPECT_LT((z - vec({2, 2, 2})).norm(), 1e-15);
  EXPECT_THROW(edge_update<2>(ConstraintKind::Geodesic, make_pose2(0, 0, 0), make_pose2(0, 0, kPi)), std::domain_error);
}

// Oracle: coarse grid then coordinate refinement of |Log(z^-1 a)|^2 + |Log(z^-1 b)|^2 over SE(2).
TEST(EdgeUpdate, GeodesicMidpointMinimizesPenalty) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 20; ++t) {
    const auto a = make_pose2(3 * u(rng), 3 * u(rng), kPi * u(rng));
    const auto b = a * make_pose2(0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng));
    auto f = [&](const Pose<2>& z) {
      return between(z, a).log().squaredNorm() + between(z, b).log().squaredNorm();
    };
    Pose<2> best = a;
    double fb = f(a);
    for (int i = -10; i <= 10; ++i)
      for (int j = -10; j <= 10; ++j)
        for (int k = -10; k <= 10; ++k) {
          const auto z = a * make_pose2(0.01 * i, 0.01 * j, 0.01 * k);
          if (f(z) < fb) fb = f(z), best = z;
        }
    for (double h = 0.005; h > 1e-9; h *= 0.5) {
      bool improved = true;
      while (improved) {
        improved = false;
        for (int c = 0; c < 3; ++c)
          for (double s : {-h, h}) {
            Tangent<2> d = Tangent<2>::Zero();
            d[c] = s;
            const auto z = best * Pose<2>::exp(d);
            if (f(z) < fb) fb = f(z), best = z, improved = true;
          }
      }
    }
    const auto split = std::get<Pose<2>>(edge_update<2>(ConstraintKind::Geodesic, a, b));
    EXPECT_LT(pose_distance(split, best), 1e-3);
  }
}

TEST(Dual, UpdateExamples) {
  const auto v = vec({0.3, -0.2, 1.0});
  EXPECT_LT((dual_update(Eigen::VectorXd::Zero(3), 1.0, v, 1.0) - v).norm(), 1e-15);
  EXPECT_LT((dual_update(v, 1.0, Eigen::VectorXd::Zero(3), 0.9) - 0.9 * v).norm(), 1e-15);
  EXPECT_LT((dual_update(vec({1, 1, 1}), 2.0, vec({0.5, 0, 0}), 0.9) - vec({1.9, 0.9, 0.9})).norm(), 1e-15);
  EXPECT_THROW(dual_update(vec({1, 1}), 1.0, v, 0.9), std::invalid_argument);
}

TEST(Dual, BoundedUnderDecay) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  const double beta = 2.5, Q = 0.7;
  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(6);
  for (int i = 0; i < 100000; ++i) {
    Eigen::VectorXd q(6);
    for (int d = 0; d < 6; ++d) q[d] = u(rng);
    q *= Q * std::abs(u(rng)) / q.norm();
    lambda = dual_update(lambda, beta, q, 0.9);
    ASSERT_LE(lambda.norm(), beta * Q / (1 - 0.9) + 1e-9);
  }
}

TEST(BiasedPrior, ResidualProperties) {
  const Key k = pose_key(1, 3);
  auto term = std::make_shared<ConsensusTerm<3>>();
  term->kind = ConstraintKind::Geodesic;
  std::mt19937_64 rng(5);
  const auto z = random_pose3(rng);
  term->z = z;
  term->dual = Eigen::VectorXd::Zero(6);
  term->penalty = 1.0;
  const Variable<3> zv = z;
  const auto w = constraint_weights<3>(ConstraintKind::Geodesic, zv, ConsensusWeights{});
  EXPECT_LT((w - vec({10, 10, 10, 1, 1, 1})).norm(), 1e-12);
  BiasedPriorFactor<3> f(k, term, w, RobustKernel::graduated_for_dim(6, 0.0), 0);
  EXPECT_TRUE(f.outlier_candidate());
  Values<3> vals;
  vals.insert(k, z);
  EXPECT_LT(f.whitened_error(vals).norm(), 1e-12);

  // Live reads of the shared term.
  const auto theta = random_pose3(rng);
  vals.update(k, theta);
  const Eigen::VectorXd r1 = f.whitened_error(vals);
  term->penalty = 1e-4;
  const Eigen::VectorXd r2 = f.whitened_error(vals);
  EXPECT_NEAR(r2.norm() / r1.norm(), std::sqrt(1e-4), 1e-12);
  const Eigen::VectorXd q = between(z, theta).log();
  EXPECT_NEAR(r2.norm(), std::sqrt(5e-5) * w.cwiseProduct(q).norm(), 1e-12);

  term->penalty = 2.0;
  term->dual = vec({0.1, -0.2, 0.05, 1.0, 0.3, -0.4});
  const Eigen::VectorXd expect = std::sqrt(1.0) * w.cwiseProduct(q + term->dual / 2.0);
  EXPECT_LT((f.whitened_error(vals) - expect).norm(), 1e-12);

  // Gradient of |r|^2 vs central differences.
  const auto J = f.jacobians(vals)[0];
  const Eigen::VectorXd grad = 2.0 * J.transpose() * f.whitened_error(vals);
  Eigen::VectorXd num(6);
  for (int c = 0; c < 6; ++c) {
    Tangent<3> d = Tangent<3>::Zero();
    d[c] = 1e-6;
    auto vp = vals, vm = vals;
    vp.update(k, theta.retract(d));
    vm.update(k, theta.retract(-d));
    num[c] = (f.squared_error(vp) - f.squared_error(vm)) / 2e-6;
  }
  EXPECT_LT((num - grad).norm(), 1e-5 * std::max(1.0, num.norm()));
}

namespace {

LocalProblem<2> scalar_robot(int id, double prior, double sigma = 1.0) {
  LocalProblem<2> p;
  p.robot = id;
  p.graph.add(make_prior_point<2>(landmark_key(0), vec({prior}), NoiseModel::isotropic(1, sigma)));
  p.init.insert(landmark_key(0), vec({prior}));
  return p;
}

}  // namespace

TEST(MesaPlus, SingleRobotIsBatch) {
  LocalProblem<2> p;
  p.robot = 0;
  p.graph.add(make_prior_pose<2>(pose_key(0, 0), make_pose2(1, 2, 0.3), NoiseModel::isotropic(3, 0.1)));
  p.graph.add(make_between<2>(pose_key(0, 0), pose_key(0, 1), make_pose2(1, 0, 0.1), NoiseModel::isotropic(3, 0.1)));
  p.init.insert(pose_key(0, 0), Pose<2>());
  p.init.insert(pose_key(0, 1), Pose<2>());
  const auto res = mesa_plus<2>({p}, {});
  const auto ref = optimize_batch(p.graph, p.init);
  for (const auto& [k, v] : ref.values) EXPECT_LT(variable_distance<2>(v, res.estimates.at(0).at(k)), 1e-12);
}

TEST(MesaPlus, SharedLandmarkConvergesToJointMean) {
  const auto res = mesa_plus<2>({scalar_robot(0, 0.0), scalar_robot(1, 4.0)}, round_robin_schedule({0, 1}, 50));
  EXPECT_LE(res.iterations, 50);
  EXPECT_NEAR(res.estimates.at(0).point(landmark_key(0))[0], 2.0, 1e-3);
  EXPECT_NEAR(res.estimates.at(1).point(landmark_key(0))[0], 2.0, 1e-3);
}

// Textbook C-ADMM on f_i(x) = (x - a_i)^2 / s^2 with the symmetric edge variable.
TEST(MesaPlus, LinearMatchesTextbookIterates) {
  const double a0 = -1.3, a1 = 2.9, s = 0.7, beta = 1.0;
  for (int iters = 1; iters <= 5; ++iters) {
    double x0 = a0, x1 = a1, z0 = a0, z1 = a1, l0 = 0, l1 = 0;
    for (int k = 0; k < iters; ++k) {
      x0 = (2 * a0 / (s * s) + beta * z0 - l0) / (2 / (s * s) + beta);
      x1 = (2 * a1 / (s * s) + beta * z1 - l1) / (2 / (s * s) + beta);
      const double z = 0.5 * (x0 + x1);
      z0 = z1 = z;
      l0 += beta * (x0 - z);
      l1 += beta * (x1 - z);
    }
    MesaPlusConfig cfg;
    cfg.tolerance = 1e-300;
    const auto res = mesa_plus<2>({scalar_robot(0, a0, s), scalar_robot(1, a1, s)}, round_robin_schedule({0, 1}, iters), cfg);
    EXPECT_NEAR(res.estimates.at(0).point(landmark_key(0))[0], x0, 1e-12);
    EXPECT_NEAR(res.estimates.at(1).point(landmark_key(0))[0], x1, 1e-12);
  }
}

TEST(MesaPlus, LinearViolationTrendsDown) {
  // Four robots on a line, each sharing a landmark with the next.
  std::vector<LocalProblem<2>> ps;
  for (int r = 0; r < 4; ++r) {
    LocalProblem<2> p;
    p.robot = r;
    for (int l : {r, r + 1}) {
      p.graph.add(make_prior_point<2>(landmark_key(l), vec({1.0 * l + 0.7 * r, -0.5 * r}), NoiseModel::isotropic(2, 1.0)));
      p.init.insert(landmark_key(l), vec({0.0, 0.0}));
    }
    ps.push_back(p);
  }
  MesaPlusConfig cfg;
  cfg.tolerance = 1e-300;
  const auto res = mesa_plus<2>(ps, round_robin_schedule({0, 1, 2, 3}, 40), cfg);
  const auto& h = res.disagreement_history;
  ASSERT_GE(h.size(), 60u);
  double prev = 1e300;
  for (std::size_t w = 0; w + 10 <= h.size(); w += 10) {
    double sum = 0;
    for (std::size_t i = w; i < w + 10; ++i) sum += h[i];
    EXPECT_LE(sum, prev + 1e-12);
    prev = sum;
  }
}

TEST(MesaPlus, ThreeRobotPoseGraphMatchesCentralized) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0, 1);
  const int R = 3, P = 20;
  std::vector<std::vector<Pose<2>>> truth(R);
  for (int r = 0; r < R; ++r) {
    truth[r].push_back(make_pose2(5.0 * r, -3.0 * r, 0.4 * r));
    for (int i = 1; i < P; ++i) truth[r].push_back(truth[r].back() * make_pose2(1, 0, 0.25 + 0.05 * n(rng)));
  }
  const double sr = 0.25 * kPi / 180.0, st = 0.05;
  auto noisy = [&](const Pose<2>& p) { return p * make_pose2(st * n(rng), st * n(rng), sr * n(rng)); };
  const auto odo = NoiseModel::from_sigmas(vec({sr, st, st}));
  std::vector<LocalProblem<2>> ps(R);
  FactorGraph<2> central;
  Values<2> central_init;
  for (int r = 0; r < R; ++r) {
    ps[r].robot = r;
    auto prior = make_prior_pose<2>(pose_key(r, 0), truth[r][0], NoiseModel::isotropic(3, 1e-4));
    ps[r].graph.add(prior);
    central.add(prior);
    Pose<2> dr = truth[r][0];
    ps[r].init.insert(pose_key(r, 0), dr);
    central_init.insert(pose_key(r, 0), dr);
    for (int i = 1; i < P; ++i) {
      const auto m = noisy(between(truth[r][i - 1], truth[r][i]));
      auto f = make_between<2>(pose_key(r, i - 1), pose_key(r, i), m, odo);
      ps[r].graph.add(f);
      central.add(f);
      dr = dr * m;
      ps[r].init.insert(pose_key(r, i), dr);
      central_init.insert(pose_key(r, i), dr);
    }
  }
  // Each robot holds a closure to one pose of the next robot.
  for (int r = 0; r < R; ++r) {
    const int o = (r + 1) % R, a = 10 + r, b = 12 - r;
    const auto m = noisy(between(truth[r][a], truth[o][b]));
    auto f = make_between<2>(pose_key(r, a), pose_key(o, b), m, odo);
    ps[r].graph.add(f);
    central.add(f);
    ps[r].init.insert(pose_key(o, b), ps[r].init.pose(pose_key(r, a)) * m);
  }
  MesaPlusConfig cfg;
  cfg.alpha = 1.02;
  cfg.tolerance = 1e-300;
  const auto res = mesa_plus<2>(ps, round_robin_schedule({0, 1, 2}, 200), cfg);
  const auto ref = optimize_batch(central, central_init);
  EXPECT_LT(res.max_disagreement, 1e-2);
  double se_d = 0, se_c = 0;
  int count = 0;
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < P; ++i) {
      const auto k = pose_key(r, i);
      se_d += (res.estimates.at(r).pose(k).translation() - truth[r][i].translation()).squaredNorm();
      se_c += (ref.values.pose(k).translation() - truth[r][i].translation()).squaredNorm();
      ++count;
    }
  EXPECT_LT(std::abs(std::sqrt(se_d / count) - std::sqrt(se_c / count)), 1e-2);
}

TEST(MesaPlus, InvalidInputs) {
  EXPECT_THROW(mesa_plus<2>({scalar_robot(0, 0), scalar_robot(1, 1)}, {}), std::invalid_argument);
  EXPECT_THROW(mesa_plus<2>({scalar_robot(0, 0), scalar_robot(1, 1)}, {{0, 0}}), std::invalid_argument);
  EXPECT_THROW(mesa_plus<2>({scalar_robot(0, 0), scalar_robot(0, 1)}, {{0, 1}}), std::invalid_argument);
}
