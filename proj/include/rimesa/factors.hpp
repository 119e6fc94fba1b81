#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rimesa/kernel.hpp"
#include "rimesa/key.hpp"
#include "rimesa/manifold.hpp"
#include "rimesa/noise.hpp"
#include "rimesa/values.hpp"

namespace rimesa {

enum class FactorKind { PriorPose, PriorPoint, BetweenPose, Range, BearingRange, LandmarkObs, BiasedPrior };

inline const char* to_string(FactorKind k) {
  switch (k) {
    case FactorKind::PriorPose: return "prior_pose";
    case FactorKind::PriorPoint: return "prior_point";
    case FactorKind::BetweenPose: return "between_pose";
    case FactorKind::Range: return "range";
    case FactorKind::BearingRange: return "bearing_range";
    case FactorKind::LandmarkObs: return "landmark_obs";
    case FactorKind::BiasedPrior: return "biased_prior";
  }
  return "?";
}

inline constexpr double kJacobianStep = 1e-6;

template <int D>
class Factor {
 public:
  using VarPtrs = std::span<const Variable<D>* const>;

  virtual ~Factor() = default;

  FactorKind kind() const { return kind_; }
  const std::vector<Key>& keys() const { return keys_; }
  const RobustKernel& kernel() const { return kernel_; }
  bool outlier_candidate() const { return outlier_candidate_; }
  std::int64_t measurement_id() const { return measurement_id_; }
  void set_measurement_id(std::int64_t id) { measurement_id_ = id; }

  virtual int dim() const = 0;

  // Unwhitened error e(x); whiten() maps it to the whitened residual and must be linear.
  virtual Eigen::VectorXd raw_error(VarPtrs vars) const = 0;
  virtual Eigen::VectorXd whiten(const Eigen::VectorXd& e) const = 0;
  virtual Eigen::VectorXd raw_difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return a - b;
  }

  Eigen::VectorXd whitened_error(VarPtrs vars) const { return whiten(raw_error(vars)); }

  Eigen::VectorXd whitened_error(const Values<D>& values) const {
    const auto vars = gather(values);
    return whitened_error(VarPtrs(vars));
  }

  double squared_error(const Values<D>& values) const { return whitened_error(values).squaredNorm(); }

  // Jacobian of the whitened residual w.r.t. variable i, by central differences on the retraction.
  virtual Eigen::MatrixXd jacobian(VarPtrs vars, std::size_t i) const {
    check_arity(vars);
    std::vector<const Variable<D>*> local(vars.begin(), vars.end());
    const int n = variable_dof<D>(*vars[i]);
    Eigen::MatrixXd J(dim(), n);
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(n);
    for (int c = 0; c < n; ++c) {
      delta[c] = kJacobianStep;
      const Variable<D> plus = retract<D>(*vars[i], delta);
      const Variable<D> minus = retract<D>(*vars[i], -delta);
      delta[c] = 0.0;
      local[i] = &plus;
      const Eigen::VectorXd ep = raw_error(VarPtrs(local));
      local[i] = &minus;
      const Eigen::VectorXd em = raw_error(VarPtrs(local));
      J.col(c) = whiten(raw_difference(ep, em)) / (2.0 * kJacobianStep);
    }
    return J;
  }

  std::vector<Eigen::MatrixXd> jacobians(VarPtrs vars) const {
    std::vector<Eigen::MatrixXd> out;
    out.reserve(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) out.push_back(jacobian(vars, i));
    return out;
  }

  std::vector<Eigen::MatrixXd> jacobians(const Values<D>& values) const {
    const auto vars = gather(values);
    return jacobians(VarPtrs(vars));
  }

  std::vector<const Variable<D>*> gather(const Values<D>& values) const {
    std::vector<const Variable<D>*> vars;
    vars.reserve(keys_.size());
    for (const auto& k : keys_) vars.push_back(&values.at(k));
    return vars;
  }

 protected:
  Factor(FactorKind kind, std::vector<Key> keys, RobustKernel kernel, bool candidate)
      : kind_(kind), keys_(std::move(keys)), kernel_(kernel), outlier_candidate_(candidate) {}

  static const Pose<D>& as_pose(const Variable<D>* v) {
    const auto* p = std::get_if<Pose<D>>(v);
    if (!p) throw std::invalid_argument("factor: expected a pose variable");
    return *p;
  }

  static const Eigen::VectorXd& as_point(const Variable<D>* v) {
    const auto* p = std::get_if<Eigen::VectorXd>(v);
    if (!p) throw std::invalid_argument("factor: expected a point variable");
    return *p;
  }

  void check_arity(VarPtrs vars) const {
    if (vars.size() != keys_.size()) throw std::invalid_argument("factor: wrong number of variables");
  }

 private:
  FactorKind kind_;
  std::vector<Key> keys_;
  RobustKernel kernel_;
  bool outlier_candidate_ = false;
  std::int64_t measurement_id_ = -1;
};

template <int D>
using FactorPtr = std::shared_ptr<const Factor<D>>;

// Factor whose whitening comes from a fixed Gaussian noise model.
template <int D>
class MeasurementFactor : public Factor<D> {
 public:
  const NoiseModel& noise() const { return noise_; }
  int dim() const override { return noise_.dim(); }
  Eigen::VectorXd whiten(const Eigen::VectorXd& e) const override { return noise_.whiten(e); }

 protected:
  MeasurementFactor(FactorKind kind, std::vector<Key> keys, NoiseModel noise, RobustKernel kernel,
                    bool candidate, int expected_dim)
      : Factor<D>(kind, std::move(keys), kernel, candidate), noise_(std::move(noise)) {
    if (noise_.dim() != expected_dim) {
      throw std::invalid_argument(std::string(to_string(kind)) + ": noise dimension " +
                                  std::to_string(noise_.dim()) + " != " + std::to_string(expected_dim));
    }
  }

 private:
  NoiseModel noise_;
};

template <int D>
class PriorPoseFactor final : public MeasurementFactor<D> {
 public:
  PriorPoseFactor(Key k, Pose<D> m, NoiseModel noise, RobustKernel kernel = {}, bool candidate = false)
      : MeasurementFactor<D>(FactorKind::PriorPose, {k}, std::move(noise), kernel, candidate, kPoseDof<D>),
        m_(m) {}

  const Pose<D>& measurement() const { return m_; }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    return between(m_, this->as_pose(vars[0])).log();
  }

 private:
  Pose<D> m_;
};

template <int D>
class PriorPointFactor final : public MeasurementFactor<D> {
 public:
  PriorPointFactor(Key k, Eigen::VectorXd m, NoiseModel noise, RobustKernel kernel = {}, bool candidate = false)
      : MeasurementFactor<D>(FactorKind::PriorPoint, {k}, std::move(noise), kernel, candidate,
                             static_cast<int>(m.size())),
        m_(std::move(m)) {}

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    const auto& x = this->as_point(vars[0]);
    if (x.size() != m_.size()) throw std::invalid_argument("prior_point: dimension mismatch");
    return x - m_;
  }

  Eigen::MatrixXd jacobian(typename Factor<D>::VarPtrs vars, std::size_t) const override {
    this->check_arity(vars);
    return this->noise().whiten(Eigen::MatrixXd(Eigen::MatrixXd::Identity(m_.size(), m_.size())));
  }

 private:
  Eigen::VectorXd m_;
};

template <int D>
class BetweenPoseFactor final : public MeasurementFactor<D> {
 public:
  BetweenPoseFactor(Key a, Key b, Pose<D> m, NoiseModel noise, RobustKernel kernel = {}, bool candidate = false)
      : MeasurementFactor<D>(FactorKind::BetweenPose, {a, b}, std::move(noise), kernel, candidate, kPoseDof<D>),
        m_(m), m_inv_(m.inverse()) {}

  const Pose<D>& measurement() const { return m_; }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    return (m_inv_ * between(this->as_pose(vars[0]), this->as_pose(vars[1]))).log();
  }

 private:
  Pose<D> m_, m_inv_;
};

// Euclidean distance between the positions of two variables (pose or point).
template <int D>
class RangeFactor final : public MeasurementFactor<D> {
 public:
  RangeFactor(Key a, Key b, double d, NoiseModel noise, RobustKernel kernel = {}, bool candidate = false)
      : MeasurementFactor<D>(FactorKind::Range, {a, b}, std::move(noise), kernel, candidate, 1), d_(d) {
    if (!(d >= 0.0)) throw std::invalid_argument("range: negative measurement");
  }

  double measurement() const { return d_; }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    Eigen::VectorXd e(1);
    e[0] = (position_of<D>(*vars[1]) - position_of<D>(*vars[0])).norm() - d_;
    return e;
  }

  Eigen::MatrixXd jacobian(typename Factor<D>::VarPtrs vars, std::size_t i) const override {
    this->check_arity(vars);
    if ((position_of<D>(*vars[1]) - position_of<D>(*vars[0])).norm() < 1e-9) {
      throw std::domain_error("range: residual not differentiable at zero distance");
    }
    return Factor<D>::jacobian(vars, i);
  }

 private:
  double d_;
};

// Bearing (2D) or azimuth/elevation (3D) plus range, measured in the frame of pose a.
template <int D>
class BearingRangeFactor final : public MeasurementFactor<D> {
 public:
  static constexpr int kDim = D;  // 2D: bearing, range; 3D: azimuth, elevation, range

  BearingRangeFactor(Key a, Key b, Eigen::VectorXd m, NoiseModel noise, RobustKernel kernel = {},
                     bool candidate = false)
      : MeasurementFactor<D>(FactorKind::BearingRange, {a, b}, std::move(noise), kernel, candidate, kDim),
        m_(std::move(m)) {
    if (m_.size() != kDim) throw std::invalid_argument("bearing_range: measurement dimension mismatch");
  }

  const Eigen::VectorXd& measurement() const { return m_; }

  static Eigen::VectorXd predict(const Pose<D>& a, const Translation<D>& target) {
    const Translation<D> p = a.transform_to(target);
    Eigen::VectorXd out(kDim);
    if constexpr (D == 2) {
      out << std::atan2(p.y(), p.x()), p.norm();
    } else {
      out << std::atan2(p.y(), p.x()), std::atan2(p.z(), p.template head<2>().norm()), p.norm();
    }
    return out;
  }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    Eigen::VectorXd e = predict(this->as_pose(vars[0]), position_of<D>(*vars[1])) - m_;
    for (int i = 0; i < kDim - 1; ++i) e[i] = wrap_angle(e[i]);
    return e;
  }

  Eigen::VectorXd raw_difference(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const override {
    Eigen::VectorXd d = a - b;
    for (int i = 0; i < kDim - 1; ++i) d[i] = wrap_angle(d[i]);
    return d;
  }

 private:
  Eigen::VectorXd m_;
};

// Target position expressed in the frame of pose a.
template <int D>
class LandmarkObsFactor final : public MeasurementFactor<D> {
 public:
  LandmarkObsFactor(Key a, Key l, Eigen::VectorXd m, NoiseModel noise, RobustKernel kernel = {},
                    bool candidate = false)
      : MeasurementFactor<D>(FactorKind::LandmarkObs, {a, l}, std::move(noise), kernel, candidate, D),
        m_(std::move(m)) {
    if (m_.size() != D) throw std::invalid_argument("landmark_obs: measurement dimension mismatch");
  }

  const Eigen::VectorXd& measurement() const { return m_; }

  Eigen::VectorXd raw_error(typename Factor<D>::VarPtrs vars) const override {
    this->check_arity(vars);
    return this->as_pose(vars[0]).transform_to(position_of<D>(*vars[1])) - m_;
  }

 private:
  Eigen::VectorXd m_;
};

template <int D>
FactorPtr<D> make_prior_pose(Key k, const Pose<D>& m, NoiseModel n, RobustKernel kern = {}, bool cand = false) {
  return std::make_shared<PriorPoseFactor<D>>(k, m, std::move(n), kern, cand);
}

template <int D>
FactorPtr<D> make_prior_point(Key k, Eigen::VectorXd m, NoiseModel n, RobustKernel kern = {}, bool cand = false) {
  return std::make_shared<PriorPointFactor<D>>(k, std::move(m), std::move(n), kern, cand);
}

template <int D>
FactorPtr<D> make_between(Key a, Key b, const Pose<D>& m, NoiseModel n, RobustKernel kern = {}, bool cand = false) {
  return std::make_shared<BetweenPoseFactor<D>>(a, b, m, std::move(n), kern, cand);
}

template <int D>
FactorPtr<D> make_range(Key a, Key b, double d, NoiseModel n, RobustKernel kern = {}, bool cand = false) {
  return std::make_shared<RangeFactor<D>>(a, b, d, std::move(n), kern, cand);
}

template <int D>
FactorPtr<D> make_bearing_range(Key a, Key b, Eigen::VectorXd m, NoiseModel n, RobustKernel kern = {},
                                bool cand = false) {
  return std::make_shared<BearingRangeFactor<D>>(a, b, std::move(m), std::move(n), kern, cand);
}

template <int D>
FactorPtr<D> make_landmark_obs(Key a, Key l, Eigen::VectorXd m, NoiseModel n, RobustKernel kern = {},
                               bool cand = false) {
  return std::make_shared<LandmarkObsFactor<D>>(a, l, std::move(m), std::move(n), kern, cand);
}

}  // namespace rimesa
