#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace rimesa {

// Gaussian noise model stored as its square-root information matrix W,
// so that whiten(r) = W r and W^T W = Sigma^{-1}.
class NoiseModel {
 public:
  NoiseModel() = default;

  static NoiseModel from_sigmas(const Eigen::VectorXd& sigmas) {
    if (sigmas.size() == 0) throw std::invalid_argument("noise model: empty sigmas");
    for (Eigen::Index i = 0; i < sigmas.size(); ++i) {
      if (!(sigmas[i] > 0.0) || !std::isfinite(sigmas[i])) {
        throw std::invalid_argument("noise model: sigmas must be positive and finite");
      }
    }
    NoiseModel m;
    m.sigmas_ = sigmas;
    m.sqrt_info_ = sigmas.cwiseInverse().asDiagonal();
    m.diagonal_ = true;
    return m;
  }

  static NoiseModel isotropic(int dim, double sigma) {
    return from_sigmas(Eigen::VectorXd::Constant(dim, sigma));
  }

  static NoiseModel from_covariance(const Eigen::MatrixXd& cov) {
    if (cov.rows() != cov.cols() || cov.rows() == 0) {
      throw std::invalid_argument("noise model: covariance must be square");
    }
    if (!cov.isApprox(cov.transpose(), 1e-12)) {
      throw std::invalid_argument("noise model: covariance must be symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("noise model: covariance not positive definite");
    }
    NoiseModel m;
    const Eigen::MatrixXd L = llt.matrixL();
    m.sqrt_info_ = L.triangularView<Eigen::Lower>().solve(
        Eigen::MatrixXd::Identity(cov.rows(), cov.cols()));
    m.sigmas_ = cov.diagonal().cwiseSqrt();
    m.diagonal_ = false;
    return m;
  }

  int dim() const { return static_cast<int>(sqrt_info_.rows()); }
  bool is_diagonal() const { return diagonal_; }
  const Eigen::VectorXd& sigmas() const { return sigmas_; }
  const Eigen::MatrixXd& sqrt_information() const { return sqrt_info_; }

  Eigen::VectorXd whiten(const Eigen::VectorXd& r) const {
    check(r.size());
    return sqrt_info_ * r;
  }

  Eigen::MatrixXd whiten(const Eigen::MatrixXd& J) const {
    check(J.rows());
    return sqrt_info_ * J;
  }

  Eigen::VectorXd unwhiten(const Eigen::VectorXd& w) const {
    check(w.size());
    return sqrt_info_.triangularView<Eigen::Lower>().solve(w);
  }

 private:
  void check(Eigen::Index n) const {
    if (n != sqrt_info_.rows()) throw std::invalid_argument("noise model: dimension mismatch");
  }

  Eigen::VectorXd sigmas_;
  Eigen::MatrixXd sqrt_info_;
  bool diagonal_ = true;
};

}  // namespace rimesa
