#pragma once

#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

namespace rimesa {

// Quantile of the chi-squared distribution with `dim` degrees of freedom.
inline double chi2_threshold(int dim, double T) {
  if (dim <= 0) throw std::invalid_argument("chi2_threshold: dim must be positive");
  if (!(T > 0.0 && T < 1.0)) throw std::invalid_argument("chi2_threshold: T must lie in (0, 1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dim), T);
}

inline constexpr double kInlierProbability = 0.95;
inline constexpr double kCalibratedInfluence = 0.1;
// Final-mu influence below this marks a graduated factor as an outlier.
inline constexpr double kOutlierInfluence = 0.5;

enum class KernelType { None, GemanMcClure, Graduated };

// Kernels act on the squared whitened residual s = r^2.
//   GemanMcClure(c): rho(s) = c^2 s / (c^2 + s)
//   Graduated(c, mu): rho(s) = s * (c^2 / (c^2 + s))^mu
// The graduated family is quadratic at mu = 0 and equals GemanMcClure(c) at mu = 1.
struct RobustKernel {
  KernelType type = KernelType::None;
  double shape = 0.0;
  double mu = 0.0;

  static RobustKernel none() { return {}; }

  static RobustKernel geman_mcclure(double c) {
    if (!(c > 0.0)) throw std::invalid_argument("geman_mcclure: shape must be positive");
    return {KernelType::GemanMcClure, c, 1.0};
  }

  static RobustKernel graduated(double shape, double mu) {
    if (!(shape > 0.0)) throw std::invalid_argument("graduated: shape must be positive");
    if (!(mu >= 0.0 && mu <= 1.0)) throw std::invalid_argument("graduated: mu outside [0, 1]");
    return {KernelType::Graduated, shape, mu};
  }

  // Shape for which a residual norm r = chi2_dim(0.95) has influence 0.1 at mu = 1.
  static double calibrated_shape(int dim) {
    const double r = chi2_threshold(dim, kInlierProbability);
    const double s = r * r;
    const double g = std::sqrt(kCalibratedInfluence);
    return std::sqrt(g * s / (1.0 - g));
  }

  static RobustKernel graduated_for_dim(int dim, double mu) {
    return graduated(calibrated_shape(dim), mu);
  }

  bool is_robust() const { return type != KernelType::None; }

  RobustKernel with_mu(double m) const {
    RobustKernel k = *this;
    if (type == KernelType::Graduated) k.mu = m;
    return k;
  }

  double value(double s) const {
    if (s < 0.0) throw std::invalid_argument("kernel: negative squared residual");
    const double c2 = shape * shape;
    switch (type) {
      case KernelType::None:
        return s;
      case KernelType::GemanMcClure:
        return c2 * s / (c2 + s);
      case KernelType::Graduated:
        if (mu == 0.0) return s;
        return s * std::pow(c2 / (c2 + s), mu);
    }
    return s;
  }

  // d rho / d s
  double influence(double s) const {
    if (s < 0.0) throw std::invalid_argument("kernel: negative squared residual");
    const double c2 = shape * shape;
    switch (type) {
      case KernelType::None:
        return 1.0;
      case KernelType::GemanMcClure: {
        const double d = c2 + s;
        return c2 * c2 / (d * d);
      }
      case KernelType::Graduated: {
        if (mu == 0.0) return 1.0;
        const double d = c2 + s;
        return std::pow(c2 / d, mu) * (c2 + (1.0 - mu) * s) / d;
      }
    }
    return 1.0;
  }
};

inline double kernel_value(const RobustKernel& k, double r2) { return k.value(r2); }
inline double kernel_influence(const RobustKernel& k, double r2) { return k.influence(r2); }

}  // namespace rimesa
