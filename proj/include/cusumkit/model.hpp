#pragma once

// Observation models, described entirely through the pdf K0 of the
// log-likelihood ratio under H0 and the two cdfs F0, F1.  The H1 pdf is never
// given its own formula: K1(z) = e^z * K0(z) (Wald's likelihood ratio identity
// pushed through the log transform).

#include <cmath>
#include <concepts>
#include <numbers>
#include <random>
#include <string>

#include "cusumkit/errors.hpp"

namespace cusumkit {

enum class Hypothesis { H0, H1 };

inline constexpr int index_of(Hypothesis h) { return h == Hypothesis::H0 ? 0 : 1; }

inline std::string to_string(Hypothesis h) { return h == Hypothesis::H0 ? "H0" : "H1"; }

enum class ModelKind { GaussianShift };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::GaussianShift:
      return "gaussian-shift";
  }
  return "unknown";
}

/// What the solvers need from a model: the H0 log-LR density, both cdfs, and
/// a way to draw log-LR increments for simulation.
template <class M>
concept LogLrModel = requires(const M& m, Hypothesis h, double z, std::mt19937_64& rng) {
  { m.kernel0(z) } -> std::convertible_to<double>;
  { m.cdf(h, z) } -> std::convertible_to<double>;
  { m.sample(h, rng) } -> std::convertible_to<double>;
};

namespace detail {

inline double normal_pdf(double z, double mean, double sd) {
  const double u = (z - mean) / sd;
  return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

inline double normal_cdf(double z, double mean, double sd) {
  return 0.5 * std::erfc(-(z - mean) / (sd * std::numbers::sqrt2));
}

}  // namespace detail

/// X ~ N(0,1) before the change and N(theta,1) after it, so that
/// log LR = theta*X - theta^2/2.  Under H0 the log-LR is N(-theta^2/2, theta^2).
class ObservationModel {
 public:
  static ObservationModel gaussian_shift(double theta) {
    detail::require(std::isfinite(theta), "theta must be finite");
    detail::require(theta != 0.0, "theta must be nonzero (pre- and post-change laws coincide)");
    return ObservationModel(ModelKind::GaussianShift, theta);
  }

  ModelKind kind() const { return kind_; }
  double theta() const { return theta_; }

  /// K0(z): density of the log-LR under H0.
  double kernel0(double z) const {
    const double t2 = theta_ * theta_;
    return detail::normal_pdf(z, -0.5 * t2, std::abs(theta_));
  }

  /// F_i(z) = Pr_i(log LR <= z).
  double cdf(Hypothesis h, double z) const {
    const double t2 = theta_ * theta_;
    const double mean = h == Hypothesis::H0 ? -0.5 * t2 : 0.5 * t2;
    return detail::normal_cdf(z, mean, std::abs(theta_));
  }

  /// One log-LR increment: draw the raw observation under the hypothesis and
  /// map it through theta*x - theta^2/2.
  template <class Rng>
  double sample(Hypothesis h, Rng& rng) const {
    std::normal_distribution<double> gauss(h == Hypothesis::H0 ? 0.0 : theta_, 1.0);
    const double x = gauss(rng);
    return theta_ * x - 0.5 * theta_ * theta_;
  }

  friend bool operator==(const ObservationModel&, const ObservationModel&) = default;

 private:
  ObservationModel(ModelKind kind, double theta) : kind_(kind), theta_(theta) {}

  ModelKind kind_;
  double theta_;
};

static_assert(LogLrModel<ObservationModel>);

/// K1(z) = e^z K0(z).  Where K0 underflows the product is taken to be 0; for
/// very large z the exponent is folded into log K0 to avoid inf * tiny.
inline double kernel1_from_kernel0(double z, double k0) {
  if (k0 == 0.0) return 0.0;
  if (z < 700.0) return std::exp(z) * k0;
  return std::exp(z + std::log(k0));
}

template <LogLrModel Model>
double log_lr_pdf(const Model& model, Hypothesis h, double z) {
  const double k0 = model.kernel0(z);
  return h == Hypothesis::H0 ? k0 : kernel1_from_kernel0(z, k0);
}

template <LogLrModel Model>
double log_lr_cdf(const Model& model, Hypothesis h, double z) {
  return model.cdf(h, z);
}

template <LogLrModel Model, class Rng>
double sample_log_lr(const Model& model, Hypothesis h, Rng& rng) {
  return model.sample(h, rng);
}

}  // namespace cusumkit
