#pragma once

// ASN and OC functions of Wald's SPRT under both hypotheses from a single
// factorization of (I - K0).  The H1 pair is solved in the transformed
// unknowns e^x N1(x) and e^x P1(x), whose equations carry the kernel K0 and
// the inhomogeneous terms e^x and e^x F1(a - x).

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "cusumkit/discretization.hpp"
#include "cusumkit/errors.hpp"
#include "cusumkit/instrumentation.hpp"
#include "cusumkit/model.hpp"

namespace cusumkit {

/// Largest accepted upper boundary; e^b must stay comfortably finite.
inline constexpr double kMaxUpperBoundary = 500.0;

template <LogLrModel Model = ObservationModel>
struct SprtConfig {
  double a = 0.0;  ///< lower boundary, log-LR units
  double b = 1.0;  ///< upper boundary, log-LR units
  Model model;

  void validate() const {
    detail::require(std::isfinite(a) && std::isfinite(b), "SPRT boundaries must be finite");
    detail::require(a <= 0.0 && 0.0 < b, "SPRT boundaries must satisfy a <= 0 < b (got a=" +
                                             std::to_string(a) + ", b=" + std::to_string(b) + ")");
    detail::require(b <= kMaxUpperBoundary,
                    "upper boundary b must not exceed " + std::to_string(kMaxUpperBoundary) +
                        " log-LR units (e^b would overflow)");
  }
};

/// N_i(x) = E_i[stopping time], P_i(x) = Pr_i(exit through the lower boundary).
struct SprtPoint {
  double x = 0.0;
  double n0 = 0.0;
  double p0 = 0.0;
  double n1 = 0.0;
  double p1 = 0.0;
};

template <LogLrModel Model = ObservationModel>
class SprtSolution {
 public:
  SprtSolution(SprtConfig<Model> config, std::shared_ptr<const KernelMatrix<Model>> kernel,
               Eigen::MatrixXd transformed)
      : config_(std::move(config)), kernel_(std::move(kernel)), transformed_(std::move(transformed)) {
    const int n = kernel_->size();
    n0_ = transformed_.col(0);
    p0_ = transformed_.col(1);
    n1_.resize(n);
    p1_.resize(n);
    for (int j = 0; j < n; ++j) {
      const double damp = std::exp(-kernel_->grid().node(j));
      n1_(j) = damp * transformed_(j, 2);
      p1_(j) = damp * transformed_(j, 3);
    }
  }

  const SprtConfig<Model>& config() const { return config_; }
  const Grid& grid() const { return kernel_->grid(); }
  const KernelMatrix<Model>& kernel() const { return *kernel_; }

  const Eigen::VectorXd& n0() const { return n0_; }
  const Eigen::VectorXd& p0() const { return p0_; }
  const Eigen::VectorXd& n1() const { return n1_; }
  const Eigen::VectorXd& p1() const { return p1_; }

  /// Columns (N0, P0, e^x N1, e^x P1) at the nodes, as returned by the solve.
  const Eigen::MatrixXd& transformed() const { return transformed_; }

  /// Nystrom extension of all four functions to an arbitrary x in [a, b].
  SprtPoint evaluate(double x) const {
    detail::require(grid().contains(x), "SPRT evaluation point " + std::to_string(x) +
                                            " outside [a, b] = [" + std::to_string(config_.a) +
                                            ", " + std::to_string(config_.b) + "]");
    const Eigen::RowVectorXd row = kernel_->extension_row(x);
    const double a = config_.a;
    const double ex = std::exp(x);
    const auto& m = config_.model;

    SprtPoint out;
    out.x = x;
    out.n0 = 1.0 + row.dot(transformed_.col(0));
    out.p0 = m.cdf(Hypothesis::H0, a - x) + row.dot(transformed_.col(1));
    out.n1 = (ex + row.dot(transformed_.col(2))) / ex;
    out.p1 = (ex * m.cdf(Hypothesis::H1, a - x) + row.dot(transformed_.col(3))) / ex;
    return out;
  }

 private:
  SprtConfig<Model> config_;
  std::shared_ptr<const KernelMatrix<Model>> kernel_;
  Eigen::MatrixXd transformed_;
  Eigen::VectorXd n0_, p0_, n1_, p1_;
};

/// The four inhomogeneous terms 1, F0(a-x), e^x, e^x F1(a-x) at the nodes.
template <LogLrModel Model>
Eigen::MatrixXd sprt_rhs(const Model& model, const Grid& grid, double a) {
  const int n = grid.size();
  Eigen::MatrixXd rhs(n, 4);
  for (int j = 0; j < n; ++j) {
    const double x = grid.node(j);
    const double ex = std::exp(x);
    rhs(j, 0) = 1.0;
    rhs(j, 1) = model.cdf(Hypothesis::H0, a - x);
    rhs(j, 2) = ex;
    rhs(j, 3) = ex * model.cdf(Hypothesis::H1, a - x);
  }
  return rhs;
}

namespace detail {

inline void require_grid_matches(const Grid& grid, double a, double b) {
  require(grid.a() == a && grid.b() == b,
          "grid interval [" + std::to_string(grid.a()) + ", " + std::to_string(grid.b()) +
              "] does not match the required interval [" + std::to_string(a) + ", " +
              std::to_string(b) + "]");
}

}  // namespace detail

/// Solve against an already factorized kernel (no new assembly).
template <LogLrModel Model>
SprtSolution<Model> solve_characteristics(const SprtConfig<Model>& config,
                                          std::shared_ptr<const KernelMatrix<Model>> kernel) {
  config.validate();
  detail::require_grid_matches(kernel->grid(), config.a, config.b);
  Eigen::MatrixXd u = kernel->solve(sprt_rhs(config.model, kernel->grid(), config.a));
  return SprtSolution<Model>(config, std::move(kernel), std::move(u));
}

/// Assembles K0 on the grid, factorizes once, and solves all four equations.
template <LogLrModel Model>
SprtSolution<Model> solve_characteristics(const SprtConfig<Model>& config, const Grid& grid) {
  config.validate();
  detail::require_grid_matches(grid, config.a, config.b);
  return solve_characteristics(config, std::make_shared<const KernelMatrix<Model>>(config.model, grid));
}

template <LogLrModel Model>
SprtSolution<Model> solve_characteristics(const SprtConfig<Model>& config,
                                          int n = kDefaultGridSize) {
  config.validate();
  return solve_characteristics(config, build_grid(config.a, config.b, n));
}

}  // namespace cusumkit
