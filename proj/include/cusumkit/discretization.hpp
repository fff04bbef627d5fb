#pragma once

// Nystrom discretization of  u(x) = v(x) + \int_a^b K0(y - x) u(y) dy  on a
// Gauss-Legendre grid.  The kernel matrix is assembled and LU-factorized once;
// any number of inhomogeneous terms are then solved against that one
// factorization.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cusumkit/errors.hpp"
#include "cusumkit/instrumentation.hpp"
#include "cusumkit/model.hpp"

namespace cusumkit {

inline constexpr int kDefaultGridSize = 256;
inline constexpr int kMaxGridSize = 4096;

/// Systems whose reciprocal condition estimate falls below this are rejected.
inline constexpr double kMinReciprocalCondition = 1e-12;

class Grid {
 public:
  /// Gauss-Legendre rule with n nodes mapped affinely onto [a, b].
  static Grid gauss_legendre(double a, double b, int n) {
    detail::require(std::isfinite(a) && std::isfinite(b), "grid endpoints must be finite");
    detail::require(a < b, "grid requires a < b (got a=" + std::to_string(a) +
                               ", b=" + std::to_string(b) + ")");
    detail::require(n >= 2, "grid requires n >= 2 (got " + std::to_string(n) + ")");
    detail::require(n <= kMaxGridSize,
                    "grid size n is capped at " + std::to_string(kMaxGridSize));

    std::vector<double> nodes(static_cast<std::size_t>(n));
    std::vector<double> weights(static_cast<std::size_t>(n));
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
      // Newton on P_n starting from the Tricomi-style asymptotic guess.
      double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int iter = 0; iter < 100; ++iter) {
        double p1 = 1.0;
        double p2 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p3 = p2;
          p2 = p1;
          p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
        }
        dp = n * (z * p1 - p2) / (z * z - 1.0);
        const double step = p1 / dp;
        z -= step;
        if (std::abs(step) <= 1e-15) break;
      }
      const double w = 2.0 * half / ((1.0 - z * z) * dp * dp);
      const auto lo = static_cast<std::size_t>(i);
      const auto hi = static_cast<std::size_t>(n - 1 - i);
      nodes[lo] = mid - half * z;
      nodes[hi] = mid + half * z;
      weights[lo] = w;
      weights[hi] = w;
    }
    if (n % 2 == 1) nodes[static_cast<std::size_t>(n / 2)] = mid;
    return Grid(a, b, std::move(nodes), std::move(weights));
  }

  double a() const { return a_; }
  double b() const { return b_; }
  int size() const { return static_cast<int>(nodes_.size()); }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }
  double node(int j) const { return nodes_[static_cast<std::size_t>(j)]; }
  double weight(int j) const { return weights_[static_cast<std::size_t>(j)]; }

  bool contains(double x) const { return x >= a_ && x <= b_; }

  /// Nodes and weights supplied by the caller (e.g. a uniform rule in tests).
  static Grid from_rule(double a, double b, std::vector<double> nodes, std::vector<double> weights) {
    detail::require(a < b, "grid requires a < b");
    detail::require(nodes.size() >= 2 && nodes.size() == weights.size(),
                    "grid needs n >= 2 nodes with one weight each");
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      detail::require(nodes[j] >= a && nodes[j] <= b, "grid node outside [a,b]");
      detail::require(weights[j] > 0.0, "grid weights must be positive");
      if (j > 0) detail::require(nodes[j] > nodes[j - 1], "grid nodes must be strictly increasing");
    }
    return Grid(a, b, std::move(nodes), std::move(weights));
  }

 private:
  Grid(double a, double b, std::vector<double> nodes, std::vector<double> weights)
      : a_(a), b_(b), nodes_(std::move(nodes)), weights_(std::move(weights)) {}

  double a_;
  double b_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

inline Grid build_grid(double a, double b, int n = kDefaultGridSize) {
  return Grid::gauss_legendre(a, b, n);
}

/// entry(i, j) = w_j * K0(x_j - x_i), together with a cached LU factorization
/// of (I - entries).  Immutable once built; solves never touch the factors.
template <LogLrModel Model>
class KernelMatrix {
 public:
  KernelMatrix(const Model& model, Grid grid) : model_(model), grid_(std::move(grid)) {
    const int n = grid_.size();
    entries_.resize(n, n);
    for (int i = 0; i < n; ++i) {
      const double xi = grid_.node(i);
      for (int j = 0; j < n; ++j) {
        entries_(i, j) = grid_.weight(j) * model_.kernel0(grid_.node(j) - xi);
      }
    }
    ++instrumentation::counters().assemblies;

    lu_.compute(Eigen::MatrixXd::Identity(n, n) - entries_);
    ++instrumentation::counters().factorizations;
    rcond_ = lu_.rcond();
    if (!(rcond_ >= kMinReciprocalCondition)) {
      throw SingularSystemError(
          "I - K is numerically singular (reciprocal condition estimate " +
              std::to_string(rcond_) + "); the kernel's spectral radius is ~1 on this interval",
          rcond_);
    }
  }

  const Model& model() const { return model_; }
  const Grid& grid() const { return grid_; }
  int size() const { return grid_.size(); }
  const Eigen::MatrixXd& entries() const { return entries_; }
  double rcond() const { return rcond_; }

  /// Solves (I - K) U = rhs for every column of rhs with the cached factors.
  /// Columns are substituted one at a time so that a grouped call is bitwise
  /// identical to the equivalent sequence of single-column calls.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    detail::require(rhs.rows() == size(), "right-hand side has " + std::to_string(rhs.rows()) +
                                              " rows, expected " + std::to_string(size()));
    Eigen::MatrixXd out(rhs.rows(), rhs.cols());
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
      out.col(c) = solve_column(rhs.col(c));
    }
    return out;
  }

  Eigen::VectorXd solve_column(const Eigen::VectorXd& rhs) const {
    detail::require(rhs.size() == size(), "right-hand side length mismatch");
    return lu_.solve(rhs);
  }

  /// Row r with r_j = w_j K0(x_j - x): the quadrature of the integral term at x.
  Eigen::RowVectorXd extension_row(double x) const {
    const int n = size();
    Eigen::RowVectorXd row(n);
    for (int j = 0; j < n; ++j) row(j) = grid_.weight(j) * model_.kernel0(grid_.node(j) - x);
    return row;
  }

  /// u(x) = v(x) + sum_j w_j K0(x_j - x) u_j, the solved equation read at x.
  double extend(std::span<const double> node_values, double v_at_x, double x) const {
    detail::require(grid_.contains(x), "evaluation point " + std::to_string(x) + " outside [" +
                                           std::to_string(grid_.a()) + ", " +
                                           std::to_string(grid_.b()) + "]");
    detail::require(static_cast<int>(node_values.size()) == size(), "node value count mismatch");
    double acc = 0.0;
    for (int j = 0; j < size(); ++j) {
      acc += grid_.weight(j) * model_.kernel0(grid_.node(j) - x) *
             node_values[static_cast<std::size_t>(j)];
    }
    return v_at_x + acc;
  }

 private:
  Model model_;
  Grid grid_;
  Eigen::MatrixXd entries_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double rcond_ = 0.0;
};

template <LogLrModel Model>
KernelMatrix<Model> assemble_kernel(const Model& model, const Grid& grid) {
  return KernelMatrix<Model>(model, grid);
}

/// One factorization, m right-hand sides.
template <LogLrModel Model>
std::vector<Eigen::VectorXd> solve_grouped(const KernelMatrix<Model>& kernel,
                                           const std::vector<Eigen::VectorXd>& rhs_columns) {
  Eigen::MatrixXd rhs(kernel.size(), static_cast<Eigen::Index>(rhs_columns.size()));
  for (std::size_t c = 0; c < rhs_columns.size(); ++c) {
    detail::require(rhs_columns[c].size() == kernel.size(), "right-hand side length mismatch");
    rhs.col(static_cast<Eigen::Index>(c)) = rhs_columns[c];
  }
  const Eigen::MatrixXd u = kernel.solve(rhs);
  std::vector<Eigen::VectorXd> out;
  out.reserve(rhs_columns.size());
  for (Eigen::Index c = 0; c < u.cols(); ++c) out.emplace_back(u.col(c));
  return out;
}

template <LogLrModel Model, class Inhomogeneous>
  requires std::invocable<Inhomogeneous, double>
double nystrom_extend(const KernelMatrix<Model>& kernel, const Eigen::VectorXd& node_values,
                      Inhomogeneous&& v, double x) {
  detail::require(kernel.grid().contains(x), "evaluation point " + std::to_string(x) +
                                                 " outside the grid interval");
  return kernel.extend(std::span<const double>(node_values.data(),
                                               static_cast<std::size_t>(node_values.size())),
                       std::invoke(v, x), x);
}

}  // namespace cusumkit
