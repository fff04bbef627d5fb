#pragma once

// The conventional way of getting the SPRT characteristics: one kernel
// matrix and one factorization per hypothesis, with K1 tabulated directly.
// Kept only as a comparison point for benchmarks and as a cross-check for
// the single-factorization solver; nothing in the solvers calls it.

#include <Eigen/Dense>

#include <cmath>

#include "cusumkit/discretization.hpp"
#include "cusumkit/instrumentation.hpp"
#include "cusumkit/model.hpp"
#include "cusumkit/sprt.hpp"

namespace cusumkit::baseline {

/// entry(i, j) = w_j * K_i(x_j - x_i) for the requested hypothesis.
template <LogLrModel Model>
Eigen::MatrixXd kernel_entries(const Model& model, const Grid& grid, Hypothesis hyp) {
  const int n = grid.size();
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      k(i, j) = grid.weight(j) * log_lr_pdf(model, hyp, grid.node(j) - grid.node(i));
    }
  }
  ++instrumentation::counters().assemblies;
  return k;
}

/// Columns (N_i, P_i) at the nodes from (I - K_i) [N_i, P_i] = [1, F_i(a - x)].
template <LogLrModel Model>
Eigen::MatrixXd solve_hypothesis(const Model& model, const Grid& grid, double a, Hypothesis hyp) {
  const int n = grid.size();
  const Eigen::MatrixXd k = kernel_entries(model, grid, hyp);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(n, n) - k);
  ++instrumentation::counters().factorizations;
  Eigen::MatrixXd rhs(n, 2);
  for (int j = 0; j < n; ++j) {
    rhs(j, 0) = 1.0;
    rhs(j, 1) = model.cdf(hyp, a - grid.node(j));
  }
  Eigen::MatrixXd out(n, 2);
  for (int c = 0; c < 2; ++c) out.col(c) = lu.solve(Eigen::VectorXd(rhs.col(c)));
  return out;
}

/// (N0, P0, N1, P1) at the nodes using two independent factorizations.
template <LogLrModel Model>
Eigen::MatrixXd solve_characteristics_separately(const SprtConfig<Model>& config, const Grid& grid) {
  config.validate();
  const Eigen::MatrixXd h0 = solve_hypothesis(config.model, grid, config.a, Hypothesis::H0);
  const Eigen::MatrixXd h1 = solve_hypothesis(config.model, grid, config.a, Hypothesis::H1);
  Eigen::MatrixXd out(grid.size(), 4);
  out << h0, h1;
  return out;
}

/// Same columns from the single-factorization solver, for side-by-side checks.
template <LogLrModel Model>
Eigen::MatrixXd solve_characteristics_grouped(const SprtConfig<Model>& config, const Grid& grid) {
  const auto sol = solve_characteristics(config, grid);
  Eigen::MatrixXd out(grid.size(), 4);
  out << sol.n0(), sol.p0(), sol.n1(), sol.p1();
  return out;
}

}  // namespace cusumkit::baseline
