#pragma once

// Zero-state (headstarted) CUSUM performance: ARLs by two independent routes,
// the run-length survival function, and run-length moments.  Every routine
// builds at most one K0 matrix on [0, h]; the H1 quantities are carried in
// the transformed space e^x * (.) so they reuse that matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cusumkit/discretization.hpp"
#include "cusumkit/errors.hpp"
#include "cusumkit/instrumentation.hpp"
#include "cusumkit/model.hpp"
#include "cusumkit/sprt.hpp"

namespace cusumkit {

/// P_i(0;0,h) at or above 1 - this makes the renewal sum meaningless.
inline constexpr double kDegenerateOcMargin = 1e-12;

inline constexpr std::int64_t kMaxSurvivalHorizon = 1'000'000;

template <LogLrModel Model = ObservationModel>
struct CusumConfig {
  double h = 1.0;  ///< control limit, log-LR units
  double w = 0.0;  ///< headstart, 0 <= w < h
  Model model;

  void validate() const {
    detail::require(std::isfinite(h) && std::isfinite(w), "CUSUM h and w must be finite");
    detail::require(h > 0.0, "control limit h must be positive (got " + std::to_string(h) + ")");
    detail::require(h <= kMaxUpperBoundary,
                    "control limit h must not exceed " + std::to_string(kMaxUpperBoundary));
    detail::require(0.0 <= w && w < h, "headstart must satisfy 0 <= w < h (got w=" +
                                           std::to_string(w) + ", h=" + std::to_string(h) + ")");
  }

  SprtConfig<Model> sprt() const { return {0.0, h, model}; }
};

enum class ArlMethod { ViaSprt, Direct };

inline std::string to_string(ArlMethod m) { return m == ArlMethod::ViaSprt ? "via-sprt" : "direct"; }

struct SolverDiagnostics {
  int grid_size = 0;
  double rcond = 0.0;
  std::int64_t assemblies = 0;
  std::int64_t factorizations = 0;
};

struct ArlResult {
  double arl0 = 0.0;
  double arl1 = 0.0;
  ArlMethod method = ArlMethod::ViaSprt;
  SolverDiagnostics diagnostics;
};

struct SurvivalResult {
  std::vector<double> survival0;  ///< Pr_0(C > n), n = 0..n_max
  std::vector<double> survival1;  ///< Pr_1(C > n)
  SolverDiagnostics diagnostics;
};

struct MomentTable {
  int k_max = 0;
  std::array<std::vector<double>, 2> moments;  ///< moments[i][k-1] = E_i[C^k]
  std::array<double, 2> rho{};                 ///< geometric tail ratio per hypothesis
  std::array<std::int64_t, 2> steps{};         ///< survival terms summed before the tail
  SolverDiagnostics diagnostics;

  double moment(Hypothesis h, int k) const {
    return moments[static_cast<std::size_t>(index_of(h))][static_cast<std::size_t>(k - 1)];
  }
};

namespace detail {

template <LogLrModel Model>
std::shared_ptr<const KernelMatrix<Model>> cusum_kernel(const CusumConfig<Model>& config,
                                                        const Grid& grid) {
  config.validate();
  require_grid_matches(grid, 0.0, config.h);
  return std::make_shared<const KernelMatrix<Model>>(config.model, grid);
}

template <LogLrModel Model>
SolverDiagnostics diagnostics_for(const KernelMatrix<Model>& kernel,
                                  const instrumentation::Scope& scope) {
  const auto d = scope.delta();
  return {kernel.size(), kernel.rcond(), d.assemblies, d.factorizations};
}

template <LogLrModel Model>
ArlResult arl_via_sprt_on(const CusumConfig<Model>& config,
                          std::shared_ptr<const KernelMatrix<Model>> kernel) {
  const auto sol = solve_characteristics(config.sprt(), std::move(kernel));
  const SprtPoint at0 = sol.evaluate(0.0);
  const SprtPoint atw = sol.evaluate(config.w);

  auto renewal = [](double n_zero, double p_zero, double p_w, double n_w, const char* label) {
    if (!(p_zero < 1.0 - kDegenerateOcMargin)) {
      throw DegenerateGeometryError(std::string("P_") + label + "(0;0,h) = " +
                                    std::to_string(p_zero) +
                                    " is numerically 1; h is too small or the grid too coarse");
    }
    return n_zero * p_w / (1.0 - p_zero) + n_w;
  };
  ArlResult out;
  out.method = ArlMethod::ViaSprt;
  out.arl0 = renewal(at0.n0, at0.p0, atw.p0, atw.n0, "0");
  out.arl1 = renewal(at0.n1, at0.p1, atw.p1, atw.n1, "1");
  return out;
}

/// Page's equation with the reflection atom F_i(-x) L_i(0).  The extra
/// collocation row at x = 0 is eliminated through the Schur complement so
/// that only the n x n factorization of (I - K0) is needed.
template <LogLrModel Model>
ArlResult arl_direct_on(const CusumConfig<Model>& config, const KernelMatrix<Model>& kernel,
                        bool include_atom) {
  const Grid& grid = kernel.grid();
  const auto& m = config.model;
  const int n = grid.size();
  const double atom_scale = include_atom ? 1.0 : 0.0;

  // Columns: v0 = 1, c0 = F0(-x), v1 = e^x, c1 = e^x F1(-x).
  Eigen::MatrixXd rhs(n, 4);
  for (int j = 0; j < n; ++j) {
    const double x = grid.node(j);
    const double ex = std::exp(x);
    rhs(j, 0) = 1.0;
    rhs(j, 1) = atom_scale * m.cdf(Hypothesis::H0, -x);
    rhs(j, 2) = ex;
    rhs(j, 3) = atom_scale * ex * m.cdf(Hypothesis::H1, -x);
  }
  const Eigen::MatrixXd sol = kernel.solve(rhs);
  const Eigen::RowVectorXd row0 = kernel.extension_row(0.0);
  const Eigen::RowVectorXd roww = kernel.extension_row(config.w);
  const double w = config.w;
  const double ew = std::exp(w);

  std::array<double, 2> at_w{};
  for (int i = 0; i < 2; ++i) {
    const Hypothesis hyp = i == 0 ? Hypothesis::H0 : Hypothesis::H1;
    const auto p = sol.col(2 * i);
    const auto q = sol.col(2 * i + 1);
    // Both transformed inhomogeneous terms equal 1 at x = 0.
    const double atom_at_zero = atom_scale * m.cdf(hyp, 0.0);
    const double denom = 1.0 - atom_at_zero - row0.dot(q);
    if (!(std::abs(denom) > kDegenerateOcMargin)) {
      throw SingularSystemError("augmented CUSUM system is singular at the x = 0 row", denom);
    }
    const double u_zero = (1.0 + row0.dot(p)) / denom;
    const double v_w = i == 0 ? 1.0 : ew;
    const double atom_w = atom_scale * (i == 0 ? 1.0 : ew) * m.cdf(hyp, -w);
    const double u_w = v_w + atom_w * u_zero + roww.dot(p) + roww.dot(q) * u_zero;
    at_w[static_cast<std::size_t>(i)] = i == 0 ? u_w : u_w / ew;
  }
  ArlResult out;
  out.method = ArlMethod::Direct;
  out.arl0 = at_w[0];
  out.arl1 = at_w[1];
  return out;
}

/// Iterates v^{n+1}(x) = F(-x) v^n(0) + \int_0^h K(y-x) v^n(y) dy for both
/// hypotheses at once: column 0 holds v under H0, column 1 holds e^x v under
/// H1, and both are advanced by the same K0 matrix.
template <LogLrModel Model>
class SurvivalRecursion {
 public:
  SurvivalRecursion(const CusumConfig<Model>& config, const KernelMatrix<Model>& kernel)
      : kernel_(kernel), w_(config.w) {
    const Grid& grid = kernel.grid();
    const auto& m = config.model;
    const int n = grid.size();
    atom_.resize(n, 2);
    state_.resize(n, 2);
    for (int j = 0; j < n; ++j) {
      const double x = grid.node(j);
      const double ex = std::exp(x);
      atom_(j, 0) = m.cdf(Hypothesis::H0, -x);
      atom_(j, 1) = ex * m.cdf(Hypothesis::H1, -x);
      state_(j, 0) = 1.0;
      state_(j, 1) = ex;
    }
    row0_ = kernel.extension_row(0.0);
    roww_ = kernel.extension_row(w_);
    const double ew = std::exp(w_);
    atom0_ = {m.cdf(Hypothesis::H0, 0.0), m.cdf(Hypothesis::H1, 0.0)};
    atomw_ = {m.cdf(Hypothesis::H0, -w_), ew * m.cdf(Hypothesis::H1, -w_)};
    at0_ = {1.0, 1.0};
    atw_ = {1.0, ew};
    inv_ew_ = 1.0 / ew;
  }

  /// Pr_i(C > n) at the headstart for the current n.
  double survival(int i) const { return i == 0 ? atw_[0] : atw_[1] * inv_ew_; }

  /// Smallest and largest componentwise ratio of the last step over the
  /// nodes and x = 0.  The step is a nonnegative linear map, so these bracket
  /// its dominant eigenvalue (Collatz-Wielandt).
  std::pair<double, double> ratio_bracket(int i) const { return bracket_[static_cast<std::size_t>(i)]; }

  void step() {
    Eigen::MatrixXd next = kernel_.entries() * state_;
    std::array<double, 2> next0{};
    std::array<double, 2> nextw{};
    for (int i = 0; i < 2; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      next.col(i) += atom_.col(i) * at0_[ui];
      next0[ui] = row0_.dot(state_.col(i)) + atom0_[ui] * at0_[ui];
      nextw[ui] = roww_.dot(state_.col(i)) + atomw_[ui] * at0_[ui];
      double lo = next0[ui] / at0_[ui];
      double hi = lo;
      for (Eigen::Index j = 0; j < next.rows(); ++j) {
        const double r = next(j, i) / state_(j, i);
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
      bracket_[ui] = {lo, hi};
    }
    state_ = std::move(next);
    at0_ = next0;
    atw_ = nextw;
  }

 private:
  const KernelMatrix<Model>& kernel_;
  double w_;
  Eigen::MatrixXd atom_;
  Eigen::MatrixXd state_;
  Eigen::RowVectorXd row0_;
  Eigen::RowVectorXd roww_;
  std::array<double, 2> atom0_{};
  std::array<double, 2> atomw_{};
  std::array<double, 2> at0_{};
  std::array<double, 2> atw_{};
  std::array<std::pair<double, double>, 2> bracket_{{{0.0, 1.0}, {0.0, 1.0}}};
  double inv_ew_ = 1.0;
};

/// sum_{m>=1} m^j rho^m for j = 0..k, via T_j (1 - rho) = rho sum_{i<j} C(j,i) T_i.
inline std::vector<double> geometric_power_sums(double rho, int k) {
  std::vector<double> t(static_cast<std::size_t>(k + 1));
  t[0] = 1.0 / (1.0 - rho);
  for (int j = 1; j <= k; ++j) {
    double acc = 0.0;
    double binom = 1.0;
    for (int i = 0; i < j; ++i) {
      acc += binom * t[static_cast<std::size_t>(i)];
      binom = binom * (j - i) / (i + 1);
    }
    t[static_cast<std::size_t>(j)] = rho / (1.0 - rho) * acc;
  }
  t[0] -= 1.0;
  return t;
}

/// S_N * sum_{m>=1} ((N+m+1)^k - (N+m)^k) rho^m, expanded in powers of m.
inline double geometric_tail(double survival_n, std::int64_t n, double rho, int k) {
  if (survival_n == 0.0) return 0.0;
  const auto sums = geometric_power_sums(rho, k);
  const double np1 = static_cast<double>(n + 1);
  const double nn = static_cast<double>(n);
  double acc = 0.0;
  double binom = 1.0;
  for (int j = 0; j < k; ++j) {
    const double coeff = std::pow(np1, k - j) - std::pow(nn, k - j);
    acc += binom * coeff * sums[static_cast<std::size_t>(j)];
    binom = binom * (k - j) / (j + 1);
  }
  return survival_n * acc;
}

inline std::int64_t default_horizon(double arl_estimate) {
  const double n = std::ceil(5.0 * arl_estimate);
  return std::clamp<std::int64_t>(static_cast<std::int64_t>(n), 1, kMaxSurvivalHorizon);
}

}  // namespace detail

/// L_i(w;h) = N_i(0;0,h) P_i(w;0,h) / (1 - P_i(0;0,h)) + N_i(w;0,h).
template <LogLrModel Model>
ArlResult arl_via_sprt(const CusumConfig<Model>& config, const Grid& grid) {
  instrumentation::Scope scope;
  auto kernel = detail::cusum_kernel(config, grid);
  ArlResult out = detail::arl_via_sprt_on(config, kernel);
  out.diagnostics = detail::diagnostics_for(*kernel, scope);
  return out;
}

template <LogLrModel Model>
ArlResult arl_direct(const CusumConfig<Model>& config, const Grid& grid) {
  instrumentation::Scope scope;
  auto kernel = detail::cusum_kernel(config, grid);
  ArlResult out = detail::arl_direct_on(config, *kernel, true);
  out.diagnostics = detail::diagnostics_for(*kernel, scope);
  return out;
}

template <LogLrModel Model>
ArlResult compute_arl(const CusumConfig<Model>& config, const Grid& grid,
                      ArlMethod method = ArlMethod::ViaSprt) {
  return method == ArlMethod::ViaSprt ? arl_via_sprt(config, grid) : arl_direct(config, grid);
}

namespace detail {

template <LogLrModel Model>
SurvivalResult survival_on(const CusumConfig<Model>& config,
                           const std::shared_ptr<const KernelMatrix<Model>>& kernel,
                           std::int64_t n_max) {
  if (n_max <= 0) {
    const ArlResult arl = arl_via_sprt_on(config, kernel);
    n_max = default_horizon(std::max(arl.arl0, arl.arl1));
  }
  require(n_max <= kMaxSurvivalHorizon, "n_max is capped at " + std::to_string(kMaxSurvivalHorizon));

  SurvivalResult out;
  out.survival0.reserve(static_cast<std::size_t>(n_max + 1));
  out.survival1.reserve(static_cast<std::size_t>(n_max + 1));
  SurvivalRecursion<Model> rec(config, *kernel);
  for (std::int64_t n = 0;; ++n) {
    out.survival0.push_back(rec.survival(0));
    out.survival1.push_back(rec.survival(1));
    if (n == n_max) break;
    rec.step();
  }
  return out;
}

template <LogLrModel Model>
MomentTable moments_on(const CusumConfig<Model>& config,
                       const std::shared_ptr<const KernelMatrix<Model>>& kernel, int k_max,
                       double tail_tol, std::int64_t step_cap) {
  require(k_max >= 1, "k_max must be at least 1");
  require(tail_tol > 0.0 && tail_tol < 1.0, "tail_tol must lie in (0, 1)");
  if (step_cap <= 0) {
    const ArlResult arl = arl_via_sprt_on(config, kernel);
    step_cap = std::max<std::int64_t>(
        1000, static_cast<std::int64_t>(std::ceil(10.0 * std::max(arl.arl0, arl.arl1))));
  }

  constexpr int kWindow = 10;
  constexpr double kBracketFloor = 8.0 * std::numeric_limits<double>::epsilon();
  MomentTable out;
  out.k_max = k_max;
  std::array<bool, 2> done{false, false};
  std::array<std::vector<double>, 2> history;
  std::array<double, 2> last_rho{-1.0, -1.0};
  std::array<int, 2> stable_run{0, 0};
  for (auto& m : out.moments) m.assign(static_cast<std::size_t>(k_max), 0.0);

  SurvivalRecursion<Model> rec(config, *kernel);
  for (std::int64_t n = 0; !(done[0] && done[1]); ++n) {
    if (n > step_cap) {
      throw NonConvergenceError("run-length tail ratio did not stabilize within " +
                                std::to_string(step_cap) + " steps");
    }
    for (int i = 0; i < 2; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      if (done[ui]) continue;
      const double s = rec.survival(i);
      const double dn = static_cast<double>(n);
      for (int k = 1; k <= k_max; ++k) {
        out.moments[ui][static_cast<std::size_t>(k - 1)] +=
            (std::pow(dn + 1.0, k) - std::pow(dn, k)) * s;
      }
      history[ui].push_back(s);
      if (s < 1e-290) {
        // Remaining mass is below double resolution; the partial sum is final.
        done[ui] = true;
        out.rho[ui] = last_rho[ui] > 0.0 ? last_rho[ui] : 0.0;
        out.steps[ui] = n;
        continue;
      }
      if (n < kWindow) continue;
      const double rho =
          std::pow(s / history[ui][static_cast<std::size_t>(n - kWindow)], 1.0 / kWindow);
      // The windowed ratio alone can sit near 1 while the survival is still on
      // its initial plateau; the eigenvalue bracket rules that out.
      const auto [lo, hi] = rec.ratio_bracket(i);
      const bool converged = hi - lo <= std::max(tail_tol * (1.0 - rho), kBracketFloor);
      const bool stable = converged && last_rho[ui] > 0.0 && rho < 1.0 &&
                          std::abs(rho - last_rho[ui]) < tail_tol * rho;
      last_rho[ui] = rho;
      stable_run[ui] = stable ? stable_run[ui] + 1 : 0;
      if (stable_run[ui] >= kWindow) {
        for (int k = 1; k <= k_max; ++k) {
          out.moments[ui][static_cast<std::size_t>(k - 1)] += geometric_tail(s, n, rho, k);
        }
        done[ui] = true;
        out.rho[ui] = rho;
        out.steps[ui] = n;
      }
    }
    if (!(done[0] && done[1])) rec.step();
  }
  return out;
}

}  // namespace detail

/// Pr_i(C_h^w > n) for n = 0..n_max.  n_max <= 0 selects ceil(5 * max ARL),
/// capped at 10^6.
template <LogLrModel Model>
SurvivalResult run_length_survival(const CusumConfig<Model>& config, const Grid& grid,
                                   std::int64_t n_max = 0) {
  instrumentation::Scope scope;
  auto kernel = detail::cusum_kernel(config, grid);
  SurvivalResult out = detail::survival_on(config, kernel, n_max);
  out.diagnostics = detail::diagnostics_for(*kernel, scope);
  return out;
}

/// E_i[C^k] = sum_{n>=0} ((n+1)^k - n^k) Pr_i(C > n), k = 1..k_max.  The sum
/// runs until the 10-step ratio estimate rho = (S_n / S_{n-10})^{1/10} has
/// moved by less than tail_tol (relative) on each of 10 consecutive steps; the remainder
/// is closed with Pr(C > n+m) = rho^m Pr(C > n).  step_cap <= 0 selects
/// 10 x the larger ARL (at least 1000 steps).
template <LogLrModel Model>
MomentTable run_length_moments(const CusumConfig<Model>& config, const Grid& grid, int k_max = 2,
                               double tail_tol = 1e-9, std::int64_t step_cap = 0) {
  instrumentation::Scope scope;
  auto kernel = detail::cusum_kernel(config, grid);
  MomentTable out = detail::moments_on(config, kernel, k_max, tail_tol, step_cap);
  out.diagnostics = detail::diagnostics_for(*kernel, scope);
  return out;
}

/// Everything at once from one kernel: ARLs (both routes), survival, moments.
template <LogLrModel Model>
struct CusumReport {
  CusumConfig<Model> config;
  ArlResult arl;
  ArlResult arl_direct;
  SurvivalResult survival;
  MomentTable moments;
  SolverDiagnostics diagnostics;
};

struct ReportOptions {
  std::int64_t n_max = 0;  ///< 0: default horizon
  int k_max = 2;
  double tail_tol = 1e-9;
};

template <LogLrModel Model>
CusumReport<Model> cusum_report(const CusumConfig<Model>& config, const Grid& grid,
                                const ReportOptions& options = {}) {
  instrumentation::Scope scope;
  auto kernel = detail::cusum_kernel(config, grid);
  CusumReport<Model> out{config, {}, {}, {}, {}, {}};
  out.arl = detail::arl_via_sprt_on(config, kernel);
  out.arl_direct = detail::arl_direct_on(config, *kernel, true);
  out.survival = detail::survival_on(config, kernel, options.n_max);
  out.moments = detail::moments_on(config, kernel, options.k_max, options.tail_tol, 0);
  out.diagnostics = detail::diagnostics_for(*kernel, scope);
  out.arl.diagnostics = out.arl_direct.diagnostics = out.survival.diagnostics =
      out.moments.diagnostics = out.diagnostics;
  return out;
}

}  // namespace cusumkit
