// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli_app.hpp"
#include "cusumkit/baseline.hpp"
#include "cusumkit/cusumkit.hpp"

#ifndef CUSUMKIT_CLI_PATH
#error "CUSUMKIT_CLI_PATH must name the built command-line tool"
#endif

namespace {

using namespace cusumkit;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kSeed = 42;
constexpr std::int64_t kReps = 1'000'000;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "; first failure: " << what;
      pass = false;
    }
  }
};

int failures = 0;
Clock::time_point criterion_started;

void report(int id, const std::string& title, Verdict& v) {
  if (!v.pass) ++failures;
  std::cout << (v.pass ? "PASS" : "FAIL") << " [" << id << "] " << title << " :: "
            << v.detail.str() << " [" << std::fixed << std::setprecision(1)
            << seconds_since(criterion_started) << " s]" << std::defaultfloat << std::endl;
}

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

CusumConfig<> cusum(double theta, double h, double w) {
  return {h, w, ObservationModel::gaussian_shift(theta)};
}

SimOptions sim_options(std::int64_t hist_n_max = -1) {
  SimOptions o;
  o.reps = kReps;
  o.seed = kSeed;
  o.hist_n_max = hist_n_max;
  return o;
}

bool within(double exact, double estimate, double se, double k = 3.0) {
  return std::abs(exact - estimate) <= k * se;
}

/// Sum of the survival sequence plus the geometric remainder S_N rho/(1-rho).
double survival_sum(const std::vector<double>& s) {
  const double partial = std::accumulate(s.begin(), s.end(), 0.0);
  if (s.back() == 0.0) return partial;
  const double rho = s.back() / s[s.size() - 2];
  return partial + s.back() * rho / (1.0 - rho);
}

// 1. e^{-y} K1(y-x) = e^{-x} K0(y-x) on random triples.
void criterion1() {
  Verdict v;
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> coord(-10.0, 10.0);
  const std::array<double, 8> thetas{-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0};
  std::uniform_int_distribution<int> pick(0, 7);
  std::vector<ObservationModel> models;
  for (double t : thetas) models.push_back(ObservationModel::gaussian_shift(t));

  const auto t0 = Clock::now();
  double worst = 0.0;
  double worst_x = 0.0, worst_y = 0.0, worst_theta = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    const double x = coord(rng);
    const double y = coord(rng);
    const int k = pick(rng);
    const auto& m = models[static_cast<std::size_t>(k)];
    const double lhs = std::exp(-y) * log_lr_pdf(m, Hypothesis::H1, y - x);
    const double rhs = std::exp(-x) * log_lr_pdf(m, Hypothesis::H0, y - x);
    const double d = std::abs(lhs - rhs);
    if (d > worst) {
      worst = d;
      worst_x = x;
      worst_y = y;
      worst_theta = thetas[static_cast<std::size_t>(k)];
    }
  }
  const double elapsed = seconds_since(t0);
  v.detail << "max |diff| = " << g(worst) << " (tol 1e-12) at x=" << g(worst_x) << " y=" << g(worst_y)
           << " theta=" << worst_theta << ", runtime " << g(elapsed) << " s (limit 1 s)";
  v.check(worst <= 1e-12, "identity residual above 1e-12");
  v.check(elapsed < 1.0, "runtime");
  report(1, "kernel linkage identity, 1e4 random (x, y, theta)", v);
}

// 2. Transformed-K0 solve vs direct K1 solve.
void criterion2() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  const std::array<std::pair<double, double>, 3> boxes{{{-2.0, 2.0}, {-1.0, 3.0}, {-1e-6, 3.0}}};
  for (double theta : {0.5, 1.0, 2.0}) {
    for (auto [a, b] : boxes) {
      const SprtConfig<> cfg{a, b, ObservationModel::gaussian_shift(theta)};
      const Grid grid = build_grid(a, b, 256);
      const Eigen::MatrixXd direct = baseline::solve_characteristics_separately(cfg, grid);
      const Eigen::MatrixXd grouped = baseline::solve_characteristics_grouped(cfg, grid);
      const double d = (direct - grouped).cwiseAbs().maxCoeff();
      worst = std::max(worst, d);
      v.check(d <= 1e-8, "theta=" + g(theta) + " (a,b)=(" + g(a) + "," + g(b) + ") diff " + g(d));
    }
  }
  const double elapsed = seconds_since(t0);
  v.detail << "max-norm difference " << g(worst) << " (tol 1e-8) over 9 configurations at n=256, runtime "
           << g(elapsed) << " s (limit 10 s)";
  v.check(elapsed < 10.0, "runtime");
  report(2, "transformed-K0 solve equals direct K1 solve", v);
}

// 3. Solver values inside 3 standard errors of 10^6-rep simulations.
void criterion3() {
  Verdict v;
  const auto t0 = Clock::now();
  int checks = 0;
  double worst_z = 0.0;
  auto record = [&](double exact, double est, double se, const std::string& what) {
    ++checks;
    const double z = se > 0.0 ? std::abs(exact - est) / se : (exact == est ? 0.0 : 1e300);
    worst_z = std::max(worst_z, z);
    v.check(within(exact, est, se), what + " z=" + g(z));
  };

  const SprtConfig<> sprt{-2.0, 2.0, ObservationModel::gaussian_shift(1.0)};
  const auto sol = solve_characteristics(sprt, 256);
  for (double x : {-2.0 + 0.4, 0.0, 2.0 - 0.4}) {
    const SprtPoint p = sol.evaluate(x);
    const auto s0 = simulate_sprt(sprt, Hypothesis::H0, x, sim_options());
    const auto s1 = simulate_sprt(sprt, Hypothesis::H1, x, sim_options());
    record(p.n0, s0.asn.mean, s0.asn.std_error, "N0(" + g(x) + ")");
    record(p.p0, s0.oc.mean, s0.oc.std_error, "P0(" + g(x) + ")");
    record(p.n1, s1.asn.mean, s1.asn.std_error, "N1(" + g(x) + ")");
    record(p.p1, s1.oc.mean, s1.oc.std_error, "P1(" + g(x) + ")");
  }
  for (double w : {0.0, 2.0}) {
    const auto cfg = cusum(1.0, 4.0, w);
    const auto arl = arl_via_sprt(cfg, build_grid(0.0, 4.0, 256));
    const auto s0 = simulate_cusum(cfg, Hypothesis::H0, sim_options());
    const auto s1 = simulate_cusum(cfg, Hypothesis::H1, sim_options());
    record(arl.arl0, s0.mean, s0.std_error, "L0(w=" + g(w) + ")");
    record(arl.arl1, s1.mean, s1.std_error, "L1(w=" + g(w) + ")");
  }
  const double elapsed = seconds_since(t0);
  v.detail << checks << " quantities, worst |z| = " << g(worst_z) << " (limit 3), seed " << kSeed
           << ", runtime " << g(elapsed) << " s (limit 300 s)";
  v.check(elapsed < 300.0, "runtime");
  report(3, "Monte Carlo agreement at 1e6 replications", v);
}

const std::array<double, 4> kThetas{0.25, 0.5, 1.0, 2.0};
const std::array<double, 4> kLimits{1.0, 2.0, 4.0, 6.0};

// 4. Direct vs via-SPRT ARLs, and the survival-sum ARL.
void criterion4() {
  Verdict v;
  double worst_cross = 0.0;
  double worst_sum = 0.0;
  int configs = 0;
  for (double theta : kThetas) {
    for (double h : kLimits) {
      for (double wf : {0.0, 0.5}) {
        const auto cfg = cusum(theta, h, wf * h);
        const auto rep = cusum_report(cfg, build_grid(0.0, h, 512));
        const std::string tag = "theta=" + g(theta) + " h=" + g(h) + " w=" + g(wf * h);
        const std::array<double, 2> via{rep.arl.arl0, rep.arl.arl1};
        const std::array<double, 2> direct{rep.arl_direct.arl0, rep.arl_direct.arl1};
        const std::array<double, 2> sums{survival_sum(rep.survival.survival0),
                                         survival_sum(rep.survival.survival1)};
        for (int i = 0; i < 2; ++i) {
          const double c = rel(direct[i], via[i]);
          const double s = std::max(rel(sums[i], via[i]), rel(sums[i], direct[i]));
          worst_cross = std::max(worst_cross, c);
          worst_sum = std::max(worst_sum, s);
          v.check(c <= 1e-4, tag + " cross " + g(c));
          v.check(s <= 1e-3, tag + " survival-sum " + g(s));
        }
        ++configs;
      }
    }
  }
  v.detail << configs << " configurations at n=512: worst direct/via-sprt " << g(worst_cross)
           << " (tol 1e-4), worst survival-sum " << g(worst_sum) << " (tol 1e-3)";
  report(4, "cross-method ARL consistency", v);
}

// 5. Every reported quantity moves by at most 1e-6 relative from n=256 to n=512.
void criterion5() {
  Verdict v;
  double worst = 0.0;
  std::string worst_what;
  auto compare = [&](double coarse, double fine, const std::string& what) {
    const double r = fine == 0.0 ? std::abs(coarse) : rel(coarse, fine);
    if (r > worst) {
      worst = r;
      worst_what = what;
    }
    v.check(r <= 1e-6, what + " " + g(r));
  };
  for (double theta : {-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0}) {
    for (double h : kLimits) {
      for (double wf : {0.0, 0.5}) {
        const auto cfg = cusum(theta, h, wf * h);
        const std::string tag = "theta=" + g(theta) + " h=" + g(h) + " w=" + g(wf * h);
        ReportOptions opt;
        opt.n_max = 50;
        const auto a = cusum_report(cfg, build_grid(0.0, h, 256), opt);
        const auto b = cusum_report(cfg, build_grid(0.0, h, 512), opt);
        compare(a.arl.arl0, b.arl.arl0, tag + " L0");
        compare(a.arl.arl1, b.arl.arl1, tag + " L1");
        compare(a.arl_direct.arl0, b.arl_direct.arl0, tag + " L0 direct");
        compare(a.arl_direct.arl1, b.arl_direct.arl1, tag + " L1 direct");
        for (std::size_t n : {1u, 5u, 10u, 50u}) {
          compare(a.survival.survival0[n], b.survival.survival0[n], tag + " S0(" + std::to_string(n) + ")");
          compare(a.survival.survival1[n], b.survival.survival1[n], tag + " S1(" + std::to_string(n) + ")");
        }
        for (Hypothesis hyp : {Hypothesis::H0, Hypothesis::H1}) {
          for (int k = 1; k <= 2; ++k) {
            compare(a.moments.moment(hyp, k), b.moments.moment(hyp, k),
                    tag + " mu" + std::to_string(k) + " " + to_string(hyp));
          }
        }
      }
      // SPRT characteristics on (-h/2, h/2) and (0, h).
      for (auto [lo, hi] : {std::pair{-0.5 * h, 0.5 * h}, std::pair{0.0, h}}) {
        const SprtConfig<> s{lo, hi, ObservationModel::gaussian_shift(theta)};
        const auto a = solve_characteristics(s, 256);
        const auto b = solve_characteristics(s, 512);
        for (double f : {0.0, 0.1, 0.5, 0.9, 1.0}) {
          const double x = lo + f * (hi - lo);
          const auto pa = a.evaluate(x);
          const auto pb = b.evaluate(x);
          const std::string tag = "sprt theta=" + g(theta) + " (" + g(lo) + "," + g(hi) + ") x=" + g(x);
          compare(pa.n0, pb.n0, tag + " N0");
          compare(pa.p0, pb.p0, tag + " P0");
          compare(pa.n1, pb.n1, tag + " N1");
          compare(pa.p1, pb.p1, tag + " P1");
        }
      }
    }
  }
  v.detail << "worst relative change " << g(worst) << " (tol 1e-6) at " << worst_what;
  report(5, "grid convergence 256 -> 512, |theta| <= 2, h <= 6", v);
}

// 6. Grouped single-factorization solve vs two per-hypothesis factorizations.
void criterion6() {
  Verdict v;
  const SprtConfig<> cfg{-2.0, 2.0, ObservationModel::gaussian_shift(1.0)};
  const auto row = cli::bench_once(cfg, 512, 9);
  v.detail << "n=512: factorizations " << row.grouped_factorizations << " vs " << row.separate_factorizations
           << ", median " << g(row.grouped_seconds) << " s vs " << g(row.separate_seconds) << " s, speedup "
           << g(row.speedup()) << " (floor 1.5), max |diff| " << g(row.max_abs_difference) << " (tol 1e-12)";
  v.check(row.grouped_factorizations == 1 && row.separate_factorizations == 2, "factorization counts");
  v.check(row.speedup() >= 1.5, "speedup");
  v.check(row.max_abs_difference <= 1e-12, "outputs differ");
  report(6, "single-factorization efficiency (bench)", v);
}

// 7. Survival against simulated histograms, closed-form first step, moments.
void criterion7() {
  Verdict v;
  double worst_z = 0.0;
  double worst_f = 0.0;
  double worst_mu = 0.0;
  for (double w : {0.0, 2.0}) {
    const auto cfg = cusum(1.0, 4.0, w);
    ReportOptions opt;
    opt.n_max = 50;
    const auto rep = cusum_report(cfg, build_grid(0.0, 4.0, 256), opt);
    const auto full = run_length_survival(cfg, build_grid(0.0, 4.0, 256));
    for (Hypothesis hyp : {Hypothesis::H0, Hypothesis::H1}) {
      const int i = index_of(hyp);
      const auto& s = i == 0 ? rep.survival.survival0 : rep.survival.survival1;
      const auto sim = simulate_cusum(cfg, hyp, sim_options(50));
      const std::string tag = "w=" + g(w) + " " + to_string(hyp);
      for (std::int64_t n : {1, 5, 10, 50}) {
        const double exact = s[static_cast<std::size_t>(n)];
        const double se = sim.survival_se(n);
        const double z = se > 0.0 ? std::abs(exact - sim.survival(n)) / se : 0.0;
        worst_z = std::max(worst_z, z);
        // With no observed runs past n the binomial SE is 0; allow the
        // expected count below one.
        const bool ok = se > 0.0 ? z <= 3.0 : exact * kReps < 1.0;
        v.check(ok, tag + " S(" + std::to_string(n) + ") z=" + g(z));
      }
      const double f = cfg.model.cdf(hyp, cfg.h - cfg.w);
      worst_f = std::max(worst_f, std::abs(s[1] - f));
      v.check(std::abs(s[1] - f) <= 1e-8, tag + " S(1) vs F(h-w)");

      const double mu1 = rep.moments.moment(hyp, 1);
      const double mu2 = rep.moments.moment(hyp, 2);
      const double via = i == 0 ? rep.arl.arl0 : rep.arl.arl1;
      const double direct = i == 0 ? rep.arl_direct.arl0 : rep.arl_direct.arl1;
      const double sum = survival_sum(i == 0 ? full.survival0 : full.survival1);
      const double d = std::max({rel(mu1, via), rel(mu1, direct), rel(mu1, sum)});
      worst_mu = std::max(worst_mu, d);
      v.check(d <= 1e-3, tag + " mu1 vs ARL paths " + g(d));
      v.check(mu2 >= mu1 * mu1, tag + " Jensen");
      if (w == 0.0 && hyp == Hypothesis::H0) {
        const double z = std::abs(mu2 - sim.second_moment) / sim.second_moment_se;
        v.check(z <= 3.0, "mu2 H0 vs simulation z=" + g(z));
        v.detail << "mu2(H0, w=0) z=" << g(z) << "; ";
      }
    }
  }
  v.detail << "worst survival z " << g(worst_z) << " (limit 3), worst |S(1) - F(h-w)| " << g(worst_f)
           << " (tol 1e-8), worst mu1 spread over three ARL paths " << g(worst_mu)
           << " (tol 1e-3), mu2 >= mu1^2 checked";
  report(7, "run-length distribution and moments", v);
}

std::string capture(const std::string& command) {
  std::string out;
  FILE* pipe = ::popen(command.c_str(), "r");
  if (pipe == nullptr) return "<popen failed>";
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  if (status != 0) out += "<exit status " + std::to_string(status) + ">";
  return out;
}

// bench timings are wall-clock; everything else in its report must repeat.
std::string strip_timings(const std::string& json_text) {
  auto doc = cli::Json::parse(json_text, nullptr, false);
  if (doc.is_discarded()) return json_text;
  for (auto& row : doc["results"]["runs"]) {
    row.erase("grouped_seconds");
    row.erase("separate_seconds");
    row.erase("speedup");
  }
  return doc.dump(2);
}

// 8. Every command, twice, and across worker counts.
void criterion8() {
  Verdict v;
  const std::string tool = CUSUMKIT_CLI_PATH;
  const std::vector<std::string> commands{
      "sprt --theta 1 --a -2 --b 2 --n 256 --at 0 --at 1.5 --format json",
      "sprt --theta 1 --a -2 --b 2 --n 256 --at 0 --format csv",
      "cusum-arl --theta 1 --h 4 --w 0",
      "cusum-arl --theta 1 --h 4 --w 2 --method direct --format csv",
      "rl-dist --theta 1 --h 4 --n-max 100",
      "moments --theta 1 --h 4 --k-max 2",
      "simulate --chart cusum --theta 1 --h 4 --reps 1000000 --seed 42",
      "simulate --chart sprt --theta 1 --a -2 --b 2 --at 0 --reps 1000000 --seed 42 --format csv",
      "bench --theta 1 --a -2 --b 2 --sizes 64,128 --repeats 5",
  };
  int compared = 0;
  for (const auto& c : commands) {
    const bool bench = c.rfind("bench", 0) == 0;
    auto once = [&](const std::string& threads) {
      const std::string text = capture("CUSUMKIT_THREADS=" + threads + " " + tool + " " + c + " 2>/dev/null");
      return bench ? strip_timings(text) : text;
    };
    const std::string first = once("0");
    const std::string second = once("0");
    const std::string single = once("1");
    const std::string many = once("7");
    v.check(first.find("<exit status") == std::string::npos && !first.empty(), c + " failed to run");
    v.check(first == second, c + " differs between runs");
    v.check(first == single && first == many, c + " differs across CUSUMKIT_THREADS");
    ++compared;
  }
  v.detail << compared << " commands x 4 runs (CUSUMKIT_THREADS=0,0,1,7) byte-identical"
           << " (bench compared without its wall-clock fields)";
  report(8, "CLI determinism", v);
}

}  // namespace

int main() {
  std::cout << "cusumkit acceptance" << std::endl;
  const std::vector<std::function<void()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                    criterion5, criterion6, criterion7, criterion8};
  for (const auto& c : criteria) {
    criterion_started = Clock::now();
    try {
      c();
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "FAIL (exception: " << e.what() << ")" << std::endl;
    }
  }
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
