#pragma once

// Command-line front end: flag parsing, validation, and CSV/JSON rendering
// around the cusumkit solvers.  Kept in a header so the test suites can drive
// run_cli() in-process.

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cusumkit/cusumkit.hpp"

namespace cusumkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kSchemaVersion = 1;

inline constexpr const char* kUnitsNote =
    "boundaries, thresholds, headstarts and evaluation points are in log-likelihood-ratio units; "
    "for the Gaussian shift model a threshold c in raw-observation units is theta*c in log-LR units";

using Json = nlohmann::ordered_json;

enum class Format { Json, Csv };

/// Everything a command can be configured with.
struct RunSpec {
  std::string command;
  double theta = 1.0;
  double a = 0.0;
  double b = 0.0;
  double h = 0.0;
  double w = 0.0;
  int n = kDefaultGridSize;
  std::vector<double> at;
  std::string method = "via-sprt";
  std::int64_t n_max = 0;
  int k_max = 2;
  double tail_tol = 1e-9;
  std::string chart = "cusum";
  std::int64_t reps = 1'000'000;
  std::uint64_t seed = 42;
  std::int64_t step_cap = 0;
  std::int64_t hist_n_max = -1;
  std::vector<int> sizes{128, 256, 512, 1024};
  int repeats = 5;
  Format format = Format::Json;
  std::string output;
};

/// 12 significant digits, shared by both output formats.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline double round12(double v) { return std::strtod(fmt(v).c_str(), nullptr); }

class Report {
 public:
  explicit Report(const RunSpec& spec) : spec_(spec) {}

  Json& results() { return results_; }
  Json& diagnostics() { return diagnostics_; }
  void set_csv(std::vector<std::string> header) { header_ = std::move(header); }
  void add_row(std::vector<std::string> row) { rows_.push_back(std::move(row)); }
  void echo(const std::string& key, Json value) { echo_[key] = std::move(value); }

  void write(std::ostream& out, std::ostream& err) const {
    if (spec_.format == Format::Csv) {
      auto line = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
      };
      line(header_);
      for (const auto& r : rows_) line(r);
      err << "note: " << kUnitsNote << '\n';
      return;
    }
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    Json echo = echo_;
    echo["command"] = spec_.command;
    doc["spec"] = echo;
    doc["results"] = results_;
    Json diag = diagnostics_;
    diag["units"] = kUnitsNote;
    doc["diagnostics"] = diag;
    out << doc.dump(2) << '\n';
  }

 private:
  const RunSpec& spec_;
  Json echo_ = Json::object();
  Json results_ = Json::object();
  Json diagnostics_ = Json::object();
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

inline void solver_diagnostics(Report& rep, const SolverDiagnostics& d) {
  rep.diagnostics()["grid_size"] = d.grid_size;
  rep.diagnostics()["reciprocal_condition"] = round12(d.rcond);
  rep.diagnostics()["assembly_count"] = d.assemblies;
  rep.diagnostics()["factorization_count"] = d.factorizations;
}

inline ObservationModel model_of(const RunSpec& s) { return ObservationModel::gaussian_shift(s.theta); }

inline void cmd_sprt(const RunSpec& s, Report& rep) {
  const SprtConfig<> config{s.a, s.b, model_of(s)};
  config.validate();
  std::vector<double> points = s.at.empty() ? std::vector<double>{0.0} : s.at;
  for (double x : points) {
    detail::require(x >= s.a && x <= s.b, "--at " + fmt(x) + " lies outside [a, b]");
  }
  rep.echo("theta", s.theta);
  rep.echo("a", s.a);
  rep.echo("b", s.b);
  rep.echo("n", s.n);
  rep.echo("at", points);

  instrumentation::Scope scope;
  const auto sol = solve_characteristics(config, build_grid(s.a, s.b, s.n));
  const auto counts = scope.delta();

  rep.set_csv({"x", "N0", "P0", "N1", "P1"});
  Json rows = Json::array();
  for (double x : points) {
    const SprtPoint p = sol.evaluate(x);
    rows.push_back({{"x", round12(p.x)},
                    {"N0", round12(p.n0)},
                    {"P0", round12(p.p0)},
                    {"N1", round12(p.n1)},
                    {"P1", round12(p.p1)}});
    rep.add_row({fmt(p.x), fmt(p.n0), fmt(p.p0), fmt(p.n1), fmt(p.p1)});
  }
  rep.results()["points"] = rows;
  rep.results()["labels"] = {{"N_i", "expected sample number under H_i"},
                             {"P_i", "probability of exiting at the lower boundary (accept H0) under H_i"}};
  solver_diagnostics(rep, {sol.grid().size(), sol.kernel().rcond(), counts.assemblies,
                           counts.factorizations});
}

inline CusumConfig<> cusum_config(const RunSpec& s, Report& rep) {
  CusumConfig<> config{s.h, s.w, model_of(s)};
  config.validate();
  rep.echo("theta", s.theta);
  rep.echo("h", s.h);
  rep.echo("w", s.w);
  rep.echo("n", s.n);
  return config;
}

inline void cmd_cusum_arl(const RunSpec& s, Report& rep) {
  const auto config = cusum_config(s, rep);
  detail::require(s.method == "via-sprt" || s.method == "direct",
                  "--method must be via-sprt or direct");
  rep.echo("method", s.method);
  const ArlMethod method = s.method == "direct" ? ArlMethod::Direct : ArlMethod::ViaSprt;
  const ArlResult r = compute_arl(config, build_grid(0.0, s.h, s.n), method);
  rep.results()["L0"] = round12(r.arl0);
  rep.results()["L1"] = round12(r.arl1);
  rep.results()["method"] = to_string(r.method);
  rep.set_csv({"method", "h", "w", "L0", "L1"});
  rep.add_row({to_string(r.method), fmt(s.h), fmt(s.w), fmt(r.arl0), fmt(r.arl1)});
  solver_diagnostics(rep, r.diagnostics);
}

inline void cmd_rl_dist(const RunSpec& s, Report& rep) {
  const auto config = cusum_config(s, rep);
  detail::require(s.n_max >= 0, "--n-max must be nonnegative (0 selects the default horizon)");
  rep.echo("n_max", s.n_max);
  const SurvivalResult r = run_length_survival(config, build_grid(0.0, s.h, s.n), s.n_max);
  rep.set_csv({"n", "survival0", "survival1"});
  Json s0 = Json::array();
  Json s1 = Json::array();
  for (std::size_t i = 0; i < r.survival0.size(); ++i) {
    s0.push_back(round12(r.survival0[i]));
    s1.push_back(round12(r.survival1[i]));
    rep.add_row({std::to_string(i), fmt(r.survival0[i]), fmt(r.survival1[i])});
  }
  rep.results()["n_max"] = r.survival0.size() - 1;
  rep.results()["survival0"] = s0;
  rep.results()["survival1"] = s1;
  solver_diagnostics(rep, r.diagnostics);
}

inline void cmd_moments(const RunSpec& s, Report& rep) {
  const auto config = cusum_config(s, rep);
  rep.echo("k_max", s.k_max);
  rep.echo("tail_tol", s.tail_tol);
  const MomentTable t = run_length_moments(config, build_grid(0.0, s.h, s.n), s.k_max, s.tail_tol);
  rep.set_csv({"hypothesis", "k", "moment"});
  for (int i = 0; i < 2; ++i) {
    const Hypothesis hyp = i == 0 ? Hypothesis::H0 : Hypothesis::H1;
    Json ms = Json::array();
    for (int k = 1; k <= s.k_max; ++k) {
      ms.push_back(round12(t.moment(hyp, k)));
      rep.add_row({to_string(hyp), std::to_string(k), fmt(t.moment(hyp, k))});
    }
    rep.results()[to_string(hyp)] = ms;
    rep.diagnostics()["rho_" + to_string(hyp)] = round12(t.rho[static_cast<std::size_t>(i)]);
    rep.diagnostics()["terms_before_tail_" + to_string(hyp)] = t.steps[static_cast<std::size_t>(i)];
  }
  solver_diagnostics(rep, t.diagnostics);
}

inline Json sim_json(const SimResult& r) {
  Json j;
  j["mean"] = round12(r.mean);
  j["std_error"] = round12(r.std_error);
  j["reps"] = r.reps;
  return j;
}

inline void cmd_simulate(const RunSpec& s, Report& rep) {
  detail::require(s.chart == "cusum" || s.chart == "sprt", "--chart must be cusum or sprt");
  detail::require(s.reps >= 1, "--reps must be at least 1");
  SimOptions opt;
  opt.reps = s.reps;
  opt.seed = s.seed;
  opt.step_cap = s.step_cap;
  opt.hist_n_max = s.hist_n_max;
  rep.echo("chart", s.chart);
  rep.echo("theta", s.theta);
  rep.echo("reps", s.reps);
  rep.echo("seed", s.seed);

  if (s.chart == "sprt") {
    const SprtConfig<> config{s.a, s.b, model_of(s)};
    config.validate();
    const double start = s.at.empty() ? 0.0 : s.at.front();
    rep.echo("a", s.a);
    rep.echo("b", s.b);
    rep.echo("start", start);
    rep.set_csv({"hypothesis", "start", "asn", "asn_se", "oc", "oc_se", "reps"});
    for (Hypothesis hyp : {Hypothesis::H0, Hypothesis::H1}) {
      const auto r = simulate_sprt(config, hyp, start, opt);
      rep.results()[to_string(hyp)] = {{"asn", sim_json(r.asn)}, {"oc", sim_json(r.oc)}};
      rep.add_row({to_string(hyp), fmt(start), fmt(r.asn.mean), fmt(r.asn.std_error),
                   fmt(r.oc.mean), fmt(r.oc.std_error), std::to_string(r.asn.reps)});
    }
    return;
  }

  const CusumConfig<> config{s.h, s.w, model_of(s)};
  config.validate();
  rep.echo("h", s.h);
  rep.echo("w", s.w);
  rep.echo("hist_n_max", s.hist_n_max);
  rep.set_csv({"hypothesis", "arl", "arl_se", "second_moment", "second_moment_se", "reps",
               "cap_hits"});
  for (Hypothesis hyp : {Hypothesis::H0, Hypothesis::H1}) {
    const SimResult r = simulate_cusum(config, hyp, opt);
    Json j = sim_json(r);
    j["second_moment"] = round12(r.second_moment);
    j["second_moment_se"] = round12(r.second_moment_se);
    j["cap_hits"] = r.cap_hits;
    if (!r.survival_counts.empty()) j["survival_counts"] = r.survival_counts;
    rep.results()[to_string(hyp)] = j;
    rep.add_row({to_string(hyp), fmt(r.mean), fmt(r.std_error), fmt(r.second_moment),
                 fmt(r.second_moment_se), std::to_string(r.reps), std::to_string(r.cap_hits)});
  }
}

/// Median wall-clock seconds of `repeats` calls.
inline double median_seconds(int repeats, const std::function<void()>& fn) {
  std::vector<double> t;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

struct BenchRow {
  int n = 0;
  double grouped_seconds = 0.0;
  double separate_seconds = 0.0;
  std::int64_t grouped_factorizations = 0;
  std::int64_t separate_factorizations = 0;
  double max_abs_difference = 0.0;
  double speedup() const { return separate_seconds / grouped_seconds; }
};

/// All four SPRT characteristics at the nodes: single factorization with the
/// transformed right-hand sides vs. one factorization per hypothesis.
inline BenchRow bench_once(const SprtConfig<>& config, int n, int repeats) {
  const Grid grid = build_grid(config.a, config.b, n);
  BenchRow row;
  row.n = n;
  Eigen::MatrixXd grouped;
  Eigen::MatrixXd separate;
  {
    instrumentation::Scope scope;
    grouped = baseline::solve_characteristics_grouped(config, grid);
    row.grouped_factorizations = scope.delta().factorizations;
  }
  {
    instrumentation::Scope scope;
    separate = baseline::solve_characteristics_separately(config, grid);
    row.separate_factorizations = scope.delta().factorizations;
  }
  row.max_abs_difference = (grouped - separate).cwiseAbs().maxCoeff();
  row.grouped_seconds = median_seconds(
      repeats, [&] { grouped = baseline::solve_characteristics_grouped(config, grid); });
  row.separate_seconds = median_seconds(
      repeats, [&] { separate = baseline::solve_characteristics_separately(config, grid); });
  return row;
}

inline void cmd_bench(const RunSpec& s, Report& rep) {
  const SprtConfig<> config{s.a, s.b, model_of(s)};
  config.validate();
  detail::require(s.repeats >= 5, "--repeats must be at least 5");
  detail::require(!s.sizes.empty(), "--sizes must list at least one grid size");
  for (int n : s.sizes) detail::require(n >= 2 && n <= kMaxGridSize, "grid sizes must lie in [2, 4096]");
  rep.echo("theta", s.theta);
  rep.echo("a", s.a);
  rep.echo("b", s.b);
  rep.echo("sizes", s.sizes);
  rep.echo("repeats", s.repeats);
  rep.set_csv({"n", "grouped_seconds", "separate_seconds", "speedup", "grouped_factorizations",
               "separate_factorizations", "max_abs_difference"});
  Json rows = Json::array();
  for (int n : s.sizes) {
    const BenchRow r = bench_once(config, n, s.repeats);
    rows.push_back({{"n", r.n},
                    {"grouped_seconds", round12(r.grouped_seconds)},
                    {"separate_seconds", round12(r.separate_seconds)},
                    {"speedup", round12(r.speedup())},
                    {"grouped_factorizations", r.grouped_factorizations},
                    {"separate_factorizations", r.separate_factorizations},
                    {"max_abs_difference", round12(r.max_abs_difference)}});
    rep.add_row({std::to_string(r.n), fmt(r.grouped_seconds), fmt(r.separate_seconds),
                 fmt(r.speedup()), std::to_string(r.grouped_factorizations),
                 std::to_string(r.separate_factorizations), fmt(r.max_abs_difference)});
  }
  rep.results()["runs"] = rows;
}

/// Parses argv, runs one subcommand, writes the report.  Returns the exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunSpec s;
  CLI::App app{"cusumkit: CUSUM and SPRT performance via integral equations", "cusumkit"};
  app.set_help_flag("--help", "print this help and exit");
  app.require_subcommand(1, 1);

  const std::map<std::string, Format> formats{{"json", Format::Json}, {"csv", Format::Csv}};
  auto common = [&](CLI::App* sub) {
    sub->add_option("--theta", s.theta, "post-change mean shift (nonzero)")->required();
    sub->add_option("--format", s.format, "output format")
        ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case));
    sub->add_option("--output", s.output, "write the report here instead of stdout");
  };
  auto grid_size = [&](CLI::App* sub) {
    sub->add_option("--n", s.n, "quadrature nodes")->check(CLI::Range(2, kMaxGridSize));
  };
  auto cusum_geometry = [&](CLI::App* sub) {
    sub->add_option("--h", s.h, "control limit, log-LR units")->required();
    sub->add_option("--w", s.w, "headstart in [0, h)");
  };

  auto* sprt = app.add_subcommand("sprt", "ASN and OC functions under H0 and H1");
  common(sprt);
  grid_size(sprt);
  sprt->add_option("--a", s.a, "lower boundary (a <= 0)")->required();
  sprt->add_option("--b", s.b, "upper boundary (b > 0)")->required();
  sprt->add_option("--at", s.at, "evaluation point(s) in [a, b]; repeatable");

  auto* arl = app.add_subcommand("cusum-arl", "zero-state CUSUM ARL under H0 and H1");
  common(arl);
  grid_size(arl);
  cusum_geometry(arl);
  arl->add_option("--method", s.method, "via-sprt or direct")
      ->check(CLI::IsMember({"via-sprt", "direct"}));

  auto* dist = app.add_subcommand("rl-dist", "run-length survival Pr(C > n), n = 0..n-max");
  common(dist);
  grid_size(dist);
  cusum_geometry(dist);
  dist->add_option("--n-max", s.n_max, "last n (0 = ceil(5 x ARL))");

  auto* moments = app.add_subcommand("moments", "run-length moments E[C^k]");
  common(moments);
  grid_size(moments);
  cusum_geometry(moments);
  moments->add_option("--k-max", s.k_max, "highest moment order")->check(CLI::PositiveNumber);
  moments->add_option("--tail-tol", s.tail_tol, "relative stability of the tail ratio");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo estimates (CUSUM or SPRT)");
  common(sim);
  sim->add_option("--chart", s.chart, "cusum or sprt")->check(CLI::IsMember({"cusum", "sprt"}));
  sim->add_option("--h", s.h, "CUSUM control limit");
  sim->add_option("--w", s.w, "CUSUM headstart");
  sim->add_option("--a", s.a, "SPRT lower boundary");
  sim->add_option("--b", s.b, "SPRT upper boundary");
  sim->add_option("--at", s.at, "SPRT starting point");
  sim->add_option("--reps", s.reps, "replications");
  sim->add_option("--seed", s.seed, "base seed");
  sim->add_option("--step-cap", s.step_cap, "per-run step cap (0 = default)");
  sim->add_option("--n-max", s.hist_n_max, "record survival counts for n = 0..n-max");

  auto* bench = app.add_subcommand("bench", "single vs. per-hypothesis factorization timing");
  common(bench);
  bench->add_option("--a", s.a, "lower boundary")->required();
  bench->add_option("--b", s.b, "upper boundary")->required();
  bench->add_option("--sizes", s.sizes, "grid sizes")->delimiter(',');
  bench->add_option("--repeats", s.repeats, "timed runs per size (median reported)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }
  s.command = app.get_subcommands().front()->get_name();

  using Handler = void (*)(const RunSpec&, Report&);
  const std::map<std::string, Handler> handlers{{"sprt", cmd_sprt},       {"cusum-arl", cmd_cusum_arl},
                                                {"rl-dist", cmd_rl_dist}, {"moments", cmd_moments},
                                                {"simulate", cmd_simulate}, {"bench", cmd_bench}};
  Report rep(s);
  try {
    handlers.at(s.command)(s, rep);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }

  if (s.output.empty()) {
    rep.write(out, err);
  } else {
    std::ofstream file(s.output, std::ios::binary);
    if (!file) {
      err << "error: cannot open " << s.output << " for writing\n";
      return kExitUsage;
    }
    rep.write(file, err);
  }
  return kExitOk;
}

/// Convenience overload for tests: arguments without the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"cusumkit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace cusumkit::cli
