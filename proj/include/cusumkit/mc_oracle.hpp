#pragma once

// Monte Carlo simulators for the SPRT and the CUSUM chart.  These are the
// independent check on every quantity the integral-equation solvers produce,
// so they share nothing with them beyond the model's sampler.
//
// Reproducibility contract: replications are cut into fixed blocks of
// kBlockSize.  Block k of a simulation draws from std::mt19937_64 seeded with
//   std::seed_seq{seed_lo32, seed_hi32, stream_tag, k_lo32, k_hi32}
// where stream_tag identifies the chart and hypothesis.  Blocks are handed
// to workers dynamically, accumulated in exact integer arithmetic, and merged
// in block order, so results are bit-identical for any worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "cusumkit/cusum.hpp"
#include "cusumkit/errors.hpp"
#include "cusumkit/model.hpp"
#include "cusumkit/sprt.hpp"

namespace cusumkit {

struct SimResult {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t reps = 0;
  /// Raw second moment E[X^2] and its standard error (run length only).
  double second_moment = 0.0;
  double second_moment_se = 0.0;
  std::int64_t cap_hits = 0;
  /// survival_counts[n] = number of runs with run length > n, n = 0..n_max.
  std::vector<std::int64_t> survival_counts;

  double survival(std::int64_t n) const {
    return static_cast<double>(survival_counts[static_cast<std::size_t>(n)]) /
           static_cast<double>(reps);
  }
  /// Binomial standard error of survival(n).
  double survival_se(std::int64_t n) const {
    const double p = survival(n);
    return std::sqrt(p * (1.0 - p) / static_cast<double>(reps));
  }
};

struct SprtSimResult {
  SimResult asn;
  SimResult oc;
};

struct SimOptions {
  std::int64_t reps = 1'000'000;
  std::uint64_t seed = 1;
  /// 0 = take CUSUMKIT_THREADS from the environment, else hardware concurrency.
  int workers = 0;
  /// Per-run step cap; 0 = default (SPRT: 10^7, CUSUM: 100 x pilot ARL).
  std::int64_t step_cap = 0;
  /// Largest n for survival_counts; negative disables the histogram.
  std::int64_t hist_n_max = -1;
};

/// Largest tolerated fraction of replications that hit the step cap.
inline constexpr double kMaxCapHitFraction = 1e-3;

namespace mc {

inline constexpr std::int64_t kBlockSize = 1 << 14;

enum class StreamTag : std::uint32_t {
  SprtH0 = 0x5350'0000,
  SprtH1 = 0x5350'0001,
  CusumH0 = 0x4353'0000,
  CusumH1 = 0x4353'0001,
  CusumPilotH0 = 0x4350'0000,
  CusumPilotH1 = 0x4350'0001,
};

inline std::mt19937_64 block_stream(std::uint64_t seed, StreamTag tag, std::uint64_t block) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(block),
                    static_cast<std::uint32_t>(block >> 32)};
  return std::mt19937_64(seq);
}

/// Worker count from CUSUMKIT_THREADS (0 or unset = hardware concurrency).
inline int default_workers() {
  int requested = 0;
  if (const char* env = std::getenv("CUSUMKIT_THREADS")) requested = std::atoi(env);
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

using u128 = unsigned __int128;

/// Exact per-block sums of integer outcomes.
struct Accumulator {
  std::int64_t reps = 0;
  std::int64_t flagged = 0;  // lower exits (SPRT)
  std::int64_t cap_hits = 0;
  u128 s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  std::vector<std::int64_t> at_most;  // at_most[n] = runs with length <= n

  void add(std::int64_t len, bool flag) {
    ++reps;
    if (flag) ++flagged;
    const auto l = static_cast<u128>(len);
    s1 += l;
    s2 += l * l;
    s3 += l * l * l;
    s4 += l * l * l * l;
    if (!at_most.empty() && len < static_cast<std::int64_t>(at_most.size())) {
      ++at_most[static_cast<std::size_t>(len)];
    }
  }

  void merge(const Accumulator& o) {
    reps += o.reps;
    flagged += o.flagged;
    cap_hits += o.cap_hits;
    s1 += o.s1;
    s2 += o.s2;
    s3 += o.s3;
    s4 += o.s4;
    for (std::size_t i = 0; i < at_most.size(); ++i) at_most[i] += o.at_most[i];
  }
};

/// Runs `one_rep(rng) -> {length, flag, capped}` reps times across workers.
template <class OneRep>
Accumulator run_blocks(std::int64_t reps, std::uint64_t seed, StreamTag tag, int workers,
                       std::int64_t hist_n_max, const OneRep& one_rep) {
  const std::int64_t blocks = (reps + kBlockSize - 1) / kBlockSize;
  const std::size_t hist = hist_n_max >= 0 ? static_cast<std::size_t>(hist_n_max + 1) : 0;
  std::vector<Accumulator> partial(static_cast<std::size_t>(blocks));
  std::atomic<std::int64_t> next{0};

  auto work = [&] {
    for (;;) {
      const std::int64_t k = next.fetch_add(1);
      if (k >= blocks) return;
      auto rng = block_stream(seed, tag, static_cast<std::uint64_t>(k));
      Accumulator& acc = partial[static_cast<std::size_t>(k)];
      acc.at_most.assign(hist, 0);
      const std::int64_t count = std::min(kBlockSize, reps - k * kBlockSize);
      for (std::int64_t r = 0; r < count; ++r) {
        const auto outcome = one_rep(rng);
        acc.add(outcome.length, outcome.flag);
        if (outcome.capped) ++acc.cap_hits;
      }
    }
  };

  const int n_threads =
      static_cast<int>(std::clamp<std::int64_t>(workers > 0 ? workers : default_workers(), 1, blocks));
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
  }

  Accumulator total;
  total.at_most.assign(hist, 0);
  for (const auto& p : partial) total.merge(p);
  return total;
}

struct Outcome {
  std::int64_t length = 0;
  bool flag = false;
  bool capped = false;
};

inline long double to_ld(u128 v) { return static_cast<long double>(v); }

inline SimResult length_stats(const Accumulator& acc) {
  SimResult r;
  r.reps = acc.reps;
  r.cap_hits = acc.cap_hits;
  const long double n = static_cast<long double>(acc.reps);
  const long double m1 = to_ld(acc.s1) / n;
  const long double m2 = to_ld(acc.s2) / n;
  const long double m4 = to_ld(acc.s4) / n;
  r.mean = static_cast<double>(m1);
  r.second_moment = static_cast<double>(m2);
  if (acc.reps > 1) {
    const long double var1 = (to_ld(acc.s2) - to_ld(acc.s1) * m1) / (n - 1.0L);
    const long double var2 = (m4 - m2 * m2) * n / (n - 1.0L);
    r.std_error = static_cast<double>(std::sqrt(std::max(0.0L, var1) / n));
    r.second_moment_se = static_cast<double>(std::sqrt(std::max(0.0L, var2) / n));
  }
  if (!acc.at_most.empty()) {
    r.survival_counts.resize(acc.at_most.size());
    std::int64_t cum = 0;
    for (std::size_t i = 0; i < acc.at_most.size(); ++i) {
      cum += acc.at_most[i];
      r.survival_counts[i] = acc.reps - cum;
    }
  }
  return r;
}

inline void check_cap(const Accumulator& acc, std::int64_t cap) {
  const double frac = static_cast<double>(acc.cap_hits) / static_cast<double>(acc.reps);
  if (frac > kMaxCapHitFraction) {
    throw CapExceededError("step cap " + std::to_string(cap) + " hit by " +
                               std::to_string(100.0 * frac) + "% of replications",
                           frac);
  }
}

}  // namespace mc

/// Z_0 = start, Z_n = Z_{n-1} + log LR_n until Z_n leaves (a, b).  asn is the
/// mean stopping time, oc the fraction of exits at or below a.
template <LogLrModel Model>
SprtSimResult simulate_sprt(const SprtConfig<Model>& config, Hypothesis hyp, double start,
                            const SimOptions& options) {
  config.validate();
  detail::require(config.a < start && start < config.b,
                  "simulation start " + std::to_string(start) + " must lie in (a, b)");
  detail::require(options.reps >= 1, "reps must be at least 1");
  const std::int64_t cap = options.step_cap > 0 ? options.step_cap : 10'000'000;
  const auto tag = hyp == Hypothesis::H0 ? mc::StreamTag::SprtH0 : mc::StreamTag::SprtH1;
  const double a = config.a;
  const double b = config.b;
  const Model& model = config.model;

  const auto acc = mc::run_blocks(
      options.reps, options.seed, tag, options.workers, options.hist_n_max,
      [&](std::mt19937_64& rng) {
        double z = start;
        for (std::int64_t n = 1;; ++n) {
          z += model.sample(hyp, rng);
          if (z <= a) return mc::Outcome{n, true, false};
          if (z >= b) return mc::Outcome{n, false, false};
          if (n == cap) return mc::Outcome{n, false, true};
        }
      });
  mc::check_cap(acc, cap);

  SprtSimResult out;
  out.asn = mc::length_stats(acc);
  const double p = static_cast<double>(acc.flagged) / static_cast<double>(acc.reps);
  out.oc.reps = acc.reps;
  out.oc.mean = p;
  out.oc.std_error = std::sqrt(p * (1.0 - p) / static_cast<double>(acc.reps));
  return out;
}

namespace mc {

template <LogLrModel Model>
Accumulator cusum_runs(const CusumConfig<Model>& config, Hypothesis hyp, std::int64_t reps,
                       std::uint64_t seed, StreamTag tag, int workers, std::int64_t cap,
                       std::int64_t hist_n_max) {
  const double h = config.h;
  const double w = config.w;
  const Model& model = config.model;
  return run_blocks(reps, seed, tag, workers, hist_n_max, [&](std::mt19937_64& rng) {
    double stat = w;
    for (std::int64_t n = 1;; ++n) {
      stat = std::max(0.0, stat + model.sample(hyp, rng));
      if (stat >= h) return Outcome{n, false, false};
      if (n == cap) return Outcome{n, false, true};
    }
  });
}

}  // namespace mc

/// Default CUSUM step cap: 100 x the mean run length of a 10^3-rep pilot.
template <LogLrModel Model>
std::int64_t default_cusum_step_cap(const CusumConfig<Model>& config, Hypothesis hyp,
                                    std::uint64_t seed, int workers = 0) {
  constexpr std::int64_t kPilotReps = 1000;
  constexpr std::int64_t kPilotCap = 100'000'000;
  const auto tag = hyp == Hypothesis::H0 ? mc::StreamTag::CusumPilotH0 : mc::StreamTag::CusumPilotH1;
  const auto acc = mc::cusum_runs(config, hyp, kPilotReps, seed, tag, workers, kPilotCap, -1);
  if (acc.cap_hits > 0) {
    throw CapExceededError("pilot run for the CUSUM step cap did not terminate within " +
                               std::to_string(kPilotCap) + " steps",
                           static_cast<double>(acc.cap_hits) / kPilotReps);
  }
  const double pilot_mean = mc::to_ld(acc.s1) / static_cast<long double>(acc.reps);
  return std::max<std::int64_t>(1000, static_cast<std::int64_t>(std::ceil(100.0 * pilot_mean)));
}

/// W_0 = w, W_n = max(0, W_{n-1} + log LR_n), run length = first n with W_n >= h.
template <LogLrModel Model>
SimResult simulate_cusum(const CusumConfig<Model>& config, Hypothesis hyp,
                         const SimOptions& options) {
  config.validate();
  detail::require(options.reps >= 1, "reps must be at least 1");
  const std::int64_t cap = options.step_cap > 0
                               ? options.step_cap
                               : default_cusum_step_cap(config, hyp, options.seed, options.workers);
  const auto tag = hyp == Hypothesis::H0 ? mc::StreamTag::CusumH0 : mc::StreamTag::CusumH1;
  const auto acc = mc::cusum_runs(config, hyp, options.reps, options.seed, tag, options.workers,
                                  cap, options.hist_n_max);
  mc::check_cap(acc, cap);
  return mc::length_stats(acc);
}

}  // namespace cusumkit
