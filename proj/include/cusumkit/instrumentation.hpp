#pragma once

#include <cstdint>

namespace cusumkit::instrumentation {

/// Per-thread tallies of the expensive steps.  Operations snapshot these
/// before and after to report how many kernel assemblies and LU
/// factorizations they actually performed.
struct Counters {
  std::int64_t assemblies = 0;
  std::int64_t factorizations = 0;
};

inline Counters& counters() {
  thread_local Counters c;
  return c;
}

/// Difference between now and the moment of construction.
class Scope {
 public:
  Scope() : start_(counters()) {}

  Counters delta() const {
    const Counters& now = counters();
    return {now.assemblies - start_.assemblies, now.factorizations - start_.factorizations};
  }

 private:
  Counters start_;
};

}  // namespace cusumkit::instrumentation
