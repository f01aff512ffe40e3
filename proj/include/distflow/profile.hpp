#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "distflow/model.hpp"

// Sampled solutions of the feeder boundary-value problem and collections of
// coexisting solutions at a fixed length.

namespace distflow {

// A solution satisfying v(0) = 1 and P(L) = Q(L) = 0, sampled on a uniform
// z grid. Summary quantities are filled by the solver that produced it.
struct SolutionProfile {
  std::vector<double> z, P, Q, v;
  double length = 0.0;
  double v_end = 1.0;
  double P0 = 0.0;
  double Q0 = 0.0;
  double residual = 0.0;   // |v(0) - 1| of the producing integration
  double loss = 0.0;       // integral of r (P^2+Q^2)/v^2 over [0, L]
  int reversals = 0;       // sign changes of P(z)
  int branch_id = 0;       // 0 = highest v_end
  bool stable = false;     // stability proxy flag
};

// Coexisting solutions at one target length, ordered by decreasing v_end.
// Empty with critical_length set when the target exceeds the reachable
// length of the method that produced it.
struct BranchSet {
  double length = 0.0;
  std::vector<SolutionProfile> branches;
  std::optional<double> critical_length;
};

namespace detail {

// Sign changes of a sampled function, ignoring samples within the dead band.
inline int count_sign_changes(const std::vector<double>& f, double dead_band) {
  int count = 0;
  int prev = 0;
  for (double x : f) {
    const int s = std::abs(x) <= dead_band ? 0 : (x > 0.0 ? 1 : -1);
    if (s != 0) {
      if (prev != 0 && s != prev) ++count;
      prev = s;
    }
  }
  return count;
}

inline double max_abs(const std::vector<double>& f) {
  double m = 0.0;
  for (double x : f) m = std::max(m, std::abs(x));
  return m;
}

} // namespace detail

} // namespace distflow
