#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "distflow/model.hpp"
#include "distflow/ode.hpp"
#include "distflow/profile.hpp"

// Direct solver for the mixed boundary-value problem. The unknown is the END
// voltage: integrating backward from z = L with (P, Q, v) = (0, 0, v_end)
// satisfies the tail condition exactly and leaves the single residual
// v(0) - 1. Bracketing that residual on a v_end grid enumerates every
// solution in range, including the low-voltage branches, which works for any
// control scheme; the rescaled sweep cannot handle voltage feedback.

namespace distflow {

struct StaleRootError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShootingProblem {
  FeederParams params;
  double v_lo = 0.05;
  double v_hi = 2.0;
  int grid_n = 400;
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double v_floor = 0.05;
  double residual_tol = 1e-9;
  int profile_samples = 513;
};

namespace detail {

inline IntegrateOptions shooting_integrate_options(const ShootingProblem& pr) {
  IntegrateOptions io;
  io.rel_tol = pr.rel_tol;
  io.abs_tol = pr.abs_tol;
  io.guard_index = 2;
  io.floor = pr.v_floor;
  return io;
}

inline Trajectory<4> backward_pass(double v_end, const FeederParams& fp,
                                   const IntegrateOptions& io) {
  return integrate<4>(physical_system(fp), {0.0, 0.0, v_end, 0.0}, fp.length,
                      0.0, io);
}

} // namespace detail

// v(0) - 1 of the backward pass started at (0, 0, v_end_guess). Trajectories
// that hit the voltage floor before reaching the head return -infinity: the
// head voltage undershoots on that side of the family, so the sentinel
// continues the residual's sign.
inline double shoot_residual(double v_end_guess, const FeederParams& fp,
                             const ShootingProblem& pr = {}) {
  if (!(v_end_guess > pr.v_floor))
    throw std::domain_error("shoot_residual: guess at or below voltage floor");
  if (fp.length == 0.0) return v_end_guess - 1.0;
  const auto io = detail::shooting_integrate_options(pr);
  const auto traj = detail::backward_pass(v_end_guess, fp, io);
  if (traj.termination() != Termination::reached_end)
    return -std::numeric_limits<double>::infinity();
  return traj.back_state()[2] - 1.0;
}

// Dense backward re-integration from a converged end voltage, resampled on a
// uniform z grid. Throws StaleRootError when v_end no longer solves the BVP.
inline SolutionProfile profile_from_vend(double v_end, const FeederParams& fp,
                                         int samples = 513,
                                         const ShootingProblem& pr = {}) {
  const auto io = detail::shooting_integrate_options(pr);
  SolutionProfile prof;
  prof.length = fp.length;
  prof.v_end = v_end;
  const int n = std::max(2, samples);
  prof.z.resize(n);
  prof.P.resize(n);
  prof.Q.resize(n);
  prof.v.resize(n);
  if (fp.length == 0.0) {
    if (std::abs(v_end - 1.0) > pr.residual_tol)
      throw StaleRootError("profile_from_vend: zero-length feeder needs v_end = 1");
    for (int i = 0; i < n; ++i) {
      prof.z[i] = 0.0;
      prof.P[i] = prof.Q[i] = 0.0;
      prof.v[i] = 1.0;
    }
    prof.residual = std::abs(v_end - 1.0);
    return prof;
  }
  const auto traj = detail::backward_pass(v_end, fp, io);
  if (traj.termination() != Termination::reached_end)
    throw StaleRootError("profile_from_vend: trajectory lost before the head");
  prof.residual = std::abs(traj.back_state()[2] - 1.0);
  if (prof.residual > std::max(pr.residual_tol, 1e-6))
    throw StaleRootError("profile_from_vend: end voltage does not solve the BVP");
  for (int i = 0; i < n; ++i) {
    const double z = fp.length * i / (n - 1);
    const auto y = traj.eval(z);
    prof.z[i] = z;
    prof.P[i] = y[0];
    prof.Q[i] = y[1];
    prof.v[i] = y[2];
  }
  prof.P.back() = 0.0;
  prof.Q.back() = 0.0;
  prof.v.back() = v_end;
  prof.P0 = traj.back_state()[0];
  prof.Q0 = traj.back_state()[1];
  prof.loss = std::abs(traj.back_state()[3]); // W(L)=0, quadrature runs backward
  prof.reversals =
      detail::count_sign_changes(prof.P, 10.0 * pr.rel_tol * detail::max_abs(prof.P));
  return prof;
}

// Enumerate all solutions at the problem's length: evaluate the residual on
// the v_end grid, bisect every sign change, and build a profile per root.
// Bisection rather than Newton: the residual is non-smooth across the
// voltage-floor sentinel boundary.
inline BranchSet find_branches(const ShootingProblem& pr) {
  validate(pr.params);
  if (!(pr.v_lo > 0.0) || !(pr.v_hi > pr.v_lo) || pr.grid_n < 2)
    throw std::invalid_argument("find_branches: invalid shooting range");
  BranchSet set;
  set.length = pr.params.length;
  if (pr.params.length == 0.0) {
    set.branches.push_back(profile_from_vend(1.0, pr.params,
                                             pr.profile_samples, pr));
    return set;
  }

  const double v_lo = std::max(pr.v_lo, std::nextafter(pr.v_floor, 1.0));
  std::vector<double> grid(pr.grid_n), res(pr.grid_n);
  for (int i = 0; i < pr.grid_n; ++i) {
    grid[i] = v_lo + (pr.v_hi - v_lo) * i / (pr.grid_n - 1);
    res[i] = shoot_residual(grid[i], pr.params, pr);
  }

  std::vector<double> roots;
  for (int i = 0; i + 1 < pr.grid_n; ++i) {
    const double fa = res[i], fb = res[i + 1];
    if (fa == 0.0) {
      roots.push_back(grid[i]);
      continue;
    }
    if ((fa > 0.0) == (fb > 0.0)) continue;
    double lo = grid[i], hi = grid[i + 1];
    const bool pos_lo = fa > 0.0;
    for (int it = 0; it < 100 && (hi - lo) > 1e-15 * std::max(1.0, hi); ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((shoot_residual(mid, pr.params, pr) > 0.0) == pos_lo)
        lo = mid;
      else
        hi = mid;
    }
    roots.push_back(0.5 * (lo + hi));
  }
  if (!res.empty() && res.back() == 0.0) roots.push_back(grid.back());

  for (double r : roots) {
    // a bracket against the floor-hit sentinel can close on the sentinel
    // boundary instead of a zero of the residual; verify before accepting
    try {
      set.branches.push_back(
          profile_from_vend(r, pr.params, pr.profile_samples, pr));
    } catch (const StaleRootError&) {
    }
  }
  std::sort(set.branches.begin(), set.branches.end(),
            [](const auto& a, const auto& b) { return a.v_end > b.v_end; });
  for (std::size_t i = 0; i < set.branches.size(); ++i)
    set.branches[i].branch_id = static_cast<int>(i);
  return set;
}

} // namespace distflow
