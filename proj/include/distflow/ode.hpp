#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "distflow/model.hpp"

// Right-hand sides of the physical and rescaled feeder ODEs, and an adaptive
// Dormand-Prince 5(4) integrator with dense output and voltage guard events.

namespace distflow {

// State along the physical feeder coordinate z: real flow, reactive flow,
// voltage magnitude.
struct LineState {
  double P = 0.0;
  double Q = 0.0;
  double v = 1.0;
};

// State of the rescaled system in the end-anchored coordinate s.
struct RescaledState {
  double rho = 0.0;
  double tau = 0.0;
  double upsilon = 1.0;
};

// d(P, Q, v)/dz. The loss density (P^2+Q^2)/v^2 enters all three components.
inline LineState rhs_physical(const LineState& st, const FeederParams& fp) {
  if (!(st.v > 0.0))
    throw SingularityError("physical rhs evaluated at non-positive voltage");
  const double g = (st.P * st.P + st.Q * st.Q) / (st.v * st.v);
  const double pe = effective_p(fp, st.v);
  const double qe = control_q(fp.control, st.v, fp.p);
  return {pe - fp.r * g, qe - fp.x * g, -(fp.r * st.P + fp.x * st.Q) / st.v};
}

// d(rho, tau, upsilon)/ds for the rescaled system, forward in s.
inline RescaledState rhs_rescaled(const RescaledState& st,
                                  const RescaledParams& rp) {
  if (!(st.upsilon > 0.0))
    throw SingularityError("rescaled rhs evaluated at non-positive voltage");
  const double g =
      (st.rho * st.rho + st.tau * st.tau) / (st.upsilon * st.upsilon);
  return {-(rp.sign_p - g), -(rp.A - rp.B * g),
          (st.rho + rp.B * st.tau) / st.upsilon};
}

enum class Termination { reached_end, voltage_floor, voltage_ceiling, step_failure };

struct IntegrateOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double max_step = std::numeric_limits<double>::infinity();
  // Component guarded against collapse/blow-up; -1 disables the guard.
  int guard_index = -1;
  double floor = 0.05;
  double ceiling = std::numeric_limits<double>::infinity();
};

// Piecewise quintic-free interpolating trajectory produced by the integrator.
// Samples are stored at every accepted step; eval() uses the local DOPRI5
// interpolant of the step containing the query point.
template <std::size_t N>
class Trajectory {
 public:
  using Vec = std::array<double, N>;

  struct Step {
    double t0, h;              // step start and signed width
    std::array<Vec, 5> rcont;  // dense-output coefficients
  };

  double front_time() const { return nodes_.front(); }
  double back_time() const { return nodes_.back(); }
  const Vec& front_state() const { return states_.front(); }
  const Vec& back_state() const { return states_.back(); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<Vec>& states() const { return states_; }
  Termination termination() const { return term_; }
  bool forward() const { return nodes_.back() >= nodes_.front(); }

  // Dense evaluation; t is clamped to the covered range.
  Vec eval(double t) const {
    if (steps_.empty()) return states_.front();
    const bool fwd = forward();
    double lo = fwd ? nodes_.front() : nodes_.back();
    double hi = fwd ? nodes_.back() : nodes_.front();
    t = std::clamp(t, lo, hi);
    // locate the step whose interval contains t
    std::size_t a = 0, b = steps_.size() - 1;
    while (a < b) {
      std::size_t m = (a + b) / 2;
      const double end = nodes_[m + 1];
      if (fwd ? (t <= end) : (t >= end))
        b = m;
      else
        a = m + 1;
    }
    const Step& st = steps_[a];
    const double th = (t - st.t0) / st.h;
    const double th1 = 1.0 - th;
    Vec out;
    for (std::size_t i = 0; i < N; ++i) {
      out[i] = st.rcont[0][i] +
               th * (st.rcont[1][i] +
                     th1 * (st.rcont[2][i] +
                            th * (st.rcont[3][i] + th1 * st.rcont[4][i])));
    }
    return out;
  }

 private:
  std::vector<double> nodes_;
  std::vector<Vec> states_;
  std::vector<Step> steps_;
  Termination term_ = Termination::reached_end;

  template <std::size_t M, class RHS>
  friend Trajectory<M> integrate(RHS&& rhs, const std::array<double, M>& y0,
                                 double a, double b, const IntegrateOptions&);
};

namespace detail {

// Dormand-Prince 5(4) tableau (Hairer-Norsett-Wanner DOPRI5).
inline constexpr double dp_c[7] = {0.0,     1.0 / 5, 3.0 / 10, 4.0 / 5,
                                   8.0 / 9, 1.0,     1.0};
inline constexpr double dp_a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
inline constexpr double dp_e[7] = {71.0 / 57600,     0.0,
                                   -71.0 / 16695,    71.0 / 1920,
                                   -17253.0 / 339200, 22.0 / 525,
                                   -1.0 / 40};
inline constexpr double dp_d[7] = {-12715105075.0 / 11282082432.0,
                                   0.0,
                                   87487479700.0 / 32700410799.0,
                                   -10690763975.0 / 1880347072.0,
                                   701980252875.0 / 199316789632.0,
                                   -1453857185.0 / 822651844.0,
                                   69997945.0 / 29380423.0};

} // namespace detail

// Adaptive explicit integration of dy/dt = rhs(t, y) over [a, b] (either
// direction). Local error per step is controlled against
// abs_tol + rel_tol * |y|. When guard_index >= 0 the integration stops at the
// parameter value where that component crosses the floor or ceiling, located
// on the dense interpolant. Step-size underflow is recorded as a termination
// reason, not thrown.
template <std::size_t N, class RHS>
Trajectory<N> integrate(RHS&& rhs, const std::array<double, N>& y0, double a,
                        double b, const IntegrateOptions& opt = {}) {
  using Vec = std::array<double, N>;
  Trajectory<N> traj;
  traj.nodes_.push_back(a);
  traj.states_.push_back(y0);
  if (a == b) return traj;

  const double dir = b > a ? 1.0 : -1.0;
  const double span = std::abs(b - a);
  const int gi = opt.guard_index;

  auto guarded = [&](double t, const Vec& y, Vec& dy) -> bool {
    if (gi >= 0 && !(y[static_cast<std::size_t>(gi)] > 0.0)) return false;
    rhs(t, y, dy);
    for (double d : dy)
      if (!std::isfinite(d)) return false;
    return true;
  };

  double t = a;
  Vec y = y0;
  Vec k1;
  if (!guarded(t, y, k1)) {
    traj.term_ = Termination::step_failure;
    return traj;
  }

  // initial step heuristic
  double ynorm = 0.0, fnorm = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double sc = opt.abs_tol + opt.rel_tol * std::abs(y[i]);
    ynorm += (y[i] / sc) * (y[i] / sc);
    fnorm += (k1[i] / sc) * (k1[i] / sc);
  }
  double h = 0.01 * std::sqrt((ynorm + 1e-30) / (fnorm + 1e-30));
  h = std::min({h, span / 10.0, opt.max_step});
  h = std::max(h, 1e-10 * span);
  h *= dir;

  Vec k[7];
  const double hmin_rel = 16.0 * std::numeric_limits<double>::epsilon();

  while (dir * (b - t) > 0.0) {
    if (std::abs(h) > opt.max_step) h = dir * opt.max_step;
    if (dir * (t + h - b) > 0.0) h = b - t;
    if (std::abs(h) <= hmin_rel * std::max(std::abs(t), 1.0)) {
      traj.term_ = Termination::step_failure;
      return traj;
    }

    k[0] = k1;
    Vec ytmp, ynew, yerr;
    bool stage_ok = true;
    for (int s = 1; s < 7 && stage_ok; ++s) {
      for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int j = 0; j < s; ++j) acc += detail::dp_a[s][j] * k[j][i];
        ytmp[i] = y[i] + h * acc;
      }
      stage_ok = guarded(t + detail::dp_c[s] * h, ytmp, k[s]);
    }
    if (!stage_ok) {
      h *= 0.5;
      continue;
    }
    ynew = ytmp; // stage 7 uses the 5th-order weights: FSAL
    double err = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double e = 0.0;
      for (int j = 0; j < 7; ++j) e += detail::dp_e[j] * k[j][i];
      e *= h;
      const double sc = opt.abs_tol +
                        opt.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      err += (e / sc) * (e / sc);
    }
    err = std::sqrt(err / N);
    if (!std::isfinite(err)) {
      h *= 0.5;
      continue;
    }
    if (err > 1.0) {
      h *= std::max(0.2, 0.9 * std::pow(err, -0.2));
      continue;
    }

    // accepted: build dense-output coefficients
    typename Trajectory<N>::Step step;
    step.t0 = t;
    step.h = h;
    for (std::size_t i = 0; i < N; ++i) {
      const double dy = ynew[i] - y[i];
      double d5 = 0.0;
      for (int j = 0; j < 7; ++j) d5 += detail::dp_d[j] * k[j][i];
      step.rcont[0][i] = y[i];
      step.rcont[1][i] = dy;
      step.rcont[2][i] = h * k[0][i] - dy;
      step.rcont[3][i] = dy - h * k[6][i] - step.rcont[2][i];
      step.rcont[4][i] = h * d5;
    }

    const double tnew = t + h;
    bool stop = false;
    Termination stop_reason = Termination::reached_end;
    double tstop = tnew;
    if (gi >= 0) {
      const std::size_t g = static_cast<std::size_t>(gi);
      const double vg = ynew[g];
      const bool below = vg <= opt.floor;
      const bool above = vg >= opt.ceiling;
      if (below || above) {
        const double target = below ? opt.floor : opt.ceiling;
        stop_reason =
            below ? Termination::voltage_floor : Termination::voltage_ceiling;
        stop = true;
        // bisect the crossing on the dense interpolant
        double lo = 0.0, hi = 1.0; // theta within the step
        auto value = [&](double th) {
          const double th1 = 1.0 - th;
          return step.rcont[0][g] +
                 th * (step.rcont[1][g] +
                       th1 * (step.rcont[2][g] +
                              th * (step.rcont[3][g] + th1 * step.rcont[4][g]))) -
                 target;
        };
        const double f_lo = value(0.0);
        if ((f_lo > 0.0) != (value(1.0) > 0.0)) {
          for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            if ((value(mid) > 0.0) == (f_lo > 0.0))
              lo = mid;
            else
              hi = mid;
          }
        } else {
          lo = hi = 1.0;
        }
        const double th = 0.5 * (lo + hi);
        tstop = t + th * h;
        const double th1 = 1.0 - th;
        for (std::size_t i = 0; i < N; ++i) {
          ynew[i] = step.rcont[0][i] +
                    th * (step.rcont[1][i] +
                          th1 * (step.rcont[2][i] +
                                 th * (step.rcont[3][i] + th1 * step.rcont[4][i])));
        }
        step.h = tstop - t;
        if (step.h == 0.0) {
          // crossing at the step start: drop the step entirely
          traj.term_ = stop_reason;
          return traj;
        }
      }
    }

    traj.steps_.push_back(step);
    traj.nodes_.push_back(tstop);
    traj.states_.push_back(ynew);
    if (stop) {
      traj.term_ = stop_reason;
      return traj;
    }

    t = tnew;
    y = ynew;
    k1 = k[6]; // FSAL
    h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(err, 1e-10), -0.2)));
  }
  traj.term_ = Termination::reached_end;
  return traj;
}

// Integrator-facing adapters -------------------------------------------------

// Physical system augmented with the resistive-loss quadrature
// W' = r (P^2+Q^2)/v^2; state layout (P, Q, v, W).
inline auto physical_system(const FeederParams& fp) {
  return [fp](double /*z*/, const std::array<double, 4>& y,
              std::array<double, 4>& dy) {
    const double g = (y[0] * y[0] + y[1] * y[1]) / (y[2] * y[2]);
    dy[0] = effective_p(fp, y[2]) - fp.r * g;
    dy[1] = control_q(fp.control, y[2], fp.p) - fp.x * g;
    dy[2] = -(fp.r * y[0] + fp.x * y[1]) / y[2];
    dy[3] = fp.r * g;
  };
}

// Rescaled system augmented with the loss quadrature G' = (rho^2+tau^2)/ups^2;
// state layout (rho, tau, upsilon, G).
inline auto rescaled_system(const RescaledParams& rp) {
  return [rp](double /*s*/, const std::array<double, 4>& y,
              std::array<double, 4>& dy) {
    const double g = (y[0] * y[0] + y[1] * y[1]) / (y[2] * y[2]);
    dy[0] = -(rp.sign_p - g);
    dy[1] = -(rp.A - rp.B * g);
    dy[2] = (y[0] + rp.B * y[1]) / y[2];
    dy[3] = g;
  };
}

} // namespace distflow
