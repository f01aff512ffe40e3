#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "distflow/model.hpp"
#include "distflow/profile.hpp"
#include "distflow/shooting.hpp"

// Finite-element DistFlow recursion. Buses are k = 0..N with v_k at each;
// segment k = 0..N-1 carries the flows (P_k, Q_k) from bus k to k+1 and the
// lumped impedance (r_k, x_k); the lumped injection (p_k, q_k) sits at bus k.
// Boundary conditions: v_0 = 1 and P_N = Q_N = 0.
//
// The reactive-balance recursion uses the loss term (P^2+Q^2)/v^2, matching
// the real-power balance and the continuum limit.

namespace distflow {

struct DiscreteFeeder {
  std::vector<double> r, x;    // per segment, size N
  std::vector<double> p, q;    // lumped constant injections per bus, size N
  std::vector<double> len;     // segment lengths, size N
  ControlScheme control = ConstantQ{0.0};
  std::optional<LowVoltageRamp> ramp;
  double p_density = 0.0; // density behind the lumped p, for control laws

  std::size_t bus_count() const { return r.size(); }
  double total_length() const {
    double L = 0.0;
    for (double l : len) L += l;
    return L;
  }

  double lumped_p(std::size_t k, double v) const {
    if (!ramp) return p[k];
    if (v <= ramp->v_cut) return 0.0;
    if (v >= ramp->v_full) return p[k];
    return p[k] * (v - ramp->v_cut) / (ramp->v_full - ramp->v_cut);
  }

  double lumped_q(std::size_t k, double v) const {
    if (std::holds_alternative<VoltageFeedback>(control))
      return control_q(control, v, p_density) * len[k];
    return q[k];
  }
};

struct DiscreteSolution {
  std::vector<double> P, Q, v; // size N+1; P[N] = Q[N] = 0, v[0] = 1
  double v_end = 1.0;          // v[N]
  double P0 = 0.0, Q0 = 0.0;
  double head_residual = 0.0;  // |v[0] - 1| of the backward reconstruction
};

// Lump the homogeneous densities onto N uniform segments.
inline DiscreteFeeder build_discrete(const FeederParams& fp, int N) {
  validate(fp);
  if (N < 1) throw std::invalid_argument("build_discrete: N must be >= 1");
  const double l = fp.length / N;
  DiscreteFeeder f;
  const auto n = static_cast<std::size_t>(N);
  f.r.assign(n, fp.r * l);
  f.x.assign(n, fp.x * l);
  f.p.assign(n, fp.p * l);
  const double qd = std::holds_alternative<ConstantQ>(fp.control)
                        ? std::get<ConstantQ>(fp.control).q
                        : 0.0;
  f.q.assign(n, qd * l);
  f.len.assign(n, l);
  f.control = fp.control;
  f.ramp = fp.p_regularization;
  f.p_density = fp.p;
  return f;
}

struct SweepResult {
  std::vector<double> P, Q, v; // bus states actually reached
  bool complete = false;       // false when the voltage floor was hit
  double P_end = 0.0, Q_end = 0.0;
};

// Apply the three recursions forward from v_0 = 1 and the given head flows.
inline SweepResult forward_sweep(double P0, double Q0,
                                 const DiscreteFeeder& f,
                                 double v_floor = 0.05) {
  const std::size_t N = f.bus_count();
  SweepResult out;
  out.P.reserve(N + 1);
  out.Q.reserve(N + 1);
  out.v.reserve(N + 1);
  out.P.push_back(P0);
  out.Q.push_back(Q0);
  out.v.push_back(1.0);
  for (std::size_t k = 0; k < N; ++k) {
    const double P = out.P[k], Q = out.Q[k], v = out.v[k];
    const double g = (P * P + Q * Q) / (v * v);
    const double Pn = P + f.lumped_p(k, v) - f.r[k] * g;
    const double Qn = Q + f.lumped_q(k, v) - f.x[k] * g;
    const double v2 = v * v - 2.0 * (f.r[k] * P + f.x[k] * Q) -
                      (f.r[k] * f.r[k] + f.x[k] * f.x[k]) * g;
    if (!(v2 > v_floor * v_floor)) return out;
    out.P.push_back(Pn);
    out.Q.push_back(Qn);
    out.v.push_back(std::sqrt(v2));
  }
  out.complete = true;
  out.P_end = out.P.back();
  out.Q_end = out.Q.back();
  return out;
}

namespace detail {

// One backward step: given (P_{k+1}, Q_{k+1}, v_{k+1}), solve the three
// implicit balance equations for (P_k, Q_k, v_k) by damped Newton with a
// numerical Jacobian. Returns false on non-convergence or a sub-floor voltage.
inline bool backward_step(const DiscreteFeeder& f, std::size_t k, double Pn,
                          double Qn, double vn, double& Pk, double& Qk,
                          double& vk, double v_floor) {
  const double rk = f.r[k], xk = f.x[k];
  auto F = [&](const double u[3], double out[3]) {
    const double g = (u[0] * u[0] + u[1] * u[1]) / (u[2] * u[2]);
    out[0] = Pn - u[0] - f.lumped_p(k, u[2]) + rk * g;
    out[1] = Qn - u[1] - f.lumped_q(k, u[2]) + xk * g;
    out[2] = vn * vn - u[2] * u[2] + 2.0 * (rk * u[0] + xk * u[1]) +
             (rk * rk + xk * xk) * g;
  };
  double u[3] = {Pn - f.lumped_p(k, vn), Qn - f.lumped_q(k, vn), vn};
  double fv[3];
  if (!(u[2] > v_floor)) return false;
  F(u, fv);
  double fnorm = std::abs(fv[0]) + std::abs(fv[1]) + std::abs(fv[2]);
  for (int it = 0; it < 50; ++it) {
    if (fnorm < 1e-12) {
      Pk = u[0];
      Qk = u[1];
      vk = u[2];
      return true;
    }
    // numerical Jacobian
    double J[3][3];
    for (int j = 0; j < 3; ++j) {
      const double h = 1e-7 * std::max(1.0, std::abs(u[j]));
      double up[3] = {u[0], u[1], u[2]};
      up[j] += h;
      if (j == 2 && !(up[2] > 0.0)) return false;
      double fp[3];
      F(up, fp);
      for (int i = 0; i < 3; ++i) J[i][j] = (fp[i] - fv[i]) / h;
    }
    // solve J d = -F by Gaussian elimination with partial pivoting
    double A[3][4] = {{J[0][0], J[0][1], J[0][2], -fv[0]},
                      {J[1][0], J[1][1], J[1][2], -fv[1]},
                      {J[2][0], J[2][1], J[2][2], -fv[2]}};
    for (int c = 0; c < 3; ++c) {
      int piv = c;
      for (int r2 = c + 1; r2 < 3; ++r2)
        if (std::abs(A[r2][c]) > std::abs(A[piv][c])) piv = r2;
      if (A[piv][c] == 0.0) return false;
      if (piv != c) std::swap(A[piv], A[c]);
      for (int r2 = 0; r2 < 3; ++r2) {
        if (r2 == c) continue;
        const double m = A[r2][c] / A[c][c];
        for (int cc = c; cc < 4; ++cc) A[r2][cc] -= m * A[c][cc];
      }
    }
    double d[3] = {A[0][3] / A[0][0], A[1][3] / A[1][1], A[2][3] / A[2][2]};
    // damped update: halve until the residual shrinks
    double lambda = 1.0;
    for (int half = 0; half < 30; ++half) {
      double ut[3] = {u[0] + lambda * d[0], u[1] + lambda * d[1],
                      u[2] + lambda * d[2]};
      if (ut[2] > v_floor) {
        double ft[3];
        F(ut, ft);
        const double fn = std::abs(ft[0]) + std::abs(ft[1]) + std::abs(ft[2]);
        if (fn < fnorm || fn < 1e-12) {
          u[0] = ut[0];
          u[1] = ut[1];
          u[2] = ut[2];
          fv[0] = ft[0];
          fv[1] = ft[1];
          fv[2] = ft[2];
          fnorm = fn;
          break;
        }
      }
      lambda *= 0.5;
      if (half == 29) return false;
    }
  }
  return fnorm < 1e-10 ? (Pk = u[0], Qk = u[1], vk = u[2], true) : false;
}

// Head-voltage residual v_0 - 1 of a backward reconstruction from terminal
// voltage v_N. Infeasible sweeps (floor hit, Newton failure) return -infinity.
inline double discrete_residual(const DiscreteFeeder& f, double v_N,
                                double v_floor,
                                std::vector<double>* P_out = nullptr,
                                std::vector<double>* Q_out = nullptr,
                                std::vector<double>* v_out = nullptr) {
  const std::size_t N = f.bus_count();
  std::vector<double> P(N + 1), Q(N + 1), v(N + 1);
  P[N] = 0.0;
  Q[N] = 0.0;
  v[N] = v_N;
  for (std::size_t k = N; k-- > 0;) {
    if (!backward_step(f, k, P[k + 1], Q[k + 1], v[k + 1], P[k], Q[k], v[k],
                       v_floor))
      return -std::numeric_limits<double>::infinity();
  }
  if (P_out) *P_out = std::move(P);
  if (Q_out) *Q_out = std::move(Q);
  if (v_out) *v_out = std::move(v);
  const double v0 = v_out ? (*v_out)[0] : v[0];
  return v0 - 1.0;
}

} // namespace detail

// Enumerate all discrete solutions by the same outer 1-D scan over the
// terminal voltage used in the shooting module.
inline std::vector<DiscreteSolution> solve_discrete(const DiscreteFeeder& f,
                                                    double v_lo = 0.05,
                                                    double v_hi = 2.0,
                                                    int grid_n = 400,
                                                    double v_floor = 0.05) {
  if (!(v_lo > 0.0) || !(v_hi > v_lo) || grid_n < 2)
    throw std::invalid_argument("solve_discrete: invalid terminal range");
  std::vector<double> grid(grid_n), res(grid_n);
  for (int i = 0; i < grid_n; ++i) {
    grid[i] = v_lo + (v_hi - v_lo) * i / (grid_n - 1);
    res[i] = detail::discrete_residual(f, grid[i], v_floor);
  }
  std::vector<double> roots;
  for (int i = 0; i + 1 < grid_n; ++i) {
    const double fa = res[i], fb = res[i + 1];
    if (fa == 0.0) {
      roots.push_back(grid[i]);
      continue;
    }
    if ((fa > 0.0) == (fb > 0.0)) continue;
    double lo = grid[i], hi = grid[i + 1];
    const bool pos_lo = fa > 0.0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((detail::discrete_residual(f, mid, v_floor) > 0.0) == pos_lo)
        lo = mid;
      else
        hi = mid;
    }
    roots.push_back(0.5 * (lo + hi));
  }
  if (!res.empty() && res.back() == 0.0) roots.push_back(grid.back());

  std::vector<DiscreteSolution> sols;
  for (double r : roots) {
    DiscreteSolution s;
    const double resid =
        detail::discrete_residual(f, r, v_floor, &s.P, &s.Q, &s.v);
    if (!std::isfinite(resid)) continue;
    s.head_residual = std::abs(resid);
    s.v[0] = 1.0; // pin the head exactly; the residual records the defect
    s.v_end = s.v.back();
    s.P0 = s.P.front();
    s.Q0 = s.Q.front();
    sols.push_back(std::move(s));
  }
  std::sort(sols.begin(), sols.end(),
            [](const auto& a, const auto& b) { return a.v_end > b.v_end; });
  return sols;
}

struct ConvergenceRow {
  int N = 0;
  bool solved = false;
  double sup_P = 0.0, sup_Q = 0.0, sup_v = 0.0;
};

// Sup-norm error of the top discrete branch against a tight-tolerance ODE
// reference, per N. Rows that fail to solve are recorded, not thrown.
inline std::vector<ConvergenceRow> convergence_study(
    const FeederParams& fp, const std::vector<int>& N_list,
    double v_lo = 0.05, double v_hi = 2.0, int grid_n = 400) {
  if (N_list.empty())
    throw std::invalid_argument("convergence_study: empty N list");

  // reference: top branch at tight tolerance, kept as a dense trajectory
  ShootingProblem pr;
  pr.params = fp;
  pr.v_lo = v_lo;
  pr.v_hi = v_hi;
  pr.grid_n = grid_n;
  pr.rel_tol = 1e-12;
  pr.abs_tol = 1e-14;
  const auto ref_set = find_branches(pr);
  if (ref_set.branches.empty())
    throw std::runtime_error("convergence_study: no ODE reference branch");
  const double ref_vend = ref_set.branches.front().v_end;
  const auto ref_traj = detail::backward_pass(
      ref_vend, fp, detail::shooting_integrate_options(pr));

  std::vector<ConvergenceRow> rows;
  for (int N : N_list) {
    ConvergenceRow row;
    row.N = N;
    const auto feeder = build_discrete(fp, N);
    const auto sols = solve_discrete(feeder, v_lo, v_hi, grid_n);
    if (!sols.empty()) {
      const auto& top = sols.front();
      row.solved = true;
      for (int k = 0; k <= N; ++k) {
        const double z = fp.length * k / N;
        const auto y = ref_traj.eval(z);
        row.sup_P = std::max(row.sup_P, std::abs(top.P[k] - y[0]));
        row.sup_Q = std::max(row.sup_Q, std::abs(top.Q[k] - y[1]));
        row.sup_v = std::max(row.sup_v, std::abs(top.v[k] - y[2]));
      }
    }
    rows.push_back(row);
  }
  return rows;
}

} // namespace distflow
