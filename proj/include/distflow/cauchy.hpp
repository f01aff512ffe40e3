#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "distflow/model.hpp"
#include "distflow/ode.hpp"
#include "distflow/profile.hpp"

// Single-sweep solution of the mixed feeder problem for constant-q control:
// the rescaled system is integrated forward from the feeder end as a Cauchy
// problem and every point of the sweep is mapped back to a physical feeder of
// some length. Scanning s* yields nose curves, the critical length, and all
// coexisting solutions at a fixed length.

namespace distflow {

struct PhysicalPoint {
  double L = 0.0;
  double v_end = 1.0;
  double P0 = 0.0;
  double Q0 = 0.0;
};

// Map one rescaled sample back to the physical feeder it solves.
inline PhysicalPoint recompute_physical(double s_star, double rho, double tau,
                                        double upsilon, double p, double r) {
  if (!(upsilon > 0.0))
    throw std::domain_error("recompute_physical: non-positive voltage");
  if (p == 0.0 || !(r > 0.0))
    throw std::domain_error("recompute_physical: requires p != 0 and r > 0");
  const double pa = std::abs(p);
  const double f = std::sqrt(pa / r) / upsilon;
  return {s_star / (upsilon * std::sqrt(pa * r)), 1.0 / upsilon, rho * f,
          tau * f};
}

struct ScanSample {
  double s = 0.0;
  double rho = 0.0, tau = 0.0, upsilon = 1.0;
  double loss_q = 0.0; // integral of (rho^2+tau^2)/ups^2 up to s
  PhysicalPoint phys;
};

struct ScanOptions {
  double rel_tol = 1e-9;
  double abs_tol = 1e-12;
  double v_floor = 0.05;
};

class ScanTable {
 public:
  ScanTable(RescaledParams rp, double p, double r, Trajectory<4> traj)
      : rp_(rp), p_(p), r_(r), traj_(std::move(traj)) {
    samples_.reserve(traj_.nodes().size());
    for (std::size_t i = 0; i < traj_.nodes().size(); ++i) {
      const double s = traj_.nodes()[i];
      const auto& y = traj_.states()[i];
      samples_.push_back(
          {s, y[0], y[1], y[2], y[3],
           recompute_physical(s, y[0], y[1], y[2], p_, r_)});
    }
  }

  const RescaledParams& rescaled() const { return rp_; }
  double p() const { return p_; }
  double r() const { return r_; }
  double x() const { return rp_.B * r_; }
  const std::vector<ScanSample>& samples() const { return samples_; }
  Termination termination() const { return traj_.termination(); }
  double s_end() const { return traj_.back_time(); }

  ScanSample at(double s) const {
    const auto y = traj_.eval(s);
    return {s, y[0], y[1], y[2], y[3],
            recompute_physical(s, y[0], y[1], y[2], p_, r_)};
  }

  double length_at(double s) const {
    const auto y = traj_.eval(s);
    return s / (y[2] * std::sqrt(std::abs(p_) * r_));
  }

 private:
  RescaledParams rp_;
  double p_, r_;
  Trajectory<4> traj_;
  std::vector<ScanSample> samples_;
};

// Integrate the rescaled Cauchy problem from (0, 0, 1) at s = 0 up to s_max.
// The sweep stops when upsilon leaves [v_floor, 1/v_floor]; the lower guard
// is the singularity floor, the upper one keeps the mapped end voltage
// 1/upsilon at or above the same physical floor.
inline ScanTable scan(const RescaledParams& rp, double p, double r,
                      double s_max, const ScanOptions& opt = {}) {
  if (!(s_max > 0.0)) throw std::invalid_argument("scan: s_max must be > 0");
  if (p == 0.0 || !(r > 0.0))
    throw std::domain_error("scan: requires p != 0 and r > 0");
  IntegrateOptions io;
  io.rel_tol = opt.rel_tol;
  io.abs_tol = opt.abs_tol;
  io.guard_index = 2;
  io.floor = opt.v_floor;
  io.ceiling = 1.0 / opt.v_floor;
  io.max_step = s_max / 2048.0; // folds can be sharp; keep brackets tight
  auto traj = integrate<4>(rescaled_system(rp), {0.0, 0.0, 1.0, 0.0}, 0.0,
                           s_max, io);
  return ScanTable(rp, p, r, std::move(traj));
}

inline ScanTable scan(const FeederParams& fp, double s_max,
                      const ScanOptions& opt = {}) {
  return scan(rescaled_params(fp), fp.p, fp.r, s_max, opt);
}

struct CriticalLength {
  double L_max = 0.0;
  double s_star = 0.0;
  bool converged = false; // false: scan ended with L still increasing
};

// Global maximum of L(s*) over the scan, refined by a parabolic fit through
// the discrete maximum and its neighbors.
inline CriticalLength critical_length(const ScanTable& table) {
  const auto& smp = table.samples();
  if (smp.size() < 2) throw std::invalid_argument("critical_length: empty scan");
  std::size_t im = 0;
  for (std::size_t i = 1; i < smp.size(); ++i)
    if (smp[i].phys.L > smp[im].phys.L) im = i;
  CriticalLength out;
  if (im + 1 == smp.size()) {
    out.L_max = smp[im].phys.L;
    out.s_star = smp[im].s;
    out.converged = false;
    return out;
  }
  out.converged = true;
  if (im == 0) {
    out.L_max = smp[0].phys.L;
    out.s_star = smp[0].s;
    return out;
  }
  const double s0 = smp[im - 1].s, s1 = smp[im].s, s2 = smp[im + 1].s;
  const double L0 = smp[im - 1].phys.L, L1 = smp[im].phys.L,
               L2 = smp[im + 1].phys.L;
  const double d1 = (L1 - L0) / (s1 - s0), d2 = (L2 - L1) / (s2 - s1);
  const double curv = (d2 - d1) / (0.5 * (s2 - s0));
  double s_star = s1;
  if (curv < 0.0) {
    const double dm = 0.5 * (d1 + d2);
    s_star = std::clamp(0.5 * (s0 + s2) - dm / curv, s0, s2);
  }
  out.s_star = s_star;
  out.L_max = table.length_at(s_star);
  if (out.L_max < L1) { // fit did not improve on the sample
    out.L_max = L1;
    out.s_star = s1;
  }
  return out;
}

struct Fold {
  std::size_t sample_index = 0;
  double s_star = 0.0;
  double L = 0.0;
};

struct NosePoint {
  double s_star = 0.0;
  double L = 0.0;
  double v_end = 1.0;
  double P0 = 0.0;
  double Q0 = 0.0;
  int branch_id = 0;
  bool stable = false;
};

struct NoseSegment {
  std::size_t begin = 0, end = 0; // [begin, end) into points
  int branch_id = 0;
  bool stable = false;
  double dvend_dP0 = 0.0; // finite-difference derivative at the segment middle
};

struct NoseCurve {
  std::vector<NosePoint> points;
  std::vector<Fold> folds;
  std::vector<NoseSegment> segments;
  CriticalLength critical;
};

namespace detail {

// v_end of one monotone-L segment at a given L, by linear interpolation.
// Returns nothing when L is outside the segment's range.
inline std::optional<double> segment_vend_at(const NoseCurve& curve,
                                             const NoseSegment& seg,
                                             double L) {
  for (std::size_t i = seg.begin; i + 1 < seg.end; ++i) {
    const double La = curve.points[i].L, Lb = curve.points[i + 1].L;
    if ((L - La) * (L - Lb) <= 0.0 && La != Lb) {
      const double t = (L - La) / (Lb - La);
      return curve.points[i].v_end +
             t * (curve.points[i + 1].v_end - curve.points[i].v_end);
    }
  }
  return std::nullopt;
}

// Highest-v_end-at-each-L proxy: a segment is flagged stable when it carries
// the top solution at the majority of probe lengths within its own range.
// The raw derivative d v_end / d P0 at the segment middle is recorded so the
// sign criterion can be read under either convention.
inline void apply_stability_proxy(NoseCurve& curve) {
  for (auto& seg : curve.segments) {
    const std::size_t n = seg.end - seg.begin;
    if (n < 2) continue; // degenerate segment stays unflagged
    const std::size_t mid = seg.begin + n / 2;
    const std::size_t lo = mid > seg.begin ? mid - 1 : mid;
    const std::size_t hi = mid + 1 < seg.end ? mid + 1 : mid;
    const double dP = curve.points[hi].P0 - curve.points[lo].P0;
    seg.dvend_dP0 =
        dP != 0.0 ? (curve.points[hi].v_end - curve.points[lo].v_end) / dP
                  : 0.0;

    double Lmin = curve.points[seg.begin].L, Lmax = Lmin;
    for (std::size_t i = seg.begin; i < seg.end; ++i) {
      Lmin = std::min(Lmin, curve.points[i].L);
      Lmax = std::max(Lmax, curve.points[i].L);
    }
    int probes = 0, top = 0;
    for (int k = 1; k <= 5; ++k) {
      const double L = Lmin + (Lmax - Lmin) * k / 6.0;
      const auto own = segment_vend_at(curve, seg, L);
      if (!own) continue;
      ++probes;
      bool is_top = true;
      for (const auto& other : curve.segments) {
        if (&other == &seg) continue;
        const auto ov = segment_vend_at(curve, other, L);
        if (ov && *ov > *own + 1e-12) {
          is_top = false;
          break;
        }
      }
      if (is_top) ++top;
    }
    seg.stable = probes > 0 && 2 * top >= probes;
    for (std::size_t i = seg.begin; i < seg.end; ++i)
      curve.points[i].stable = seg.stable;
  }
}

} // namespace detail

// Continuation curve (s*, L, v_end, P0, Q0) with folds located at sign
// changes of dL/ds*, branch ids counted from s* = 0, and the stability proxy
// applied per segment.
inline NoseCurve nose_curve(const ScanTable& table) {
  const auto& smp = table.samples();
  if (smp.empty()) throw std::invalid_argument("nose_curve: empty scan");
  NoseCurve curve;
  curve.points.reserve(smp.size());
  for (const auto& s : smp)
    curve.points.push_back(
        {s.s, s.phys.L, s.phys.v_end, s.phys.P0, s.phys.Q0, 0, false});

  // folds: sign change of the discrete slope of L(s*)
  int prev_sign = 0;
  for (std::size_t i = 0; i + 1 < smp.size(); ++i) {
    const double dL = smp[i + 1].phys.L - smp[i].phys.L;
    const int sg = dL > 0.0 ? 1 : (dL < 0.0 ? -1 : 0);
    if (sg != 0) {
      if (prev_sign != 0 && sg != prev_sign) {
        // refine the extremum by a parabola through (i-1, i, i+1)
        const double sa = smp[i - 1].s, sb = smp[i].s, sc = smp[i + 1].s;
        const double La = smp[i - 1].phys.L, Lb = smp[i].phys.L,
                     Lc = smp[i + 1].phys.L;
        const double d1 = (Lb - La) / (sb - sa), d2 = (Lc - Lb) / (sc - sb);
        const double curvature = (d2 - d1) / (0.5 * (sc - sa));
        double s_f = sb;
        if (curvature != 0.0)
          s_f = std::clamp(0.5 * (sa + sc) - 0.5 * (d1 + d2) / curvature, sa,
                           sc);
        curve.folds.push_back({i, s_f, table.length_at(s_f)});
      }
      prev_sign = sg;
    }
  }

  // segments and branch ids
  std::size_t begin = 0;
  int id = 0;
  auto close_segment = [&](std::size_t end) {
    if (end > begin) {
      for (std::size_t i = begin; i < end; ++i)
        curve.points[i].branch_id = id;
      curve.segments.push_back({begin, end, id, false, 0.0});
      ++id;
    }
    begin = end;
  };
  for (const auto& f : curve.folds) close_segment(f.sample_index + 1);
  close_segment(curve.points.size());

  curve.critical = critical_length(table);
  detail::apply_stability_proxy(curve);
  return curve;
}

// All physical solutions of length L_target contained in the scan: roots of
// L(s*) = L_target bracketed on consecutive samples and refined by bisection
// on the dense trajectory. Empty with the critical length attached when the
// target lies beyond the nose tip.
inline BranchSet solutions_at_length(const ScanTable& table, double L_target,
                                     const FeederParams& params,
                                     int profile_samples = 513) {
  if (!(L_target > 0.0))
    throw std::invalid_argument("solutions_at_length: L_target must be > 0");
  const auto& smp = table.samples();
  std::vector<double> roots;
  for (std::size_t i = 0; i + 1 < smp.size(); ++i) {
    const double fa = smp[i].phys.L - L_target;
    const double fb = smp[i + 1].phys.L - L_target;
    if (fa == 0.0) {
      roots.push_back(smp[i].s);
      continue;
    }
    if (fa * fb < 0.0) {
      double lo = smp[i].s, hi = smp[i + 1].s;
      const bool pos_lo = fa > 0.0;
      for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        if ((table.length_at(mid) - L_target > 0.0) == pos_lo)
          lo = mid;
        else
          hi = mid;
      }
      roots.push_back(0.5 * (lo + hi));
    }
  }
  if (!smp.empty() && smp.back().phys.L == L_target) roots.push_back(smp.back().s);

  BranchSet set;
  set.length = L_target;
  if (roots.empty()) {
    set.critical_length = critical_length(table).L_max;
    return set;
  }

  const double pa = std::abs(table.p());
  const double rr = table.r();
  for (double s_star : roots) {
    const auto tip = table.at(s_star);
    const auto& ph = tip.phys;
    SolutionProfile prof;
    prof.length = L_target;
    prof.v_end = ph.v_end;
    prof.P0 = ph.P0;
    prof.Q0 = ph.Q0;
    prof.residual = 0.0; // the rescaled map satisfies v(0)=1 by construction
    const double v_L = ph.v_end;
    const double flow_scale = v_L * std::sqrt(pa / rr);
    prof.loss = flow_scale * tip.loss_q; // loss over [0, L] in physical units
    const int n = std::max(2, profile_samples);
    prof.z.resize(n);
    prof.P.resize(n);
    prof.Q.resize(n);
    prof.v.resize(n);
    const double srt = std::sqrt(pa * rr);
    for (int i = 0; i < n; ++i) {
      const double z = L_target * i / (n - 1);
      const double s = srt * (L_target - z) / v_L;
      const auto y = table.at(std::min(s, s_star));
      prof.z[i] = z;
      prof.P[i] = y.rho * flow_scale;
      prof.Q[i] = y.tau * flow_scale;
      prof.v[i] = y.upsilon * v_L;
    }
    // exact boundary values at both ends
    prof.P.back() = 0.0;
    prof.Q.back() = 0.0;
    prof.v.back() = v_L;
    prof.v.front() = 1.0;
    prof.reversals = detail::count_sign_changes(
        prof.P, 10.0 * 1e-9 * detail::max_abs(prof.P));
    set.branches.push_back(std::move(prof));
  }
  std::sort(set.branches.begin(), set.branches.end(),
            [](const auto& a, const auto& b) { return a.v_end > b.v_end; });
  for (std::size_t i = 0; i < set.branches.size(); ++i)
    set.branches[i].branch_id = static_cast<int>(i);
  (void)params;
  return set;
}

} // namespace distflow
