#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "distflow/cauchy.hpp"
#include "distflow/model.hpp"
#include "distflow/profile.hpp"

// Post-processing: stability proxy over nose curves, flow reversals, losses
// and utilization, and profile comparison.

namespace distflow {

// Re-apply (or apply) the stability proxy to a nose curve: per inter-fold
// segment, the flag marks the segment carrying the highest v_end at each
// common length, and the raw derivative d v_end / d P0 is reported so the
// sign criterion can be read under either convention.
inline void classify_stability(NoseCurve& curve) {
  if (curve.segments.empty())
    throw std::invalid_argument("classify_stability: curve has no segments");
  detail::apply_stability_proxy(curve);
}

// Sign changes of P(z), ignoring samples below a dead band of
// 10 * tol * max|P| to avoid counting noise near the feeder tail.
inline int count_flow_reversals(const SolutionProfile& prof,
                                double tol = 1e-9) {
  if (prof.P.size() < 2)
    throw std::invalid_argument("count_flow_reversals: need >= 2 samples");
  return detail::count_sign_changes(prof.P,
                                    10.0 * tol * detail::max_abs(prof.P));
}

struct LossUtilization {
  double loss = 0.0;
  std::optional<double> utilization; // undefined when p = 0
};

// Resistive loss by quadrature over the profile and the head-to-line power
// ratio: P(0)/(-p L) in consumption, |P(0)|/(p L) in generation.
inline LossUtilization losses_and_utilization(const SolutionProfile& prof,
                                              const FeederParams& fp) {
  LossUtilization out;
  if (prof.loss > 0.0) {
    out.loss = prof.loss; // quadrature already carried by the solver
  } else {
    // trapezoid over the stored samples
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < prof.z.size(); ++i) {
      auto dens = [&](std::size_t j) {
        return fp.r * (prof.P[j] * prof.P[j] + prof.Q[j] * prof.Q[j]) /
               (prof.v[j] * prof.v[j]);
      };
      acc += 0.5 * (dens(i) + dens(i + 1)) * (prof.z[i + 1] - prof.z[i]);
    }
    out.loss = acc;
  }
  if (fp.p != 0.0 && prof.length > 0.0) {
    out.utilization = fp.p < 0.0
                          ? prof.P0 / (-fp.p * prof.length)
                          : std::abs(prof.P0) / (fp.p * prof.length);
  }
  return out;
}

struct ProfileDistance {
  double sup_P = 0.0, sup_Q = 0.0, sup_v = 0.0;
  double l2_P = 0.0, l2_Q = 0.0, l2_v = 0.0;
};

namespace detail {

inline double interp(const std::vector<double>& zs,
                     const std::vector<double>& fs, double z) {
  if (z <= zs.front()) return fs.front();
  if (z >= zs.back()) return fs.back();
  std::size_t lo = 0, hi = zs.size() - 1;
  while (hi - lo > 1) {
    const std::size_t m = (lo + hi) / 2;
    (zs[m] <= z ? lo : hi) = m;
  }
  const double t = (z - zs[lo]) / (zs[hi] - zs[lo]);
  return fs[lo] + t * (fs[hi] - fs[lo]);
}

} // namespace detail

// Per-field sup and L2 norms of the difference after common-grid
// interpolation over the overlap of the two z ranges.
inline ProfileDistance compare_profiles(const SolutionProfile& a,
                                        const SolutionProfile& b,
                                        int grid_n = 1024) {
  const double lo = std::max(a.z.front(), b.z.front());
  const double hi = std::min(a.z.back(), b.z.back());
  if (!(hi >= lo))
    throw std::domain_error("compare_profiles: disjoint z ranges");
  ProfileDistance d;
  double s2P = 0.0, s2Q = 0.0, s2v = 0.0;
  const int n = std::max(2, grid_n);
  for (int i = 0; i < n; ++i) {
    const double z = lo + (hi - lo) * i / (n - 1);
    const double dP = detail::interp(a.z, a.P, z) - detail::interp(b.z, b.P, z);
    const double dQ = detail::interp(a.z, a.Q, z) - detail::interp(b.z, b.Q, z);
    const double dv = detail::interp(a.z, a.v, z) - detail::interp(b.z, b.v, z);
    d.sup_P = std::max(d.sup_P, std::abs(dP));
    d.sup_Q = std::max(d.sup_Q, std::abs(dQ));
    d.sup_v = std::max(d.sup_v, std::abs(dv));
    s2P += dP * dP;
    s2Q += dQ * dQ;
    s2v += dv * dv;
  }
  const double h = (hi - lo) / (n - 1);
  d.l2_P = std::sqrt(s2P * h);
  d.l2_Q = std::sqrt(s2Q * h);
  d.l2_v = std::sqrt(s2v * h);
  return d;
}

struct BranchReport {
  int branch_id = 0;
  double v_end = 1.0, P0 = 0.0, Q0 = 0.0;
  double loss = 0.0;
  std::optional<double> utilization;
  int reversals = 0;
  bool stable = false;
};

struct FeederReport {
  double length = 0.0;
  std::optional<double> critical_length;
  std::vector<BranchReport> branches;
};

// Summarize a branch set; the top branch carries the stable flag.
inline FeederReport build_report(const BranchSet& set, const FeederParams& fp,
                                 double tol = 1e-9) {
  FeederReport rep;
  rep.length = set.length;
  rep.critical_length = set.critical_length;
  for (const auto& b : set.branches) {
    BranchReport br;
    br.branch_id = b.branch_id;
    br.v_end = b.v_end;
    br.P0 = b.P0;
    br.Q0 = b.Q0;
    const auto lu = losses_and_utilization(b, fp);
    br.loss = lu.loss;
    br.utilization = lu.utilization;
    br.reversals = count_flow_reversals(b, tol);
    br.stable = b.branch_id == 0;
    rep.branches.push_back(br);
  }
  return rep;
}

} // namespace distflow
