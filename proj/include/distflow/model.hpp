#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <variant>

// Domain types for a homogenized distribution feeder: line media densities,
// real-power density, and the reactive-control schemes applied along the line.
// All quantities are per-unit; r, x, p, q are densities per unit length.

namespace distflow {

struct UnsupportedControlError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct SingularityError : std::domain_error {
  using std::domain_error::domain_error;
};

// Constant reactive-power density along the feeder.
struct ConstantQ {
  double q = 0.0;
};

// Inverters hold reactive output at zero.
struct ZeroPowerFactor {};

// Local volt-var droop: q(v) = sign * q0 * (1 - 2 / (1 + exp(-4 (v-1)/delta))).
// q0 is the inverter capacity, delta the voltage tolerance band.
struct VoltageFeedback {
  double q0 = 0.5;
  double delta = 0.1;
  double sign = 1.0;
};

using ControlScheme = std::variant<ConstantQ, ZeroPowerFactor, VoltageFeedback>;

// Piecewise-linear cutback of generation at low voltage: output is 0 below
// v_cut, nominal above v_full, linear in between.
struct LowVoltageRamp {
  double v_cut = 0.3;
  double v_full = 0.7;
};

struct FeederParams {
  double r = 1.0;  // resistance density, > 0
  double x = 1.0;  // inductance density, > 0
  double p = -1.0; // real-power density; < 0 consumption, > 0 generation
  double length = 1.0;
  ControlScheme control = ConstantQ{-0.5};
  std::optional<LowVoltageRamp> p_regularization;
};

// Dimensionless parameters of the rescaled system: sign of p, A = q/|p|,
// B = x/r. Defined only for voltage-independent control.
struct RescaledParams {
  double sign_p = -1.0;
  double A = -0.5;
  double B = 1.0;
};

inline void validate(const FeederParams& fp) {
  if (!(fp.r > 0.0) || !(fp.x > 0.0))
    throw std::domain_error("feeder media densities r, x must be positive");
  if (!(fp.length >= 0.0))
    throw std::domain_error("feeder length must be non-negative");
  if (const auto* vf = std::get_if<VoltageFeedback>(&fp.control)) {
    if (!(vf->q0 > 0.0) || !(vf->delta > 0.0))
      throw std::domain_error("voltage feedback requires q0 > 0 and delta > 0");
  }
  if (fp.p_regularization) {
    const auto& ramp = *fp.p_regularization;
    if (!(ramp.v_cut > 0.0) || !(ramp.v_full > ramp.v_cut))
      throw std::domain_error("low-voltage ramp requires v_full > v_cut > 0");
  }
}

// Reactive-power density injected at a point with local voltage v.
inline double control_q(const ControlScheme& scheme, double v, double /*p*/) {
  return std::visit(
      [&](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, ConstantQ>) {
          return c.q;
        } else if constexpr (std::is_same_v<T, ZeroPowerFactor>) {
          return 0.0;
        } else {
          if (!(v > 0.0))
            throw std::domain_error("voltage feedback control needs v > 0");
          return c.sign * c.q0 *
                 (1.0 - 2.0 / (1.0 + std::exp(-4.0 * (v - 1.0) / c.delta)));
        }
      },
      scheme);
}

// Real-power density at local voltage v, with the low-voltage ramp applied
// when configured.
inline double effective_p(const FeederParams& fp, double v) {
  if (!fp.p_regularization) return fp.p;
  const auto& ramp = *fp.p_regularization;
  if (v <= ramp.v_cut) return 0.0;
  if (v >= ramp.v_full) return fp.p;
  return fp.p * (v - ramp.v_cut) / (ramp.v_full - ramp.v_cut);
}

inline RescaledParams rescaled_params(const FeederParams& fp) {
  if (std::holds_alternative<VoltageFeedback>(fp.control))
    throw UnsupportedControlError(
        "rescaling does not apply to voltage-dependent reactive control");
  if (fp.p == 0.0)
    throw std::domain_error("rescaling requires a nonzero real-power density");
  const double q = std::holds_alternative<ConstantQ>(fp.control)
                       ? std::get<ConstantQ>(fp.control).q
                       : 0.0;
  return RescaledParams{fp.p > 0.0 ? 1.0 : -1.0, q / std::abs(fp.p),
                        fp.x / fp.r};
}

} // namespace distflow
