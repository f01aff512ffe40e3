#include "distflow/ode.hpp"

#include <cmath>
#include <random>

#include "doctest.h"

using namespace distflow;

namespace {

FeederParams base_consumption() {
  FeederParams fp;
  fp.r = 1.0;
  fp.x = 1.0;
  fp.p = -1.0;
  fp.control = ConstantQ{-0.5};
  return fp;
}

// Independent evaluation of the physical right-hand side, written out
// directly from the balance equations.
LineState oracle_rhs(double P, double Q, double v, double p, double q,
                     double r, double x) {
  const double loss = (P * P + Q * Q) / (v * v);
  return {p - r * loss, q - x * loss, -(r * P + x * Q) / v};
}

} // namespace

TEST_CASE("rhs_physical at zero flow") {
  auto fp = base_consumption();
  const auto d = rhs_physical({0.0, 0.0, 1.0}, fp);
  CHECK(d.P == doctest::Approx(-1.0));
  CHECK(d.Q == doctest::Approx(-0.5));
  CHECK(d.v == 0.0);
}

TEST_CASE("rhs_physical direct substitution") {
  FeederParams fp = base_consumption();
  fp.control = ConstantQ{0.0};
  const auto d = rhs_physical({1.0, 0.0, 1.0}, fp);
  CHECK(d.P == doctest::Approx(-2.0));
  CHECK(d.Q == doctest::Approx(-1.0));
  CHECK(d.v == doctest::Approx(-1.0));
}

TEST_CASE("rhs_physical against independent formula") {
  auto fp = base_consumption();
  const auto d = rhs_physical({0.3, 0.1, 0.9}, fp);
  const auto e = oracle_rhs(0.3, 0.1, 0.9, -1.0, -0.5, 1.0, 1.0);
  CHECK(d.P == doctest::Approx(e.P).epsilon(1e-15));
  CHECK(d.Q == doctest::Approx(e.Q).epsilon(1e-15));
  CHECK(d.v == doctest::Approx(e.v).epsilon(1e-15));
}

TEST_CASE("rhs_physical rejects collapsed voltage") {
  auto fp = base_consumption();
  CHECK_THROWS_AS(rhs_physical({0.1, 0.1, 0.0}, fp), SingularityError);
  CHECK_THROWS_AS(rhs_physical({0.1, 0.1, -0.2}, fp), SingularityError);
}

TEST_CASE("rhs_rescaled at the Cauchy initial point") {
  const auto dc = rhs_rescaled({0.0, 0.0, 1.0}, {-1.0, -0.5, 1.0});
  CHECK(dc.rho == doctest::Approx(1.0));
  CHECK(dc.tau == doctest::Approx(0.5));
  CHECK(dc.upsilon == 0.0);
  const auto dg = rhs_rescaled({0.0, 0.0, 1.0}, {1.0, 0.5, 1.0});
  CHECK(dg.rho == doctest::Approx(-1.0));
  CHECK(dg.tau == doctest::Approx(-0.5));
  CHECK(dg.upsilon == 0.0);
}

TEST_CASE("rescaled and physical vector fields agree through the change of "
          "variables") {
  // rho = sqrt(r/|p|) P / vL, tau likewise, ups = v/vL, s = sqrt(|p|r)(L-z)/vL
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.2, 2.0);
  std::uniform_real_distribution<double> flow(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    FeederParams fp;
    fp.r = u(rng);
    fp.x = u(rng);
    fp.p = (i % 2 ? 1.0 : -1.0) * u(rng);
    const double q = flow(rng);
    fp.control = ConstantQ{q};
    const double vL = u(rng);
    const LineState st{flow(rng), flow(rng), u(rng)};
    const auto rp = rescaled_params(fp);
    const double pa = std::abs(fp.p);
    const double fs = std::sqrt(fp.r / pa) / vL;
    const RescaledState rs{st.P * fs, st.Q * fs, st.v / vL};
    const auto dphys = rhs_physical(st, fp);
    const auto dresc = rhs_rescaled(rs, rp);
    // d/ds = -(vL / sqrt(|p| r)) d/dz on each mapped component
    const double jac = -vL / std::sqrt(pa * fp.r);
    CHECK(dresc.rho == doctest::Approx(dphys.P * fs * jac).epsilon(1e-12));
    CHECK(dresc.tau == doctest::Approx(dphys.Q * fs * jac).epsilon(1e-12));
    CHECK(dresc.upsilon ==
          doctest::Approx(dphys.v / vL * jac).epsilon(1e-12));
  }
}

TEST_CASE("integrate: zero injection keeps the flat solution") {
  FeederParams fp = base_consumption();
  fp.p = 0.0;
  fp.control = ConstantQ{0.0};
  IntegrateOptions io;
  io.guard_index = 2;
  const auto traj =
      integrate<4>(physical_system(fp), {0.0, 0.0, 1.0, 0.0}, 0.0, 2.0, io);
  CHECK(traj.termination() == Termination::reached_end);
  for (double z : {0.0, 0.5, 1.3, 2.0}) {
    const auto y = traj.eval(z);
    CHECK(y[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("integrate: small-length end voltage matches the quadratic term") {
  // backward pass from (0,0,vend); choose vend so that v(0)=1, then check
  // v(L) ~ 1 + (r p + x q) L^2 / 2 with a higher-order remainder
  auto fp = base_consumption();
  const double c = fp.r * fp.p + fp.x * (-0.5);
  IntegrateOptions io;
  io.guard_index = 2;
  double prev_resid = 0.0;
  int k = 0;
  for (double L : {0.05, 0.1, 0.2}) {
    fp.length = L;
    // secant iteration on vend for the head condition
    double ve = 1.0 + c * L * L / 2.0;
    for (int it = 0; it < 60; ++it) {
      auto t0 = integrate<4>(physical_system(fp), {0.0, 0.0, ve, 0.0}, L, 0.0, io);
      const double f0 = t0.back_state()[2] - 1.0;
      const double h = 1e-8;
      auto t1 =
          integrate<4>(physical_system(fp), {0.0, 0.0, ve + h, 0.0}, L, 0.0, io);
      const double f1 = t1.back_state()[2] - 1.0;
      const double step = f0 * h / (f1 - f0);
      ve -= step;
      if (std::abs(step) < 1e-14) break;
    }
    const double resid = std::abs(ve - (1.0 + c * L * L / 2.0));
    if (L == 0.1) {
      CHECK(ve == doctest::Approx(0.9925).epsilon(2e-4));
    }
    if (k > 0) {
      // quartic remainder: each doubling of L multiplies it by ~16
      CHECK(resid / prev_resid > 8.0);
      CHECK(resid / prev_resid < 32.0);
    }
    prev_resid = resid;
    ++k;
  }
}

TEST_CASE("integrate: voltage floor terminates the sweep cleanly") {
  IntegrateOptions io;
  io.guard_index = 2;
  io.floor = 0.05;
  auto forced = [&](double, const std::array<double, 4>& y,
                    std::array<double, 4>& dy) {
    dy = {std::cos(y[3]), 0.0, -1.0, 1.0}; // monotone descent to the floor
  };
  const auto traj = integrate<4>(forced, {0.0, 0.0, 1.0, 0.0}, 0.0, 10.0, io);
  CHECK(traj.termination() == Termination::voltage_floor);
  CHECK(traj.back_state()[2] == doctest::Approx(0.05).epsilon(1e-9));
  CHECK(traj.back_time() < 10.0);
}

TEST_CASE("integrate: halving the tolerance does not increase the error") {
  auto fp = base_consumption();
  IntegrateOptions tight;
  tight.rel_tol = 1e-13;
  tight.abs_tol = 1e-15;
  tight.guard_index = 2;
  const std::array<double, 4> y0{0.0, 0.0, 0.8, 0.0};
  const auto ref =
      integrate<4>(physical_system(fp), y0, 0.5, 0.0, tight).back_state();
  double prev_err = 1e300;
  for (double tol : {1e-5, 1e-7, 1e-9, 1e-11}) {
    IntegrateOptions io;
    io.rel_tol = tol;
    io.abs_tol = tol * 1e-3;
    io.guard_index = 2;
    const auto got =
        integrate<4>(physical_system(fp), y0, 0.5, 0.0, io).back_state();
    double err = 0.0;
    for (int i = 0; i < 3; ++i) err = std::max(err, std::abs(got[i] - ref[i]));
    CHECK(err <= prev_err * 1.001);
    prev_err = err;
  }
}

TEST_CASE("loss balance along a full trajectory") {
  // P(0) - P(L) + p L = r * integral of (P^2+Q^2)/v^2
  auto fp = base_consumption();
  IntegrateOptions io;
  io.rel_tol = 1e-10;
  io.abs_tol = 1e-13;
  io.guard_index = 2;
  for (double vend : {0.9, 0.7, 0.5}) {
    const double L = 0.4;
    fp.length = L;
    const auto traj =
        integrate<4>(physical_system(fp), {0.0, 0.0, vend, 0.0}, L, 0.0, io);
    REQUIRE(traj.termination() == Termination::reached_end);
    const double P0 = traj.back_state()[0];
    const double loss = std::abs(traj.back_state()[3]);
    CHECK(P0 - 0.0 + fp.p * L ==
          doctest::Approx(fp.r * loss).epsilon(1e-8));
  }
}

TEST_CASE("dense output matches step endpoints and stays accurate inside") {
  auto fp = base_consumption();
  IntegrateOptions io;
  io.rel_tol = 1e-10;
  io.abs_tol = 1e-13;
  io.guard_index = 2;
  const auto traj =
      integrate<4>(physical_system(fp), {0.0, 0.0, 0.8, 0.0}, 0.5, 0.0, io);
  for (std::size_t i = 0; i < traj.nodes().size(); ++i) {
    const auto y = traj.eval(traj.nodes()[i]);
    for (int c = 0; c < 3; ++c)
      CHECK(y[c] == doctest::Approx(traj.states()[i][c]).epsilon(1e-12));
  }
  // interior points: compare against a fresh tight integration
  IntegrateOptions tight;
  tight.rel_tol = 1e-13;
  tight.abs_tol = 1e-16;
  tight.guard_index = 2;
  for (double z : {0.1, 0.23, 0.4}) {
    const auto ref =
        integrate<4>(physical_system(fp), {0.0, 0.0, 0.8, 0.0}, 0.5, z, tight)
            .back_state();
    const auto y = traj.eval(z);
    for (int c = 0; c < 3; ++c)
      CHECK(y[c] == doctest::Approx(ref[c]).epsilon(1e-8));
  }
}
