#include "distflow/shooting.hpp"

#include <cmath>

#include "doctest.h"
#include "distflow/cauchy.hpp"

using namespace distflow;

namespace {

FeederParams base_consumption(double L = 0.5) {
  FeederParams fp;
  fp.r = fp.x = 1.0;
  fp.p = -1.0;
  fp.control = ConstantQ{-0.5};
  fp.length = L;
  return fp;
}

FeederParams base_generation(double L = 2.0) {
  FeederParams fp;
  fp.r = fp.x = 1.0;
  fp.p = 1.0;
  fp.control = ConstantQ{0.5};
  fp.length = L;
  return fp;
}

} // namespace

TEST_CASE("shoot_residual: flat line solves exactly") {
  FeederParams fp;
  fp.p = 0.0;
  fp.control = ConstantQ{0.0};
  fp.length = 3.0;
  CHECK(shoot_residual(1.0, fp) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("shoot_residual: agrees with the rescaled sweep's end voltage") {
  const auto fp = base_consumption(0.5);
  const auto table = scan(fp, 20.0);
  const auto set = solutions_at_length(table, 0.5, fp);
  REQUIRE(set.branches.size() == 2);
  for (const auto& b : set.branches)
    CHECK(std::abs(shoot_residual(b.v_end, fp)) < 1e-6);
}

TEST_CASE("shoot_residual: starting the backward pass at 1 overshoots") {
  CHECK(shoot_residual(1.0, base_consumption(0.3)) > 0.0);
}

TEST_CASE("shoot_residual: floor hit returns the negative sentinel") {
  // generation with zero power factor: a backward pass started near the
  // floor loses voltage toward the head and collapses
  auto fp = base_generation(2.0);
  fp.control = ZeroPowerFactor{};
  ShootingProblem pr;
  pr.params = fp;
  const double r = shoot_residual(0.06, fp, pr);
  CHECK(std::isinf(r));
  CHECK(r < 0.0);
  CHECK_THROWS_AS(shoot_residual(0.01, fp, pr), std::domain_error);
}

TEST_CASE("find_branches matches the rescaled sweep branch by branch") {
  for (double L : {0.45, 0.5, 0.55, 0.6}) {
    const auto fp = base_consumption(L);
    const auto table = scan(fp, 20.0);
    const auto from_scan = solutions_at_length(table, L, fp);
    ShootingProblem pr;
    pr.params = fp;
    pr.v_lo = 0.05;
    pr.v_hi = 1.5;
    const auto from_shooting = find_branches(pr);
    REQUIRE(from_shooting.branches.size() == from_scan.branches.size());
    for (std::size_t i = 0; i < from_scan.branches.size(); ++i) {
      CHECK(from_shooting.branches[i].v_end ==
            doctest::Approx(from_scan.branches[i].v_end).epsilon(1e-6));
      CHECK(from_shooting.branches[i].P0 ==
            doctest::Approx(from_scan.branches[i].P0).epsilon(1e-6));
    }
  }
}

TEST_CASE("find_branches: zero-length feeder") {
  ShootingProblem pr;
  pr.params = base_consumption(0.0);
  const auto set = find_branches(pr);
  REQUIRE(set.branches.size() == 1);
  CHECK(set.branches[0].v_end == 1.0);
  CHECK(set.branches[0].P0 == 0.0);
  CHECK(set.branches[0].Q0 == 0.0);
}

TEST_CASE("find_branches: beyond the critical length finds nothing") {
  ShootingProblem pr;
  pr.params = base_consumption(0.7);
  const auto set = find_branches(pr);
  CHECK(set.branches.empty());
}

TEST_CASE("find_branches: voltage feedback control in generation keeps "
          "multiple solutions") {
  ShootingProblem pr;
  pr.params = base_generation(1.5);
  pr.params.control = VoltageFeedback{0.5, 0.1, 1.0};
  pr.v_hi = 6.0;
  pr.grid_n = 800;
  const auto set = find_branches(pr);
  CHECK(set.branches.size() >= 2);
}

TEST_CASE("find_branches: doubling the grid never loses branches") {
  const auto fp = base_consumption(0.55);
  ShootingProblem pr;
  pr.params = fp;
  pr.grid_n = 100;
  const auto coarse = find_branches(pr);
  pr.grid_n = 200;
  const auto fine = find_branches(pr);
  pr.grid_n = 400;
  const auto finer = find_branches(pr);
  CHECK(fine.branches.size() >= coarse.branches.size());
  CHECK(finer.branches.size() >= fine.branches.size());
}

TEST_CASE("profile_from_vend: consumption upper branch is monotone") {
  const auto fp = base_consumption(0.5);
  ShootingProblem pr;
  pr.params = fp;
  const auto set = find_branches(pr);
  REQUIRE(!set.branches.empty());
  const auto& top = set.branches.front();
  for (std::size_t i = 0; i + 1 < top.z.size(); ++i) {
    CHECK(top.v[i + 1] <= top.v[i] + 1e-10);  // voltage sags along z
    CHECK(top.P[i + 1] <= top.P[i] + 1e-10);  // flow decreases to 0
    CHECK(top.P[i] >= -1e-10);
  }
  CHECK(top.reversals == 0);
}

TEST_CASE("profile_from_vend: generation top branch exports power and the "
          "second branch reverses it") {
  ShootingProblem pr;
  pr.params = base_generation(2.0);
  pr.v_hi = 6.0;
  pr.grid_n = 800;
  const auto set = find_branches(pr);
  REQUIRE(set.branches.size() >= 2);
  const auto& top = set.branches[0];
  for (std::size_t i = 0; i + 1 < top.z.size(); ++i)
    CHECK(top.v[i + 1] >= top.v[i] - 1e-10); // voltage rises monotonically
  for (double P : top.P) CHECK(P <= 1e-10);  // export toward the head
  CHECK(top.reversals == 0);
  CHECK(set.branches[1].reversals >= 1);
}

TEST_CASE("profile_from_vend: stale root is rejected") {
  const auto fp = base_consumption(0.5);
  CHECK_THROWS_AS(profile_from_vend(0.95, fp), StaleRootError);
}

TEST_CASE("backward-forward consistency of a shooting profile") {
  const auto fp = base_consumption(0.5);
  ShootingProblem pr;
  pr.params = fp;
  const auto set = find_branches(pr);
  REQUIRE(set.branches.size() == 2);
  IntegrateOptions io;
  io.rel_tol = 1e-11;
  io.abs_tol = 1e-14;
  io.guard_index = 2;
  for (const auto& b : set.branches) {
    const auto traj = integrate<4>(physical_system(fp),
                                   {b.P0, b.Q0, b.v.front(), 0.0}, 0.0,
                                   fp.length, io);
    REQUIRE(traj.termination() == Termination::reached_end);
    for (std::size_t i = 0; i < b.z.size(); i += 64) {
      const auto y = traj.eval(b.z[i]);
      CHECK(y[0] == doctest::Approx(b.P[i]).epsilon(1e-6).scale(1.0));
      CHECK(y[2] == doctest::Approx(b.v[i]).epsilon(1e-6));
    }
  }
}
