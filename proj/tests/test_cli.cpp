#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

// End-to-end checks of the command-line tool. The binary path arrives in the
// DISTFLOW_CLI environment variable, set by the build system.

namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  const char* p = std::getenv("DISTFLOW_CLI");
  REQUIRE_MESSAGE(p != nullptr, "DISTFLOW_CLI must point at the binary");
  return p;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("distflow_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "missing file: " << p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const std::string& args) {
  const int rc = std::system((cli_path() + " " + args + " 2>/dev/null").c_str());
  return WEXITSTATUS(rc);
}

const std::string kConsumption =
    "feeder.p = -1\n"
    "feeder.r = 1\n"
    "feeder.x = 1\n"
    "feeder.L = 0.5\n"
    "control.type = constant_q\n"
    "control.q = -0.5\n";

} // namespace

TEST_CASE("cli profile: two branches, CSV headers, JSON summary") {
  const auto dir = fresh_dir("profile");
  write(dir / "f.cfg", kConsumption);
  CHECK(run("profile --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "out").string()) == 0);
  CHECK(fs::exists(dir / "out/profile_0.csv"));
  CHECK(fs::exists(dir / "out/profile_1.csv"));
  const auto csv = slurp(dir / "out/profile_0.csv");
  CHECK(csv.rfind("z,P,Q,v\n", 0) == 0);
  const auto j = slurp(dir / "out/branches.json");
  CHECK(j.find("\"v_end\": 0.7640324226") != std::string::npos);
  CHECK(j.find("\"stable\": true") != std::string::npos);
}

TEST_CASE("cli profile: beyond the critical length exits 2 with a hint") {
  const auto dir = fresh_dir("beyond");
  auto cfg = kConsumption;
  cfg.replace(cfg.find("feeder.L = 0.5"), 14, "feeder.L = 0.7");
  write(dir / "f.cfg", cfg);
  const int rc = std::system((cli_path() + " profile --config " +
                              (dir / "f.cfg").string() + " --out " +
                              (dir / "out").string() + " 2> " +
                              (dir / "err.txt").string())
                                 .c_str());
  CHECK(WEXITSTATUS(rc) == 2);
  CHECK(slurp(dir / "err.txt").find("critical length") != std::string::npos);
}

TEST_CASE("cli config errors exit 1") {
  const auto dir = fresh_dir("badcfg");
  write(dir / "junk.cfg", "feeder.p == oops\n");
  CHECK(run("profile --config " + (dir / "junk.cfg").string()) == 1);
  write(dir / "ctrl.cfg", "feeder.p = -1\ncontrol.type = magic\n");
  CHECK(run("profile --config " + (dir / "ctrl.cfg").string()) == 1);
  CHECK(run("profile --config " + (dir / "absent.cfg").string()) == 1);
  // profile without any length axis
  write(dir / "nolen.cfg", "feeder.p = -1\n");
  CHECK(run("profile --config " + (dir / "nolen.cfg").string()) == 1);
}

TEST_CASE("cli nose: scan emits curve CSV plus fold metadata") {
  const auto dir = fresh_dir("nose");
  write(dir / "f.cfg",
        "feeder.p = -1\nfeeder.s_max = 20\n"
        "control.type = constant_q\ncontrol.q = -0.5\n");
  CHECK(run("nose --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "out").string()) == 0);
  const auto csv = slurp(dir / "out/nose.csv");
  CHECK(csv.rfind("s_star,L,v_end,P0,Q0,branch_id,stable\n", 0) == 0);
  const auto j = slurp(dir / "out/nose.json");
  CHECK(j.find("\"critical_length\": 0.61724673") != std::string::npos);
  CHECK(j.find("\"fold_s_star\"") != std::string::npos);
}

TEST_CASE("cli nose: feedback control needs an L sweep") {
  const auto dir = fresh_dir("nosefb");
  write(dir / "scan.cfg",
        "feeder.p = -1\nfeeder.s_max = 20\n"
        "control.type = voltage_feedback\ncontrol.q0 = 0.5\n");
  CHECK(run("nose --config " + (dir / "scan.cfg").string() + " --out " +
            (dir / "o1").string()) == 3);
  write(dir / "sweep.cfg",
        "feeder.p = -1\n"
        "feeder.L_min = 0.2\nfeeder.L_max = 0.6\nfeeder.L_count = 3\n"
        "control.type = voltage_feedback\ncontrol.q0 = 0.5\n");
  CHECK(run("nose --config " + (dir / "sweep.cfg").string() + " --out " +
            (dir / "o2").string()) == 0);
  const auto csv = slurp(dir / "o2/nose.csv");
  CHECK(csv.rfind("s_star,L,v_end,P0,Q0,branch_id,stable\nnan,", 0) == 0);
}

TEST_CASE("cli discrete-check writes the convergence table") {
  const auto dir = fresh_dir("disc");
  write(dir / "f.cfg", kConsumption + "solver.N_list = 50,100\n");
  CHECK(run("discrete-check --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "out").string()) == 0);
  const auto csv = slurp(dir / "out/convergence.csv");
  CHECK(csv.rfind("N,supnorm_P,supnorm_Q,supnorm_v\n50,", 0) == 0);
  CHECK(csv.find("\n100,") != std::string::npos);
}

TEST_CASE("cli sweep: per-point outputs plus summary, --jobs stable") {
  const auto dir = fresh_dir("sweep");
  write(dir / "f.cfg",
        "feeder.p = -1\nfeeder.s_max = 20\ncontrol.type = constant_q\n"
        "sweep.axis = q\nsweep.values = -0.25,-0.5\n");
  CHECK(run("sweep --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "a").string() + " --jobs 2") == 0);
  CHECK(fs::exists(dir / "a/point_000/nose.csv"));
  CHECK(fs::exists(dir / "a/point_001/branches.json"));
  const auto summary = slurp(dir / "a/summary.csv");
  CHECK(summary.rfind("point,value,critical_length,max_branches\n", 0) == 0);
  CHECK(summary.find("\n1,-0.5,0.61724673") != std::string::npos);

  // a second run with different concurrency is byte-identical
  CHECK(run("sweep --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "b").string() + " --jobs 1") == 0);
  for (const auto& rel :
       {"summary.csv", "point_000/nose.csv", "point_000/nose.json",
        "point_001/nose.csv", "point_001/branches.json"})
    CHECK(slurp(dir / "a" / rel) == slurp(dir / "b" / rel));
}

TEST_CASE("cli outputs are byte-identical across runs") {
  const auto dir = fresh_dir("det");
  write(dir / "f.cfg", kConsumption);
  CHECK(run("profile --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "r1").string()) == 0);
  CHECK(run("profile --config " + (dir / "f.cfg").string() + " --out " +
            (dir / "r2").string()) == 0);
  for (const auto& rel : {"profile_0.csv", "profile_1.csv", "branches.json"})
    CHECK(slurp(dir / "r1" / rel) == slurp(dir / "r2" / rel));
}
