// distflow: command-line front end for the feeder power-flow solvers.
//
// Subcommands: profile, nose, discrete-check, sweep. Configuration is a flat
// key = value file with dotted section keys; outputs are CSV/JSON with fixed
// formatting so identical configs produce byte-identical files.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "distflow/distflow.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace distflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNoSolution = 2;
constexpr int kExitInapplicable = 3;

int log_level() {
  const char* env = std::getenv("DISTFLOW_LOG");
  if (!env) return 0;
  const std::string v = env;
  if (v == "debug") return 2;
  if (v == "info") return 1;
  return 0;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << "distflow: " << msg << "\n";
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat INI-style configuration: `section.key = value` lines, '#' comments.
class Config {
 public:
  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      const std::string t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string val = trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": empty key");
      cfg.values_[key] = val;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key,
                      const std::string& fallback = "") const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_num(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_num(key, it->second);
  }

  double require_num(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key: " + key);
    return parse_num(key, it->second);
  }

  std::vector<double> get_list(const std::string& key) const {
    const auto it = values_.find(key);
    std::vector<double> out;
    if (it == values_.end()) return out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ','))
      out.push_back(parse_num(key, item));
    return out;
  }

 private:
  static double parse_num(const std::string& key, const std::string& raw) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(raw, &pos);
      while (pos < raw.size() && std::isspace(static_cast<unsigned char>(raw[pos])))
        ++pos;
      if (pos != raw.size()) throw std::invalid_argument("trailing junk");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not a number: " + raw);
    }
  }

  std::map<std::string, std::string> values_;
};

// Shortest round-trip decimal representation.
std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

struct Run {
  FeederParams feeder;
  std::optional<double> L;
  std::optional<double> s_max;
  std::optional<std::pair<std::pair<double, double>, int>> L_sweep;
  double tol = 1e-9;
  double v_floor = 0.05;
  double v_lo = 0.05;
  double v_hi = 2.0;
  int grid_n = 400;
  int samples = 513;
  std::vector<int> N_list;
};

Run parse_run(const Config& cfg) {
  Run run;
  FeederParams& fp = run.feeder;
  fp.p = cfg.require_num("feeder.p");
  fp.r = cfg.get_num("feeder.r", 1.0);
  fp.x = cfg.get_num("feeder.x", 1.0);

  const std::string ctype = cfg.get_str("control.type", "constant_q");
  if (ctype == "constant_q") {
    fp.control = ConstantQ{cfg.get_num("control.q", fp.p / 2.0)};
  } else if (ctype == "zero_pf") {
    fp.control = ZeroPowerFactor{};
  } else if (ctype == "voltage_feedback") {
    fp.control = VoltageFeedback{cfg.get_num("control.q0", 0.5),
                                 cfg.get_num("control.delta", 0.1),
                                 cfg.get_num("control.sign", 1.0)};
  } else {
    throw ConfigError("control.type must be constant_q, zero_pf, or "
                      "voltage_feedback");
  }
  if (cfg.has("feeder.ramp_v_cut") || cfg.has("feeder.ramp_v_full")) {
    fp.p_regularization = LowVoltageRamp{cfg.require_num("feeder.ramp_v_cut"),
                                         cfg.require_num("feeder.ramp_v_full")};
  }

  int axes = 0;
  if (cfg.has("feeder.L")) {
    run.L = cfg.require_num("feeder.L");
    fp.length = *run.L;
    ++axes;
  }
  if (cfg.has("feeder.s_max")) {
    run.s_max = cfg.require_num("feeder.s_max");
    ++axes;
  }
  if (cfg.has("feeder.L_min") || cfg.has("feeder.L_max") ||
      cfg.has("feeder.L_count")) {
    const double lo = cfg.require_num("feeder.L_min");
    const double hi = cfg.require_num("feeder.L_max");
    const int n = static_cast<int>(cfg.require_num("feeder.L_count"));
    if (!(lo > 0.0) || !(hi > lo) || n < 2)
      throw ConfigError("feeder.L_min/L_max/L_count must define a valid sweep");
    run.L_sweep = {{lo, hi}, n};
    ++axes;
  }
  if (axes > 1)
    throw ConfigError(
        "specify exactly one of feeder.L, feeder.s_max, or an L sweep");

  run.tol = cfg.get_num("solver.tol", 1e-9);
  run.v_floor = cfg.get_num("solver.v_floor", 0.05);
  run.v_lo = cfg.get_num("solver.v_lo", 0.05);
  run.v_hi = cfg.get_num("solver.v_hi", 2.0);
  run.grid_n = static_cast<int>(cfg.get_num("solver.grid_n", 400));
  run.samples = static_cast<int>(cfg.get_num("output.samples", 513));
  if (!(run.tol > 0.0) || !(run.v_floor > 0.0))
    throw ConfigError("tolerances must be positive");
  for (double n : cfg.get_list("solver.N_list")) {
    if (n < 1 || n != std::floor(n))
      throw ConfigError("solver.N_list entries must be positive integers");
    run.N_list.push_back(static_cast<int>(n));
  }
  validate(fp);
  return run;
}

ShootingProblem shooting_problem(const Run& run) {
  ShootingProblem pr;
  pr.params = run.feeder;
  pr.v_lo = run.v_lo;
  pr.v_hi = run.v_hi;
  pr.grid_n = run.grid_n;
  pr.rel_tol = run.tol;
  pr.abs_tol = run.tol * 1e-3;
  pr.v_floor = run.v_floor;
  pr.profile_samples = run.samples;
  return pr;
}

ScanOptions scan_options(const Run& run) {
  ScanOptions so;
  so.rel_tol = run.tol;
  so.abs_tol = run.tol * 1e-3;
  so.v_floor = run.v_floor;
  return so;
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string profile_csv(const SolutionProfile& prof) {
  std::string csv = "z,P,Q,v\n";
  for (std::size_t i = 0; i < prof.z.size(); ++i) {
    csv += fmt(prof.z[i]);
    csv += ',';
    csv += fmt(prof.P[i]);
    csv += ',';
    csv += fmt(prof.Q[i]);
    csv += ',';
    csv += fmt(prof.v[i]);
    csv += '\n';
  }
  return csv;
}

json branches_json(const BranchSet& set, const FeederParams& fp, double tol) {
  const auto rep = build_report(set, fp, tol);
  json j;
  j["length"] = rep.length;
  if (rep.critical_length)
    j["critical_length"] = *rep.critical_length;
  else
    j["critical_length"] = nullptr;
  j["branches"] = json::array();
  for (const auto& b : rep.branches) {
    json jb;
    jb["branch_id"] = b.branch_id;
    jb["v_end"] = b.v_end;
    jb["P0"] = b.P0;
    jb["Q0"] = b.Q0;
    jb["loss"] = b.loss;
    if (b.utilization)
      jb["utilization"] = *b.utilization;
    else
      jb["utilization"] = nullptr;
    jb["reversals"] = b.reversals;
    jb["stable"] = b.stable;
    j["branches"].push_back(jb);
  }
  return j;
}

// Branch enumeration for one length: the rescaled sweep when it applies,
// shooting otherwise (voltage feedback, low-voltage ramp).
BranchSet branches_at(const Run& run, double L) {
  Run local = run;
  local.feeder.length = L;
  const bool rescalable =
      !std::holds_alternative<VoltageFeedback>(run.feeder.control) &&
      !run.feeder.p_regularization && run.feeder.p != 0.0;
  if (rescalable) {
    const double s_guess =
        2.0 * L * std::sqrt(std::abs(run.feeder.p) * run.feeder.r) /
        run.v_floor;
    const auto table = scan(local.feeder, std::max(10.0, s_guess),
                            scan_options(run));
    return solutions_at_length(table, L, local.feeder, run.samples);
  }
  return find_branches(shooting_problem(local));
}

int cmd_profile(const Run& run, const fs::path& out_dir) {
  if (!run.L) throw ConfigError("profile requires feeder.L");
  const auto set = branches_at(run, *run.L);
  if (set.branches.empty()) {
    std::cerr << "distflow: no solution at L = " << fmt(*run.L);
    if (set.critical_length)
      std::cerr << " (critical length " << fmt(*set.critical_length) << ")";
    std::cerr << "\n";
    return kExitNoSolution;
  }
  for (const auto& b : set.branches) {
    write_file(out_dir / ("profile_" + std::to_string(b.branch_id) + ".csv"),
               profile_csv(b));
  }
  write_file(out_dir / "branches.json",
             branches_json(set, run.feeder, run.tol).dump(2) + "\n");
  log_info("wrote " + std::to_string(set.branches.size()) + " branch profiles");
  return kExitOk;
}

struct NoseOutputs {
  std::string csv;
  json meta;
  int max_branches = 0;
  double critical = 0.0;
};

NoseOutputs nose_from_scan(const Run& run) {
  const auto table = scan(run.feeder, *run.s_max, scan_options(run));
  const auto curve = nose_curve(table);
  NoseOutputs out;
  out.csv = "s_star,L,v_end,P0,Q0,branch_id,stable\n";
  for (const auto& p : curve.points) {
    out.csv += fmt(p.s_star);
    out.csv += ',';
    out.csv += fmt(p.L);
    out.csv += ',';
    out.csv += fmt(p.v_end);
    out.csv += ',';
    out.csv += fmt(p.P0);
    out.csv += ',';
    out.csv += fmt(p.Q0);
    out.csv += ',';
    out.csv += std::to_string(p.branch_id);
    out.csv += ',';
    out.csv += p.stable ? "1" : "0";
    out.csv += '\n';
  }
  out.meta["critical_length"] = curve.critical.L_max;
  out.meta["critical_converged"] = curve.critical.converged;
  out.meta["fold_s_star"] = json::array();
  out.meta["fold_L"] = json::array();
  for (const auto& f : curve.folds) {
    out.meta["fold_s_star"].push_back(f.s_star);
    out.meta["fold_L"].push_back(f.L);
  }
  out.critical = curve.critical.L_max;
  // branch multiplicity over a length grid inside the scanned range
  for (int i = 1; i <= 32; ++i) {
    const double L = curve.critical.L_max * i / 33.0;
    const auto set = solutions_at_length(table, L, run.feeder, 2);
    out.max_branches =
        std::max(out.max_branches, static_cast<int>(set.branches.size()));
  }
  return out;
}

NoseOutputs nose_from_length_sweep(const Run& run) {
  const auto [range, count] = *run.L_sweep;
  NoseOutputs out;
  out.csv = "s_star,L,v_end,P0,Q0,branch_id,stable\n";
  double largest_solved = 0.0;
  for (int i = 0; i < count; ++i) {
    const double L = range.first + (range.second - range.first) * i /
                                       (count - 1);
    Run local = run;
    local.feeder.length = L;
    const auto set = find_branches(shooting_problem(local));
    out.max_branches =
        std::max(out.max_branches, static_cast<int>(set.branches.size()));
    if (!set.branches.empty()) largest_solved = L;
    for (const auto& b : set.branches) {
      out.csv += "nan,";
      out.csv += fmt(L);
      out.csv += ',';
      out.csv += fmt(b.v_end);
      out.csv += ',';
      out.csv += fmt(b.P0);
      out.csv += ',';
      out.csv += fmt(b.Q0);
      out.csv += ',';
      out.csv += std::to_string(b.branch_id);
      out.csv += ',';
      out.csv += b.branch_id == 0 ? "1" : "0";
      out.csv += '\n';
    }
  }
  out.meta["critical_length"] = largest_solved;
  out.meta["critical_converged"] = false; // lower bound from the L grid
  out.meta["fold_s_star"] = json::array();
  out.meta["fold_L"] = json::array();
  out.critical = largest_solved;
  return out;
}

NoseOutputs nose_outputs(const Run& run) {
  if (run.s_max) {
    if (std::holds_alternative<VoltageFeedback>(run.feeder.control) ||
        run.feeder.p_regularization) {
      throw UnsupportedControlError(
          "the rescaled sweep does not apply to voltage-dependent control; "
          "use an L sweep (feeder.L_min/L_max/L_count) instead");
    }
    return nose_from_scan(run);
  }
  if (run.L_sweep) return nose_from_length_sweep(run);
  throw ConfigError("nose requires feeder.s_max or an L sweep");
}

int cmd_nose(const Run& run, const fs::path& out_dir) {
  const auto out = nose_outputs(run);
  write_file(out_dir / "nose.csv", out.csv);
  write_file(out_dir / "nose.json", out.meta.dump(2) + "\n");
  return kExitOk;
}

int cmd_discrete_check(const Run& run, const fs::path& out_dir) {
  if (run.N_list.empty())
    throw ConfigError("discrete-check requires solver.N_list");
  if (!run.L) throw ConfigError("discrete-check requires feeder.L");
  const auto rows =
      convergence_study(run.feeder, run.N_list, run.v_lo, run.v_hi,
                        run.grid_n);
  std::string csv = "N,supnorm_P,supnorm_Q,supnorm_v\n";
  for (const auto& row : rows) {
    csv += std::to_string(row.N);
    csv += ',';
    if (row.solved) {
      csv += fmt(row.sup_P);
      csv += ',';
      csv += fmt(row.sup_Q);
      csv += ',';
      csv += fmt(row.sup_v);
    } else {
      csv += "nan,nan,nan";
    }
    csv += '\n';
  }
  write_file(out_dir / "convergence.csv", csv);
  return kExitOk;
}

int cmd_sweep(const Run& run, const Config& cfg, const fs::path& out_dir,
              int jobs) {
  const std::string axis = cfg.get_str("sweep.axis");
  if (axis.empty()) throw ConfigError("sweep requires sweep.axis");
  std::vector<double> values = cfg.get_list("sweep.values");
  if (values.empty() && cfg.has("sweep.min")) {
    const double lo = cfg.require_num("sweep.min");
    const double hi = cfg.require_num("sweep.max");
    const int n = static_cast<int>(cfg.require_num("sweep.count"));
    if (n < 1) throw ConfigError("sweep.count must be >= 1");
    for (int i = 0; i < n; ++i)
      values.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
  }
  if (values.empty()) throw ConfigError("sweep requires sweep.values or "
                                        "sweep.min/max/count");

  auto apply_axis = [&](Run base, double v) {
    if (axis == "p") {
      base.feeder.p = v;
    } else if (axis == "q") {
      base.feeder.control = ConstantQ{v};
    } else if (axis == "x_over_r") {
      base.feeder.x = base.feeder.r * v;
    } else if (axis == "q0") {
      auto* fb = std::get_if<VoltageFeedback>(&base.feeder.control);
      VoltageFeedback cur = fb ? *fb : VoltageFeedback{};
      cur.q0 = v;
      if (v == 0.0)
        base.feeder.control = ZeroPowerFactor{}; // zero capacity = zero pf
      else
        base.feeder.control = cur;
    } else if (axis == "delta") {
      auto* fb = std::get_if<VoltageFeedback>(&base.feeder.control);
      VoltageFeedback cur = fb ? *fb : VoltageFeedback{};
      cur.delta = v;
      base.feeder.control = cur;
    } else {
      throw ConfigError("sweep.axis must be one of p, q, x_over_r, q0, delta");
    }
    validate(base.feeder);
    return base;
  };

  struct PointResult {
    double value = 0.0;
    double critical = 0.0;
    int max_branches = 0;
    std::string error;
  };
  std::vector<PointResult> results(values.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      PointResult res;
      res.value = values[i];
      char dirname[32];
      std::snprintf(dirname, sizeof(dirname), "point_%03zu", i);
      const fs::path pdir = out_dir / dirname;
      try {
        const Run point = apply_axis(run, values[i]);
        const auto out = nose_outputs(point);
        write_file(pdir / "nose.csv", out.csv);
        write_file(pdir / "nose.json", out.meta.dump(2) + "\n");
        res.critical = out.critical;
        res.max_branches = out.max_branches;
        // branch detail at the configured length, else at half critical
        const double L_detail = point.L ? *point.L : 0.5 * out.critical;
        if (L_detail > 0.0) {
          const auto set = branches_at(point, L_detail);
          write_file(pdir / "branches.json",
                     branches_json(set, point.feeder, point.tol).dump(2) + "\n");
        }
      } catch (const std::exception& e) {
        res.error = e.what();
      }
      results[i] = std::move(res);
    }
  };
  const int nthreads =
      std::max(1, std::min<int>(jobs, static_cast<int>(values.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < nthreads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::string summary = "point,value,critical_length,max_branches\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].error.empty())
      throw ConfigError("sweep point " + std::to_string(i) + ": " +
                        results[i].error);
    summary += std::to_string(i);
    summary += ',';
    summary += fmt(results[i].value);
    summary += ',';
    summary += fmt(results[i].critical);
    summary += ',';
    summary += std::to_string(results[i].max_branches);
    summary += '\n';
  }
  write_file(out_dir / "summary.csv", summary);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Steady-state power flow along a distribution feeder"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = ".";
  int jobs = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--jobs", jobs, "max concurrent sweep points");
  };
  auto* profile = app.add_subcommand("profile", "solution profiles at one length");
  auto* nose = app.add_subcommand("nose", "nose curve / continuation scan");
  auto* discrete =
      app.add_subcommand("discrete-check", "discrete-to-ODE convergence table");
  auto* sweep = app.add_subcommand("sweep", "parameter sweep of nose curves");
  for (auto* sub : {profile, nose, discrete, sweep}) add_common(sub);

  CLI11_PARSE(app, argc, argv);

  try {
    const Config cfg = Config::load(config_path);
    const Run run = parse_run(cfg);
    const fs::path out(out_dir);
    if (profile->parsed()) return cmd_profile(run, out);
    if (nose->parsed()) return cmd_nose(run, out);
    if (discrete->parsed()) return cmd_discrete_check(run, out);
    if (sweep->parsed()) return cmd_sweep(run, cfg, out, jobs);
  } catch (const UnsupportedControlError& e) {
    std::cerr << "distflow: " << e.what() << "\n";
    return kExitInapplicable;
  } catch (const ConfigError& e) {
    std::cerr << "distflow: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "distflow: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
