// rvdock command-line planner.
//
//   rvdock plan <scenario> [--out-dir D] [--N k] [--tmax s]
//   rvdock propagate <scenario> [--controls file] [--out file]
//   rvdock verify <trajectory.csv> <scenario>
//
// Exit codes: 0 success (plan: converged and all verification checks pass;
// verify: all checks pass), 1 solver or verification failure, 2 scenario
// validation, parse, or IO errors.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rvdock/pipeline.hpp"

namespace {

enum class LogLevel { Quiet = 0, Info = 1, Debug = 2 };

LogLevel parse_level(const std::string& name) {
  if (name == "quiet") return LogLevel::Quiet;
  if (name == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

/// Controls file: one ZOH interval per row, six comma-separated values
/// ux,uy,uz,mx,my,mz. '#' comments and blank lines are skipped.
std::vector<rvdock::ControlInput> read_controls(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw rvdock::IoError("cannot open controls file '" + path + "'");
  std::vector<rvdock::ControlInput> controls;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = rvdock::detail::trim(line);
    if (line.empty()) continue;

    Eigen::Matrix<double, 6, 1> row;
    std::istringstream cells(line);
    std::string cell;
    for (int c = 0; c < 6; ++c) {
      if (!std::getline(cells, cell, ','))
        throw rvdock::ParseError("expected 6 columns ux,uy,uz,mx,my,mz", lineno, "");
      std::istringstream value(cell);
      if (!(value >> row[c]) || !(value >> std::ws).eof())
        throw rvdock::ParseError("expected a number, got '" + cell + "'", lineno, "");
    }
    if (std::getline(cells, cell, ','))
      throw rvdock::ParseError("expected 6 columns ux,uy,uz,mx,my,mz", lineno, "");

    rvdock::ControlInput u;
    u.thrust = row.head<3>();
    u.torque = row.tail<3>();
    controls.push_back(u);
  }
  if (controls.empty()) throw rvdock::ParseError("controls file has no rows", lineno, "");
  return controls;
}

std::string solve_summary(const rvdock::SolveReport& solve) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%-26s = %s\n%-26s = %d\n%-26s = %d\n",
                "status", to_string(solve.status), "iterations", solve.iterations,
                "evaluations", solve.evaluations);
  return buf;
}

int run_plan(const std::string& scenario_path, const std::string& out_dir, int n_override,
             double tmax_override, LogLevel level) {
  rvdock::Scenario scn = rvdock::load_scenario(scenario_path);
  if (n_override > 0) scn.ocp.N = n_override;
  if (tmax_override > 0.0) scn.ocp.t_max = tmax_override;
  rvdock::validate_scenario(scn);
  if (level >= LogLevel::Info) scn.sqp.log = &std::cout;

  if (level >= LogLevel::Info) {
    std::cout << "planning '" << scn.name << "': N = " << scn.ocp.N
              << ", t_max = " << scn.ocp.t_max << " s, "
              << 6 * scn.ocp.N + 1 << " variables\n";
    if (level >= LogLevel::Debug)
      std::cout << "  kkt_tol = " << scn.sqp.kkt_tol << ", feas_tol = " << scn.sqp.feas_tol
                << ", gradient = "
                << (scn.sqp.gradient == rvdock::GradientMode::CentralDifference ? "central"
                                                                                : "forward")
                << ", substeps = " << scn.ocp.integrator.substeps_per_interval << "\n";
    std::cout << "\n";
  }

  const rvdock::PlanResult result = rvdock::plan(scn);

  if (level >= LogLevel::Info) std::cout << "\n";
  std::cout << solve_summary(result.solve) << format_report(result.verification);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const std::string traj_path = (std::filesystem::path(out_dir) / "trajectory.csv").string();
    const std::string report_path = (std::filesystem::path(out_dir) / "report.txt").string();
    rvdock::export_trajectory(result.trajectory, result.decision.u, traj_path);
    std::ofstream report(report_path);
    if (!report) throw rvdock::IoError("cannot open '" + report_path + "' for writing");
    report << "scenario                   = " << scn.name << "\n"
           << solve_summary(result.solve) << format_report(result.verification);
    if (level >= LogLevel::Info)
      std::cout << "\nwrote " << traj_path << "\nwrote " << report_path << "\n";
  }

  const bool ok =
      result.solve.status == rvdock::SQPStatus::Converged && result.verification.passed();
  return ok ? 0 : 1;
}

int run_propagate(const std::string& scenario_path, const std::string& controls_path,
                  const std::string& out_path, LogLevel level) {
  const rvdock::Scenario scn = rvdock::load_scenario(scenario_path);
  std::vector<rvdock::ControlInput> controls;
  if (!controls_path.empty())
    controls = read_controls(controls_path);
  else
    controls.assign(std::size_t(scn.ocp.N), rvdock::ControlInput{});

  const rvdock::Trajectory traj =
      rvdock::propagate(scn.ocp.x0, controls, scn.ocp.t_max, scn.ocp.params, scn.ocp.integrator);
  rvdock::export_trajectory(traj, controls, out_path);

  if (level >= LogLevel::Info)
    std::cout << "propagated '" << scn.name << "' over " << scn.ocp.t_max << " s ("
              << controls.size() << " intervals, " << traj.size() << " nodes)\nwrote " << out_path
              << "\n";
  if (level >= LogLevel::Debug) std::cout << "\n" << format_report(verify(traj, scn));
  return 0;
}

int run_verify(const std::string& trajectory_path, const std::string& scenario_path,
               LogLevel level) {
  const rvdock::Scenario scn = rvdock::load_scenario(scenario_path);
  const rvdock::Trajectory traj = rvdock::import_trajectory(trajectory_path);
  const rvdock::VerificationReport report = rvdock::verify(traj, scn);
  if (level >= LogLevel::Debug)
    std::cout << "verifying " << traj.size() << " nodes against '" << scn.name << "'\n\n";
  std::cout << format_report(report);
  return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rvdock: energy-optimal docking trajectory planner"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "output verbosity: quiet, info, or debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}));

  auto* plan_cmd = app.add_subcommand("plan", "solve a scenario and report the plan quality");
  std::string plan_scenario, out_dir;
  int n_override = 0;
  double tmax_override = 0.0;
  plan_cmd->fallthrough();
  plan_cmd->add_option("scenario", plan_scenario, "scenario file")->required();
  plan_cmd->add_option("--out-dir", out_dir, "write trajectory.csv and report.txt here");
  plan_cmd->add_option("--N", n_override, "override the number of control intervals")
      ->check(CLI::PositiveNumber);
  plan_cmd->add_option("--tmax", tmax_override, "override the maneuver time bound, s")
      ->check(CLI::PositiveNumber);

  auto* prop_cmd =
      app.add_subcommand("propagate", "integrate a scenario under given (or zero) controls");
  std::string prop_scenario, controls_path, prop_out = "trajectory.csv";
  prop_cmd->fallthrough();
  prop_cmd->add_option("scenario", prop_scenario, "scenario file")->required();
  prop_cmd->add_option("--controls", controls_path,
                       "CSV of ZOH controls, one row ux,uy,uz,mx,my,mz per interval");
  prop_cmd->add_option("--out", prop_out, "output trajectory CSV path");

  auto* verify_cmd =
      app.add_subcommand("verify", "re-check a stored trajectory against a scenario");
  std::string verify_trajectory, verify_scenario;
  verify_cmd->fallthrough();
  verify_cmd->add_option("trajectory", verify_trajectory, "trajectory CSV file")->required();
  verify_cmd->add_option("scenario", verify_scenario, "scenario file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const LogLevel level = parse_level(log_level);
  try {
    if (plan_cmd->parsed())
      return run_plan(plan_scenario, out_dir, n_override, tmax_override, level);
    if (prop_cmd->parsed()) return run_propagate(prop_scenario, controls_path, prop_out, level);
    return run_verify(verify_trajectory, verify_scenario, level);
  } catch (const rvdock::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rvdock::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rvdock::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rvdock::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
