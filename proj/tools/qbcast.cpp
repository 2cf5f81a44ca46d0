// qbcast: scenario-driven front end.
//   qbcast run <scenario.json> [--seed N] [--out DIR]
//   qbcast validate <scenario.json>
//   qbcast thresholds --lambda-min A --lambda-max B --points N
// Worker threads come from QBCAST_WORKERS (default 1).

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "qbcast/runner.hpp"

#ifndef QBCAST_VERSION
#define QBCAST_VERSION "dev"
#endif

namespace {

using namespace qbcast;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open scenario file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

unsigned workers_from_env() {
  const char* v = std::getenv("QBCAST_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw ValidationError("must be an integer in [1, 1024]", "QBCAST_WORKERS");
  return static_cast<unsigned>(n);
}

int report(const std::exception& e) {
  const int code = exit_code_for(e);
  const char* tag = code == kExitValidation ? "validation error" : code == kExitNumerical ? "numerical failure" : "error";
  std::cerr << "qbcast: " << tag << ": " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear gate broadcasting simulator"};
  app.set_version_flag("--version", std::string(QBCAST_VERSION));
  app.require_subcommand(1);

  std::string scenario_path, out_dir;
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "Run a scenario and write its outputs");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--out", out_dir, "Override output.path");

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a scenario and print its resolved form");
  validate->add_option("scenario", validate_path, "Scenario JSON file")->required();

  double lmin = 0.0, lmax = 1.2;
  std::size_t points = 200;
  auto* thr = app.add_subcommand("thresholds", "Print the classification thresholds over a lambda grid");
  thr->add_option("--lambda-min", lmin, "First lambda");
  thr->add_option("--lambda-max", lmax, "Last lambda");
  thr->add_option("--points", points, "Grid points")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*run) {
      Scenario s = parse_scenario(read_file(scenario_path));
      if (seed) s.seed = *seed;
      RunOptions opt;
      opt.workers = workers_from_env();
      opt.version = QBCAST_VERSION;
      if (!out_dir.empty()) opt.out_dir = out_dir;
      const RunReport r = run_scenario(s, opt);
      for (const auto& f : r.files) std::cout << (r.dir / f).string() << "\n";
    } else if (*validate) {
      const Scenario s = parse_scenario(read_file(validate_path));
      std::cout << serialize_scenario(s).dump(2) << "\n";
    } else if (*thr) {
      if (!(lmin <= lmax)) throw ValidationError("--lambda-min must not exceed --lambda-max");
      std::cout << "lambda,sigma_nc,sigma_ng,sigma_sq\n";
      for (double l : linspace(lmin, lmax, points))
        std::cout << format_number(l) << "," << format_number(threshold_nc(l)) << "," << format_number(threshold_ng(l))
                  << "," << format_number(threshold_sq(l)) << "\n";
    }
  } catch (const std::exception& e) {
    return report(e);
  }
  return kExitOk;
}
