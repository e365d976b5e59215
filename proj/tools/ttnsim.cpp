// Command-line front end: run one configured evolution, compare two run
// directories, benchmark sweep timings, or inspect a checkpoint.
//
// Exit codes: 0 success (compare: within tolerance; bench: preflight clean),
// 1 failed result or runtime error, 2 invalid usage or configuration.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "ttns/run.hpp"

namespace {

int parse_threads_env() {
  const char* env = std::getenv("TTNSIM_THREADS");
  if (env == nullptr) return 0;
  try {
    return std::max(0, std::stoi(env));
  } catch (const std::exception&) {
    return 0;
  }
}

int do_run(const std::string& config_path, const std::string& output_override) {
  std::ifstream is(config_path, std::ios::binary);
  if (!is) {
    std::cerr << "error: cannot open config " << config_path << "\n";
    return 2;
  }
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  ttns::RunConfig cfg;
  try {
    cfg = ttns::run_config_from_text(text);
  } catch (const ttns::ConfigErrors& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const ttns::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  if (!output_override.empty()) cfg.output.directory = output_override;
  const ttns::RunResult result = ttns::run(cfg);
  std::cout << "wrote " << result.n_records << " records (" << ttns::to_string(cfg.backend)
            << " backend) to " << result.directory << " in " << result.wall_seconds << " s\n";
  return 0;
}

int do_compare(const std::string& dir_a, const std::string& dir_b,
               const ttns::CompareTolerances& tols, const std::string& report_path) {
  const ttns::CompareReport report = ttns::compare_runs(dir_a, dir_b, tols);
  std::cout << ttns::render_compare_table(report);
  if (!report_path.empty()) {
    std::ofstream os(report_path, std::ios::binary | std::ios::trunc);
    if (!os) {
      std::cerr << "error: cannot write " << report_path << "\n";
      return 2;
    }
    os << ttns::compare_report_to_json(report).dump(2) << "\n";
  }
  return report.pass ? 0 : 1;
}

int do_bench(const ttns::BenchOptions& opt, const std::string& csv_path) {
  const ttns::BenchReport report = ttns::run_bench(opt);
  std::cout << ttns::render_bench_table(report);
  if (!csv_path.empty()) {
    std::ofstream os(csv_path, std::ios::binary | std::ios::trunc);
    if (!os) {
      std::cerr << "error: cannot write " << csv_path << "\n";
      return 2;
    }
    os << ttns::bench_to_csv(report);
  }
  return report.all_preflight_pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  if (const int threads = parse_threads_env(); threads > 0) Eigen::setNbThreads(threads);

  CLI::App app{"ttnsim: tree tensor network quench dynamics"};
  app.require_subcommand(1);

  std::string config_path, output_override;
  CLI::App* run_cmd = app.add_subcommand("run", "evolve one configured system");
  run_cmd->add_option("config", config_path, "run configuration file (INI)")->required();
  run_cmd->add_option("--output", output_override, "override the configured output directory");

  std::string dir_a, dir_b, report_path;
  double default_tol = 1e-9;
  bool interpolate = false;
  std::vector<std::string> tol_fields;
  CLI::App* cmp_cmd = app.add_subcommand("compare", "compare two run directories");
  cmp_cmd->add_option("run_a", dir_a, "reference run directory")->required();
  cmp_cmd->add_option("run_b", dir_b, "candidate run directory")->required();
  cmp_cmd->add_option("--tol", default_tol, "default per-field tolerance");
  cmp_cmd->add_option("--tol-field", tol_fields, "per-field override, name=value (repeatable)");
  cmp_cmd->add_flag("--interpolate", interpolate, "map run B onto run A's time grid");
  cmp_cmd->add_option("--report", report_path, "write a JSON report here");

  ttns::BenchOptions bench_opt;
  std::string bench_csv;
  double budget_gib = 3.0;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time TDVP sweeps across sizes and ranks");
  bench_cmd->add_option("--sizes", bench_opt.sizes, "square side lengths (powers of two)");
  bench_cmd->add_option("--chis", bench_opt.chis, "bond dimensions to time");
  bench_cmd->add_option("--naive-chis", bench_opt.naive_chis,
                        "bond dimensions that also time the per-term cache");
  bench_cmd->add_option("--steps", bench_opt.steps, "timed steps per cell (median)");
  bench_cmd->add_option("--warmup", bench_opt.warmup, "untimed entangling steps per cell");
  bench_cmd->add_option("--g", bench_opt.g, "transverse coupling used for timing");
  bench_cmd->add_option("--h-field", bench_opt.h, "longitudinal coupling used for timing");
  bench_cmd->add_option("--budget-gib", budget_gib, "skip cells estimated above this many GiB");
  bench_cmd->add_option("--csv", bench_csv, "write per-cell results here");

  std::string state_path;
  CLI::App* inspect_cmd = app.add_subcommand("inspect-state", "summarize a checkpoint file");
  inspect_cmd->add_option("checkpoint", state_path, "checkpoint written by a run")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return do_run(config_path, output_override);
    if (cmp_cmd->parsed()) {
      ttns::CompareTolerances tols;
      tols.default_tol = default_tol;
      tols.interpolate = interpolate;
      for (const std::string& spec : tol_fields) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) {
          std::cerr << "error: --tol-field expects name=value, got '" << spec << "'\n";
          return 2;
        }
        tols.per_field[spec.substr(0, eq)] = std::stod(spec.substr(eq + 1));
      }
      return do_compare(dir_a, dir_b, tols, report_path);
    }
    if (bench_cmd->parsed()) {
      bench_opt.memory_budget = static_cast<std::size_t>(budget_gib * (1ull << 30));
      return do_bench(bench_opt, bench_csv);
    }
    if (inspect_cmd->parsed()) {
      std::cout << ttns::inspect_state(state_path);
      return 0;
    }
  } catch (const ttns::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
