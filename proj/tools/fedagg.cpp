// fedagg: run, validate and summarize aggregation experiments.
#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "fedagg/errors.hpp"
#include "fedagg/harness/config.hpp"
#include "fedagg/harness/reports.hpp"
#include "fedagg/harness/suite.hpp"

namespace {

using namespace fedagg;
using namespace fedagg::harness;

enum Exit { kOk = 0, kConfig = 1, kAbort = 2, kIo = 3 };

constexpr const char* kOutDirEnv = "FEDAGG_OUT_DIR";

void print_config_error(const ConfigError& e) {
  std::cerr << "config error:\n";
  for (const auto& issue : e.issues()) std::cerr << "  " << issue << "\n";
}

// --aggregator names either a label from the config or a method name.
std::vector<NamedAggregator> pick_aggregators(const FederationConfig& config,
                                              const std::vector<std::string>& wanted) {
  if (wanted.empty()) return config.aggregators;
  std::vector<NamedAggregator> out;
  std::vector<std::string> issues;
  for (const auto& name : wanted) {
    auto it = std::find_if(config.aggregators.begin(), config.aggregators.end(),
                           [&](const NamedAggregator& a) { return a.label == name; });
    if (it != config.aggregators.end()) {
      out.push_back(*it);
      continue;
    }
    try {
      const auto kind = AggregatorKind::from_name(name);
      out.push_back({kind.name(), kind});
    } catch (const InvalidInputError&) {
      issues.push_back("--aggregator: unknown aggregator '" + name + "'");
    }
  }
  if (!issues.empty()) throw ConfigError(issues);
  return out;
}

int run(const std::string& config_path, const std::string& out_flag,
        const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& aggregators,
        bool quiet, unsigned jobs) {
  FederationConfig config = load_config(config_path);
  if (!seeds.empty()) config.seeds = seeds;
  const auto chosen = pick_aggregators(config, aggregators);

  std::filesystem::path out = "fedagg-out";
  if (!out_flag.empty()) {
    out = out_flag;
  } else if (config.output) {
    out = *config.output;
  } else if (const char* env = std::getenv(kOutDirEnv); env && *env) {
    out = env;
  }

  SuiteOptions options;
  options.jobs = jobs;
  if (!quiet) {
    options.on_run = [](const RunRecord& r) {
      std::cerr << "run " << r.run_id << " " << r.aggregator << " seed " << r.seed << ": "
                << (r.aborted ? "aborted" : format_double(r.final_metric)) << "\n";
    };
  }
  const ExperimentSummary summary = run_suite(config, chosen, options);
  for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
  emit_reports(summary, ReportPaths::in(out));
  if (!quiet) std::cout << format_table(summary.table, summary.metric);

  bool any_completed = false;
  for (const auto& r : summary.runs) any_completed = any_completed || !r.aborted;
  return any_completed ? kOk : kAbort;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust federated aggregation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> aggregators;
  bool quiet = false;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());

  auto* run_cmd = app.add_subcommand("run", "Run every (aggregator, seed) pair of a config");
  run_cmd->add_option("config", config_path, "JSON config file")->required();
  run_cmd->add_option("--out", out_dir,
                      std::string("Output directory (default: config 'output', then $") +
                          kOutDirEnv + ", then ./fedagg-out)");
  run_cmd->add_option("--seed", seeds, "Seed to run instead of the config's list (repeatable)");
  run_cmd->add_option("--aggregator", aggregators,
                      "Aggregator label or method name to run (repeatable)");
  run_cmd->add_flag("--quiet", quiet, "Only print warnings and errors");
  run_cmd->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a config without running it");
  validate_cmd->add_option("config", validate_path, "JSON config file")->required();
  validate_cmd->add_flag("--quiet", quiet, "Print nothing on success");

  std::string table_dir;
  auto* table_cmd = app.add_subcommand("table", "Re-summarize the CSVs of a finished run");
  table_cmd->add_option("dir", table_dir, "Directory holding runs.csv or curves.csv")->required();
  table_cmd->add_option("--out", out_dir, "Also write summary.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*run_cmd) return run(config_path, out_dir, seeds, aggregators, quiet, jobs);
    if (*validate_cmd) {
      const auto config = load_config(validate_path);
      if (!quiet) {
        std::cout << "ok: " << config.sim.parties.size() << " parties, "
                  << config.aggregators.size() << " aggregators, " << config.seeds.size()
                  << " seeds\n";
      }
      return kOk;
    }
    const auto runs = load_runs(table_dir);
    const auto table = summarize(runs);
    std::cout << format_table(table, "metric");
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      std::ofstream out(std::filesystem::path(out_dir) / "summary.csv", std::ios::binary);
      out << summary_csv(table);
      if (!out) throw IoError("cannot write " + out_dir + "/summary.csv");
    }
    return kOk;
  } catch (const ConfigError& e) {
    print_config_error(e);
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const InvalidInputError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const RuntimeAbort& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAbort;
  }
}
