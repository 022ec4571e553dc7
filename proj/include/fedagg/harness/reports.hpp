#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fedagg/harness/suite.hpp"

namespace fedagg::harness {

// Output files of one suite:
//   curves.csv   run_id,aggregator,seed,round,metric,wallclock_ms
//   runs.csv     run_id,aggregator,seed,final_metric,status
//   summary.csv  aggregator,mean,std,n
//   summary.json the same three tables as JSON
struct ReportPaths {
  std::filesystem::path curves;
  std::filesystem::path runs;
  std::filesystem::path summary_csv;
  std::filesystem::path summary_json;

  static ReportPaths in(const std::filesystem::path& dir);
};

std::string curves_csv(const ExperimentSummary& summary);
std::string runs_csv(const ExperimentSummary& summary);
std::string summary_csv(const std::vector<AggregatorSummary>& table);
std::string summary_json(const ExperimentSummary& summary);

// Renders everything first, then writes each file through a temporary and
// renames it into place. Throws IoError before touching any target when a
// directory or temporary cannot be created.
void emit_reports(const ExperimentSummary& summary, const ReportPaths& paths);

// Rebuilds run records from runs.csv, or from the last round of each run in
// curves.csv when runs.csv is absent. Throws IoError / InvalidInputError.
std::vector<RunRecord> load_runs(const std::filesystem::path& dir);

// Fixed-width text table for terminals.
std::string format_table(const std::vector<AggregatorSummary>& table, const std::string& metric);

// Shortest decimal that reads back to the same double; "nan" / "inf" for
// non-finite values.
std::string format_double(double x);

}  // namespace fedagg::harness
