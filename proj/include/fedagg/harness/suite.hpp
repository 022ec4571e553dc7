#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedagg/harness/config.hpp"

namespace fedagg::harness {

struct RunRecord {
  std::size_t run_id = 0;
  std::string aggregator;  // label
  std::uint64_t seed = 0;
  bool aborted = false;
  std::string error;
  double final_metric = 0.0;
  std::vector<sim::RoundLog> rounds;
};

struct AggregatorSummary {
  std::string aggregator;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; NaN when n < 2
  std::size_t n = 0;  // completed runs
};

struct ExperimentSummary {
  std::string metric;  // "test_mse" or "accuracy"
  std::vector<RunRecord> runs;  // aggregator-major, then seed, in config order
  std::vector<AggregatorSummary> table;
  std::vector<std::string> warnings;
};

struct SuiteOptions {
  unsigned jobs = 1;
  // Called once per finished run, from the calling thread, in run order.
  std::function<void(const RunRecord&)> on_run;
};

// Runs every (aggregator, seed) pair. Runs are independent: worker threads
// pick them up in any order and results are stored by run id, so the output
// does not depend on `jobs`. An aborted run is kept with its error, left out
// of the means, and reported as a warning.
ExperimentSummary run_suite(const FederationConfig& config,
                            const std::vector<NamedAggregator>& aggregators,
                            const SuiteOptions& options = {});

// Per-aggregator mean, sample std and count over the completed runs, in
// order of first appearance.
std::vector<AggregatorSummary> summarize(const std::vector<RunRecord>& runs);

}  // namespace fedagg::harness
