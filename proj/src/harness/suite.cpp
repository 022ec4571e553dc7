#include "fedagg/harness/suite.hpp"

#include <atomic>
#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "fedagg/errors.hpp"

namespace fedagg::harness {

std::vector<AggregatorSummary> summarize(const std::vector<RunRecord>& runs) {
  std::vector<AggregatorSummary> table;
  std::map<std::string, std::vector<double>> finals;
  for (const auto& r : runs) {
    if (!finals.count(r.aggregator)) table.push_back({r.aggregator, 0.0, 0.0, 0});
    auto& values = finals[r.aggregator];
    if (!r.aborted) values.push_back(r.final_metric);
  }
  for (auto& row : table) {
    const auto& v = finals[row.aggregator];
    row.n = v.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (v.empty()) {
      row.mean = nan;
      row.std = nan;
      continue;
    }
    double sum = 0.0;
    for (double x : v) sum += x;
    row.mean = sum / static_cast<double>(v.size());
    if (v.size() < 2) {
      row.std = nan;
      continue;
    }
    double ss = 0.0;
    for (double x : v) ss += (x - row.mean) * (x - row.mean);
    row.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return table;
}

ExperimentSummary run_suite(const FederationConfig& config,
                            const std::vector<NamedAggregator>& aggregators,
                            const SuiteOptions& options) {
  if (aggregators.empty()) throw InvalidInputError("run_suite: no aggregators");
  if (config.seeds.empty()) throw InvalidInputError("run_suite: no seeds");
  config.sim.validate();

  ExperimentSummary summary;
  summary.metric = sim::higher_is_better(config.sim.task.model) ? "accuracy" : "test_mse";
  const std::size_t total = aggregators.size() * config.seeds.size();
  summary.runs.resize(total);

  auto execute = [&](std::size_t id) {
    RunRecord& rec = summary.runs[id];
    const auto& agg = aggregators[id / config.seeds.size()];
    rec.run_id = id;
    rec.aggregator = agg.label;
    rec.seed = config.seeds[id % config.seeds.size()];
    try {
      sim::RunResult res = sim::run_federation(config.sim, agg.kind, rec.seed);
      rec.final_metric = res.final_metric;
      rec.rounds = std::move(res.logs);
    } catch (const std::exception& e) {
      rec.aborted = true;
      rec.error = e.what();
    }
  };

  // Workers claim run ids from a shared counter; the caller reports finished
  // runs in id order as soon as the prefix is complete.
  std::atomic<std::size_t> next{0};
  std::vector<char> done(total, 0);
  std::mutex mu;
  std::condition_variable cv;
  auto worker = [&] {
    for (std::size_t id = next++; id < total; id = next++) {
      execute(id);
      {
        std::lock_guard lock(mu);
        done[id] = 1;
      }
      cv.notify_all();
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(options.jobs, static_cast<unsigned>(total)));
  std::vector<std::thread> pool;
  if (jobs == 1) {
    worker();
  } else {
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  for (std::size_t id = 0; id < total; ++id) {
    {
      std::unique_lock lock(mu);
      cv.wait(lock, [&] { return done[id] != 0; });
    }
    const RunRecord& rec = summary.runs[id];
    if (rec.aborted) {
      summary.warnings.push_back("run " + std::to_string(id) + " (" + rec.aggregator + ", seed " +
                                 std::to_string(rec.seed) + ") aborted: " + rec.error);
    }
    if (options.on_run) options.on_run(rec);
  }
  for (auto& t : pool) t.join();
  summary.table = summarize(summary.runs);
  return summary;
}

}  // namespace fedagg::harness
