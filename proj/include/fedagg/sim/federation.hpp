#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedagg/aggregator.hpp"
#include "fedagg/sim/models.hpp"

namespace fedagg::sim {

enum class Protocol {
  MultiRoundSgd,  // aggregate gradients every round
  OneRoundFit,    // aggregate locally fitted parameters once
};

struct LearningRate {
  enum class Kind { Constant, InverseT };
  Kind kind = Kind::Constant;
  double eta = 0.1;

  // Step size for round t >= 1.
  double at(std::size_t t) const noexcept;
  bool operator==(const LearningRate&) const = default;
};

struct TaskSpec {
  ModelSpec model = LinearRegression{};
  Protocol protocol = Protocol::MultiRoundSgd;
  BatchMode batch = FullBatch{};
  std::size_t rounds = 200;
  LearningRate learning_rate;
  std::size_t pool_size = 1500;
  std::size_t test_size = 500;
  LocalFitOptions local_fit;
};

// k == 0 means every party joins every round.
struct Participation {
  std::size_t k = 0;
  bool operator==(const Participation&) const = default;
};

// Everything a single run needs apart from the aggregator and the seed.
struct SimConfig {
  TaskSpec task;
  std::vector<PartySpec> parties;
  OverlapDesign overlap;
  Participation participation;
  std::size_t window = 10;
  // Drop the aggregator's cross-round estimates before every round.
  bool reset_state = false;
  // Measure wall-clock time per round. Off by default so logs are
  // reproducible byte for byte.
  bool timing = false;

  // Throws InvalidInputError / DesignError on an unusable configuration.
  void validate() const;
};

struct RoundLog {
  std::size_t round = 0;
  std::vector<PartyId> participants;
  std::vector<double> update_norms;  // aligned with participants
  std::vector<double> weights;       // empty when the aggregator reports none
  double metric = 0.0;
  double wallclock_ms = 0.0;
  // Local fits that diverged (one-round mode).
  std::vector<PartyId> diverged;
  // Hash of every random draw made for the round: participants, mini-batch
  // rows and adversary vectors. Independent of the aggregator by design.
  std::uint64_t draw_digest = 0;
};

struct RunResult {
  Eigen::VectorXd w;
  std::vector<RoundLog> logs;
  double final_metric = 0.0;
};

// Sorted subset of `parties` for one round.
std::vector<PartyId> sample_participants(const std::vector<PartyId>& parties,
                                         const Participation& rule, std::uint64_t seed,
                                         std::size_t round);

// Every genuine party fits locally; adversaries send noise of the same
// length; the aggregator combines them once.
RunResult run_one_round_estimation(const SimConfig& config, const AggregatorKind& aggregator,
                                   std::uint64_t seed);

// w <- w - eta_t * consensus over config.task.rounds rounds, carrying the
// aggregator state across rounds. Throws RuntimeAbort when w stops being
// finite.
RunResult run_multi_round_sgd(const SimConfig& config, const AggregatorKind& aggregator,
                              std::uint64_t seed);

// Dispatches on config.task.protocol.
RunResult run_federation(const SimConfig& config, const AggregatorKind& aggregator,
                         std::uint64_t seed);

}  // namespace fedagg::sim
