#pragma once

#include <map>
#include <span>
#include <vector>

#include "fedagg/update_matrix.hpp"

namespace fedagg {

struct ResidualRecord {
  std::size_t round_id = 0;
  double squared_residual = 0.0;  // |x_ij - y_i|^2 at the last iterate
  std::size_t count = 0;          // number of coordinates K
};

// Per-party noise variance shared across rounds.
struct PartyVariance {
  double sigma_sq = 1.0;
  std::vector<ResidualRecord> history;  // rounds the party joined, oldest first
};

using VarianceTable = std::map<PartyId, PartyVariance>;

struct IvarMleOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;
  double floor = 1e-8;
  // Start from the coordinate-wise median instead of the stored variances.
  bool robust_start = false;
  // Upper bound on the residual history kept per party.
  std::size_t window = 10;
};

// Alternates the inverse-variance weighted mean of every round with the
// pooled per-party variance estimate over all rounds the party joined.
// Parties missing from `state` are added with sigma^2 = 1. Returns one result
// per input round; objective_trace holds the joint Gaussian log-likelihood
//   sum_ij [-log s_j - |x_ij - y_i|^2 / (K s_j)]
// after every iteration.
std::vector<AggregateResult> ivar_mle_aggregate(std::span<const UpdateMatrix> rounds,
                                                VarianceTable& state,
                                                const IvarMleOptions& options = {});

double ivar_log_likelihood(std::span<const UpdateMatrix> rounds,
                           std::span<const Eigen::VectorXd> consensus, const VarianceTable& state);

// (1/sigma_j^2)-normalized weights for the given parties. Throws LookupError
// for a party with no entry.
std::vector<double> ivar_weights(const VarianceTable& state, std::span<const PartyId> parties);

struct RoundPosterior {
  std::size_t round_id = 0;
  Eigen::VectorXd mean;  // y-bar_i
  double variance = 0.0;  // lambda_i, shared by all coordinates
};

struct IvarVbState {
  double tau_sq = 1.0;
  VarianceTable sigma;
  std::vector<RoundPosterior> posteriors;  // one per round of the last call
};

struct IvarVbOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;
  double floor = 1e-8;
  bool freeze_tau = false;
  bool freeze_sigma = false;
  std::size_t window = 10;
};

// Independent-noise variational Bayes: Gaussian posterior over each round's
// consensus under a N(0, tau^2) prior, with tau^2 and the party variances
// re-estimated after every pass. Coordinates are treated as independent
// replicates sharing one sigma_j^2. objective_trace holds the free energy
// after every pass; consensus is the posterior mean.
std::vector<AggregateResult> ivar_vb_aggregate(std::span<const UpdateMatrix> rounds,
                                               IvarVbState& state,
                                               const IvarVbOptions& options = {});

double ivar_vb_free_energy(std::span<const UpdateMatrix> rounds, const IvarVbState& state);

}  // namespace fedagg
