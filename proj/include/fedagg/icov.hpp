#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedagg/update_matrix.hpp"

namespace fedagg {

enum class CovarianceMode { Full, Latent };

// Low-rank-plus-isotropic parameterization phi = s_u * V V^T + s * I.
struct LatentParams {
  Eigen::MatrixXd v;  // one row per party, D columns
  double sigma_u_sq = 0.1;
  double sigma_sq = 1.0;
};

// Cross-party noise covariance. Rows and columns follow `parties`.
struct CovarianceModel {
  std::vector<PartyId> parties;
  Eigen::MatrixXd phi;
  CovarianceMode mode = CovarianceMode::Full;
  std::optional<LatentParams> latent;
  // Estimate before symmetrization/jitter (full estimates only).
  Eigen::MatrixXd raw;
  double jitter = 0.0;
  // Pairs that never co-occurred; their entries are set to zero.
  std::vector<std::pair<PartyId, PartyId>> missing_pairs;

  Eigen::MatrixXd submatrix(std::span<const PartyId> ids) const;
};

// Generalized-least-squares consensus X phi^{-1} 1 / (1^T phi^{-1} 1) via a
// Cholesky solve. Weights may be negative; negative_weights flags it.
AggregateResult mle_consensus_given_phi(const UpdateMatrix& x, const Eigen::MatrixXd& phi_sub);

// Pooled residual cross-products over the rounds each pair shares, divided by
// K times the number of shared rounds, then symmetrized and jittered to SPD.
CovarianceModel mle_phi_given_consensus(std::span<const UpdateMatrix> rounds,
                                        std::span<const Eigen::VectorXd> consensus);

struct OverlapSpec {
  std::vector<std::size_t> sample_sizes;
  // Symmetric counts |D_j ∩ D_j'|; the diagonal equals sample_sizes.
  Eigen::MatrixXd overlaps;
  double sigma_sq = 1.0;

  void validate() const;
};

// Covariance of per-party sample means when samples overlap:
//   phi_jj' = |D_j ∩ D_j'| * sigma^2 / (|D_j| |D_j'|).
// Parties are numbered 0..J-1.
CovarianceModel overlap_phi(const OverlapSpec& spec);

// ---- latent-factor maximum likelihood ------------------------------------

// Per-round objective E = sum_k [-log|phi| - d_k^T phi^{-1} d_k] for the
// residual columns d_k (rows of `residuals`, a K x J matrix) and its
// gradients with respect to the party rows of V, sigma^2 and sigma_u^2.
struct LatentObjective {
  double value = 0.0;
  Eigen::MatrixXd grad_v;
  double grad_sigma_sq = 0.0;
  double grad_sigma_u_sq = 0.0;
};

LatentObjective latent_round_objective(const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& v,
                                       double sigma_u_sq, double sigma_sq);

struct IcovMleState {
  std::map<PartyId, Eigen::VectorXd> v;  // latent feature row per party
  double sigma_u_sq = 0.1;
  double sigma_sq = 1.0;
  std::uint64_t seed = 0;  // draws initial rows for unseen parties
};

struct IcovMleOptions {
  std::size_t latent_dim = 2;
  double lr = 1e-3;
  std::size_t epochs = 200;
  // Lower bound on both variances; zero residuals would otherwise drive
  // sigma^2 toward zero without limit.
  double floor = 1e-8;
  // An epoch that lowers the summed objective by more than
  // divergence_tol * (1 + |E|) raises StepSizeError.
  double divergence_tol = 0.25;
};

struct IcovMleFit {
  CovarianceModel model;
  std::vector<AggregateResult> results;  // one per round
};

// Alternates the GLS consensus under the current latent covariance with one
// epoch of stochastic gradient ascent over the rounds (variances stepped in
// log space). Parties without a row in `state` get N(0, 0.01) entries.
IcovMleFit icov_mle_fit(std::span<const UpdateMatrix> rounds, IcovMleState& state,
                        const IcovMleOptions& options = {});

// ---- latent-noise variational Bayes --------------------------------------

struct LatentParty {
  Eigen::VectorXd v_mean;
  Eigen::MatrixXd v_cov;
  double sigma_sq = 1.0;
};

struct LatentRound {
  std::size_t round_id = 0;
  Eigen::MatrixXd u_mean;  // D x K, one latent task vector per coordinate
  Eigen::MatrixXd u_cov;   // D x D, shared by the coordinates
  Eigen::VectorXd y_mean;
  double y_var = 0.0;
};

struct IcovVbState {
  std::size_t latent_dim = 2;
  double sigma_y_sq = 1.0;
  double sigma_u_sq = 0.1;
  double sigma_v_sq = 0.1;
  std::map<PartyId, LatentParty> parties;
  std::vector<LatentRound> rounds;  // aligned with the rounds of the last call
  std::uint64_t seed = 0;
};

enum class ConsensusSource {
  PosteriorMean,  // y-bar_i
  Marginal,       // GLS under sigma_u^2 V V^T + diag(sigma_j^2)
};

struct IcovVbOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;
  double floor = 1e-8;
  // One noise variance for every party instead of per-party values.
  bool shared_noise = false;
  bool pin_sigma_y = false;
  bool pin_sigma_u = false;
  bool pin_sigma_v = false;
  bool pin_noise = false;
  ConsensusSource consensus = ConsensusSource::PosteriorMean;
};

// Mean-field VB for x_ijk ~ N(y_ik + u_ik^T v_j, sigma_j^2) with Gaussian
// priors on y, u and v. Each pass updates q(y), q(u), q(v) and then the four
// hyperparameter groups in closed form; iteration stops when the relative
// free-energy change drops below tol. objective_trace holds the free energy
// after every pass.
std::vector<AggregateResult> icov_vb_aggregate(std::span<const UpdateMatrix> rounds,
                                               IcovVbState& state,
                                               const IcovVbOptions& options = {});

double icov_vb_free_energy(std::span<const UpdateMatrix> rounds, const IcovVbState& state);

}  // namespace fedagg
