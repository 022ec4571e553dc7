#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fedagg/errors.hpp"
#include "fedagg/icov.hpp"
#include "fedagg/linalg.hpp"
#include "fedagg/rng.hpp"

namespace fedagg {
namespace {

std::map<PartyId, Eigen::Index> index_parties(std::span<const UpdateMatrix> rounds) {
  std::map<PartyId, Eigen::Index> index;
  for (const auto& r : rounds) {
    for (PartyId id : r.party_ids()) index.try_emplace(id, 0);
  }
  Eigen::Index next = 0;
  for (auto& [id, slot] : index) slot = next++;
  return index;
}

std::vector<Eigen::Index> rows_of(const UpdateMatrix& x,
                                  const std::map<PartyId, Eigen::Index>& index) {
  std::vector<Eigen::Index> rows;
  rows.reserve(x.party_ids().size());
  for (PartyId id : x.party_ids()) rows.push_back(index.at(id));
  return rows;
}

Eigen::MatrixXd residual_matrix(const UpdateMatrix& x, const Eigen::VectorXd& y) {
  return x.values().colwise() - y;
}

}  // namespace

Eigen::MatrixXd CovarianceModel::submatrix(std::span<const PartyId> ids) const {
  std::vector<Eigen::Index> rows;
  rows.reserve(ids.size());
  for (PartyId id : ids) {
    auto it = std::find(parties.begin(), parties.end(), id);
    if (it == parties.end()) throw LookupError("covariance model has no party " + to_string(id));
    rows.push_back(static_cast<Eigen::Index>(it - parties.begin()));
  }
  return phi(rows, rows);
}

AggregateResult mle_consensus_given_phi(const UpdateMatrix& x, const Eigen::MatrixXd& phi_sub) {
  if (phi_sub.rows() != x.num_parties() || phi_sub.cols() != x.num_parties()) {
    throw ShapeError("mle_consensus_given_phi: covariance is " + std::to_string(phi_sub.rows()) +
                     "x" + std::to_string(phi_sub.cols()) + " for " +
                     std::to_string(x.num_parties()) + " parties");
  }
  const SpdFactor factor = factor_spd(phi_sub, "mle_consensus_given_phi");
  const Eigen::VectorXd precision_ones = factor.solve(Eigen::VectorXd::Ones(x.num_parties()));
  const double denom = precision_ones.sum();
  if (!(denom > 0.0) || !std::isfinite(denom)) {
    throw ConditioningError("mle_consensus_given_phi: 1^T phi^{-1} 1 is not positive");
  }

  AggregateResult out;
  Eigen::VectorXd weights = precision_ones / denom;
  out.consensus = x.values() * weights;
  out.negative_weights = (weights.array() < 0.0).any();
  out.weights = std::move(weights);
  out.iterations = 1;
  return out;
}

CovarianceModel mle_phi_given_consensus(std::span<const UpdateMatrix> rounds,
                                        std::span<const Eigen::VectorXd> consensus) {
  if (rounds.empty()) throw InvalidInputError("mle_phi_given_consensus: empty round set");
  if (consensus.size() != rounds.size()) {
    throw ShapeError("mle_phi_given_consensus: one consensus vector per round required");
  }
  const auto index = index_parties(rounds);
  const auto n = static_cast<Eigen::Index>(index.size());
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(n, n);

  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    if (consensus[i].size() != x.dim()) throw ShapeError("mle_phi_given_consensus: consensus length");
    const Eigen::MatrixXd delta = residual_matrix(x, consensus[i]);
    const Eigen::MatrixXd cross = delta.transpose() * delta;
    const auto rows = rows_of(x, index);
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < rows.size(); ++b) {
        sums(rows[a], rows[b]) += cross(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        counts(rows[a], rows[b]) += static_cast<double>(x.dim());
      }
    }
  }

  CovarianceModel model;
  model.mode = CovarianceMode::Full;
  for (const auto& [id, row] : index) model.parties.push_back(id);
  model.raw = Eigen::MatrixXd::Zero(n, n);
  bool any_pair = false;
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) {
      if (counts(a, b) > 0.0) {
        model.raw(a, b) = sums(a, b) / counts(a, b);
        if (a != b) any_pair = true;
      } else if (a < b) {
        model.missing_pairs.emplace_back(model.parties[static_cast<std::size_t>(a)],
                                         model.parties[static_cast<std::size_t>(b)]);
      }
    }
  }
  if (n >= 2 && !any_pair) {
    throw DegenerateEstimateError("mle_phi_given_consensus: no two parties share a round");
  }

  Eigen::MatrixXd sym = symmetrize(model.raw);
  const SpdFactor factor = factor_spd(sym, "mle_phi_given_consensus");
  sym.diagonal().array() += factor.jitter;
  model.jitter = factor.jitter;
  model.phi = std::move(sym);
  return model;
}

void OverlapSpec::validate() const {
  const auto n = static_cast<Eigen::Index>(sample_sizes.size());
  if (n == 0) throw InvalidSpecError("overlap spec: no parties");
  if (overlaps.rows() != n || overlaps.cols() != n) {
    throw InvalidSpecError("overlap spec: overlap matrix must be " + std::to_string(n) + "x" +
                           std::to_string(n));
  }
  if (!(sigma_sq > 0.0)) throw InvalidSpecError("overlap spec: sigma^2 must be > 0");
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto size_a = static_cast<double>(sample_sizes[static_cast<std::size_t>(a)]);
    if (size_a < 1.0) {
      throw InvalidSpecError("overlap spec: party " + std::to_string(a) + " has zero sample size");
    }
    if (overlaps(a, a) != size_a) {
      throw InvalidSpecError("overlap spec: overlap(" + std::to_string(a) + "," +
                             std::to_string(a) + ") must equal the sample size");
    }
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto size_b = static_cast<double>(sample_sizes[static_cast<std::size_t>(b)]);
      if (overlaps(a, b) != overlaps(b, a)) {
        throw InvalidSpecError("overlap spec: overlap matrix is not symmetric");
      }
      if (overlaps(a, b) < 0.0 || overlaps(a, b) > std::min(size_a, size_b)) {
        throw InvalidSpecError("overlap spec: overlap(" + std::to_string(a) + "," +
                               std::to_string(b) + ") exceeds the smaller sample");
      }
    }
  }
}

CovarianceModel overlap_phi(const OverlapSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.sample_sizes.size());
  CovarianceModel model;
  model.mode = CovarianceMode::Full;
  model.phi.resize(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    model.parties.push_back(PartyId{static_cast<std::uint32_t>(a)});
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto size_a = static_cast<double>(spec.sample_sizes[static_cast<std::size_t>(a)]);
      const auto size_b = static_cast<double>(spec.sample_sizes[static_cast<std::size_t>(b)]);
      model.phi(a, b) = spec.overlaps(a, b) * spec.sigma_sq / (size_a * size_b);
    }
  }
  model.raw = model.phi;
  return model;
}

LatentObjective latent_round_objective(const Eigen::MatrixXd& residuals, const Eigen::MatrixXd& v,
                                       double sigma_u_sq, double sigma_sq) {
  const auto j = residuals.cols();
  if (v.rows() != j) throw ShapeError("latent_round_objective: V rows must match parties");
  Eigen::MatrixXd phi = sigma_u_sq * v * v.transpose();
  phi.diagonal().array() += sigma_sq;
  const SpdFactor factor = factor_spd(phi, "latent covariance");
  const Eigen::MatrixXd phi_inv = factor.inverse();
  const Eigen::MatrixXd scatter = residuals.transpose() * residuals;
  const auto k = static_cast<double>(residuals.rows());

  LatentObjective out;
  out.value = -k * factor.log_det() - (phi_inv * scatter).trace();
  const Eigen::MatrixXd g = phi_inv * scatter * phi_inv - k * phi_inv;
  out.grad_v = 2.0 * sigma_u_sq * g * v;
  out.grad_sigma_sq = g.trace();
  out.grad_sigma_u_sq = (g * v * v.transpose()).trace();
  return out;
}

IcovMleFit icov_mle_fit(std::span<const UpdateMatrix> rounds, IcovMleState& state,
                        const IcovMleOptions& options) {
  if (rounds.empty()) throw InvalidInputError("icov_mle_fit: empty round set");
  if (options.latent_dim < 1) throw InvalidInputError("icov_mle_fit: latent dimension must be >= 1");
  if (!(options.lr > 0.0)) throw InvalidInputError("icov_mle_fit: lr must be > 0");
  if (options.epochs < 1) throw InvalidInputError("icov_mle_fit: epochs must be >= 1");
  if (!(options.floor > 0.0)) throw InvalidInputError("icov_mle_fit: floor must be > 0");
  if (!(state.sigma_sq > 0.0) || !(state.sigma_u_sq > 0.0)) {
    throw InvalidInputError("icov_mle_fit: variances must be > 0");
  }

  const auto index = index_parties(rounds);
  const auto d = static_cast<Eigen::Index>(options.latent_dim);
  Eigen::MatrixXd v(static_cast<Eigen::Index>(index.size()), d);
  for (const auto& [id, row] : index) {
    auto it = state.v.find(id);
    if (it == state.v.end()) {
      Rng rng = make_rng({state.seed, 0x7a7e17ULL, to_index(id)});
      std::normal_distribution<double> normal(0.0, 0.1);
      for (Eigen::Index c = 0; c < d; ++c) v(row, c) = normal(rng);
    } else {
      if (it->second.size() != d) throw InvalidInputError("icov_mle_fit: latent dimension changed");
      v.row(row) = it->second.transpose();
    }
  }
  double log_s = std::log(state.sigma_sq);
  double log_su = std::log(state.sigma_u_sq);
  const double log_floor = std::log(options.floor);

  std::vector<std::vector<Eigen::Index>> rows(rounds.size());
  for (std::size_t i = 0; i < rounds.size(); ++i) rows[i] = rows_of(rounds[i], index);

  auto phi_for = [&](std::size_t i) {
    const Eigen::MatrixXd vs = v(rows[i], Eigen::all);
    Eigen::MatrixXd phi = std::exp(log_su) * vs * vs.transpose();
    phi.diagonal().array() += std::exp(log_s);
    return phi;
  };
  std::vector<AggregateResult> results(rounds.size());
  auto update_consensus = [&] {
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      results[i] = mle_consensus_given_phi(rounds[i], phi_for(i));
    }
  };
  auto total_objective = [&] {
    double total = 0.0;
    for (std::size_t i = 0; i < rounds.size(); ++i) {
      total += latent_round_objective(residual_matrix(rounds[i], results[i].consensus),
                                      v(rows[i], Eigen::all), std::exp(log_su), std::exp(log_s))
                   .value;
    }
    return total;
  };

  Rng rng = make_rng({state.seed, 0x5ca1ab1eULL, rounds.front().round_id()});
  std::vector<std::size_t> order(rounds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> trace;

  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    update_consensus();
    const double before = total_objective();
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const double su = std::exp(log_su);
      const double s = std::exp(log_s);
      const LatentObjective obj = latent_round_objective(
          residual_matrix(rounds[i], results[i].consensus), v(rows[i], Eigen::all), su, s);
      v(rows[i], Eigen::all) += options.lr * obj.grad_v;
      log_s = std::max(log_floor, log_s + options.lr * s * obj.grad_sigma_sq);
      log_su = std::max(log_floor, log_su + options.lr * su * obj.grad_sigma_u_sq);
    }
    if (!v.allFinite() || !std::isfinite(log_s) || !std::isfinite(log_su)) {
      throw StepSizeError("icov_mle_fit: parameters diverged in epoch " + std::to_string(epoch) +
                          "; use a smaller lr");
    }
    const double after = total_objective();
    if (after < before - options.divergence_tol * (1.0 + std::abs(before))) {
      throw StepSizeError("icov_mle_fit: objective fell from " + std::to_string(before) + " to " +
                          std::to_string(after) + " in epoch " + std::to_string(epoch) +
                          "; use a smaller lr");
    }
    trace.push_back(after);
  }
  update_consensus();

  state.sigma_sq = std::exp(log_s);
  state.sigma_u_sq = std::exp(log_su);
  for (const auto& [id, row] : index) state.v[id] = v.row(row).transpose();

  IcovMleFit fit;
  fit.model.mode = CovarianceMode::Latent;
  for (const auto& [id, row] : index) fit.model.parties.push_back(id);
  fit.model.phi = state.sigma_u_sq * v * v.transpose();
  fit.model.phi.diagonal().array() += state.sigma_sq;
  fit.model.raw = fit.model.phi;
  fit.model.latent = LatentParams{v, state.sigma_u_sq, state.sigma_sq};
  for (auto& r : results) {
    r.iterations = options.epochs;
    r.objective_trace = trace;
  }
  fit.results = std::move(results);
  return fit;
}

}  // namespace fedagg
