#include "fedagg/ivar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "fedagg/baselines.hpp"
#include "fedagg/errors.hpp"

namespace fedagg {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_rounds(std::span<const UpdateMatrix> rounds, const char* who) {
  if (rounds.empty()) throw InvalidInputError(std::string(who) + ": empty round set");
  const auto k = rounds.front().dim();
  for (const auto& r : rounds) {
    if (r.dim() != k) throw ShapeError(std::string(who) + ": rounds disagree on dimension K");
  }
}

void ensure_entries(std::span<const UpdateMatrix> rounds, VarianceTable& table) {
  for (const auto& r : rounds) {
    for (PartyId id : r.party_ids()) table.try_emplace(id);
  }
}

Eigen::VectorXd inverse_variance_weights(const UpdateMatrix& x, const VarianceTable& table) {
  Eigen::VectorXd w(x.num_parties());
  for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
    w[j] = 1.0 / table.at(x.party_ids()[j]).sigma_sq;
  }
  return w;
}

// Per-party pooled mean squared residual, normalized by K times the number of
// rounds joined; `extra` adds a per-round variance term to every coordinate.
std::map<PartyId, double> pooled_residuals(std::span<const UpdateMatrix> rounds,
                                           std::span<const Eigen::VectorXd> centers,
                                           std::span<const double> extra) {
  std::map<PartyId, std::pair<double, double>> acc;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    const auto k = static_cast<double>(x.dim());
    for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
      auto& slot = acc[x.party_ids()[j]];
      slot.first += (x.column(j) - centers[i]).squaredNorm() + k * extra[i];
      slot.second += k;
    }
  }
  std::map<PartyId, double> out;
  for (const auto& [id, sums] : acc) out[id] = sums.first / sums.second;
  return out;
}

void record_history(std::span<const UpdateMatrix> rounds, std::span<const Eigen::VectorXd> centers,
                    VarianceTable& table, std::size_t window) {
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
      auto& hist = table.at(x.party_ids()[j]).history;
      ResidualRecord rec{x.round_id(), (x.column(j) - centers[i]).squaredNorm(),
                         static_cast<std::size_t>(x.dim())};
      auto it = std::find_if(hist.begin(), hist.end(),
                             [&](const ResidualRecord& r) { return r.round_id == rec.round_id; });
      if (it != hist.end()) {
        *it = rec;
      } else {
        hist.push_back(rec);
      }
      if (hist.size() > window) hist.erase(hist.begin(), hist.end() - static_cast<long>(window));
    }
  }
}

}  // namespace

double ivar_log_likelihood(std::span<const UpdateMatrix> rounds,
                           std::span<const Eigen::VectorXd> consensus, const VarianceTable& state) {
  double total = 0.0;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    const auto k = static_cast<double>(x.dim());
    for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
      const double s = state.at(x.party_ids()[j]).sigma_sq;
      total += -std::log(s) - (x.column(j) - consensus[i]).squaredNorm() / (k * s);
    }
  }
  return total;
}

std::vector<AggregateResult> ivar_mle_aggregate(std::span<const UpdateMatrix> rounds,
                                                VarianceTable& state,
                                                const IvarMleOptions& options) {
  require_rounds(rounds, "ivar_mle_aggregate");
  if (options.max_iter < 1) throw InvalidInputError("ivar_mle_aggregate: max_iter must be >= 1");
  if (!(options.tol > 0.0) || !(options.floor > 0.0)) {
    throw InvalidInputError("ivar_mle_aggregate: tol and floor must be > 0");
  }
  ensure_entries(rounds, state);

  const std::size_t n_rounds = rounds.size();
  std::vector<Eigen::VectorXd> consensus(n_rounds);
  std::vector<Eigen::VectorXd> weights(n_rounds);
  const std::vector<double> no_extra(n_rounds, 0.0);

  auto update_variances = [&] {
    for (const auto& [id, value] : pooled_residuals(rounds, consensus, no_extra)) {
      state.at(id).sigma_sq = std::max(options.floor, value);
    }
  };

  if (options.robust_start) {
    for (std::size_t i = 0; i < n_rounds; ++i) consensus[i] = coordinate_median(rounds[i]).consensus;
    update_variances();
  }

  std::vector<double> trace;
  std::size_t iterations = 0;
  for (std::size_t t = 1; t <= options.max_iter; ++t) {
    double max_move = 0.0;
    for (std::size_t i = 0; i < n_rounds; ++i) {
      const auto& x = rounds[i];
      const Eigen::VectorXd w = inverse_variance_weights(x, state);
      Eigen::VectorXd next = x.values() * w / w.sum();
      if (!next.allFinite()) throw NumericalError("ivar_mle_aggregate: non-finite consensus", t);
      if (consensus[i].size() == next.size()) {
        max_move = std::max(max_move, (next - consensus[i]).lpNorm<Eigen::Infinity>());
      } else {
        max_move = std::numeric_limits<double>::infinity();
      }
      consensus[i] = std::move(next);
      weights[i] = w / w.sum();
    }
    update_variances();
    trace.push_back(ivar_log_likelihood(rounds, consensus, state));
    iterations = t;
    if (max_move < options.tol) break;
  }
  record_history(rounds, consensus, state, options.window);

  std::vector<AggregateResult> out(n_rounds);
  for (std::size_t i = 0; i < n_rounds; ++i) {
    out[i].consensus = consensus[i];
    out[i].weights = weights[i];
    out[i].iterations = iterations;
    out[i].objective_trace = trace;
  }
  return out;
}

std::vector<double> ivar_weights(const VarianceTable& state, std::span<const PartyId> parties) {
  std::vector<double> w;
  w.reserve(parties.size());
  double total = 0.0;
  for (PartyId id : parties) {
    auto it = state.find(id);
    if (it == state.end()) throw LookupError("ivar_weights: unknown party " + to_string(id));
    w.push_back(1.0 / it->second.sigma_sq);
    total += w.back();
  }
  for (double& v : w) v /= total;
  return w;
}

double ivar_vb_free_energy(std::span<const UpdateMatrix> rounds, const IvarVbState& state) {
  double f = 0.0;
  const double tau = state.tau_sq;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    const auto& post = state.posteriors.at(i);
    const auto k = static_cast<double>(x.dim());
    const double lambda = post.variance;
    for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
      const double s = state.sigma.at(x.party_ids()[j]).sigma_sq;
      const double expected_sq = (x.column(j) - post.mean).squaredNorm() + k * lambda;
      f += -0.5 * k * std::log(kTwoPi * s) - expected_sq / (2.0 * s);
    }
    f += -0.5 * k * std::log(kTwoPi * tau) - (post.mean.squaredNorm() + k * lambda) / (2.0 * tau);
    f += 0.5 * k * std::log(kTwoPi * std::numbers::e * lambda);
  }
  return f;
}

std::vector<AggregateResult> ivar_vb_aggregate(std::span<const UpdateMatrix> rounds,
                                               IvarVbState& state, const IvarVbOptions& options) {
  require_rounds(rounds, "ivar_vb_aggregate");
  if (options.max_iter < 1) throw InvalidInputError("ivar_vb_aggregate: max_iter must be >= 1");
  if (!(state.tau_sq > 0.0)) throw InvalidInputError("ivar_vb_aggregate: tau^2 must be > 0");
  if (!(options.tol > 0.0) || !(options.floor > 0.0)) {
    throw InvalidInputError("ivar_vb_aggregate: tol and floor must be > 0");
  }
  ensure_entries(rounds, state.sigma);

  const std::size_t n_rounds = rounds.size();
  state.posteriors.assign(n_rounds, {});
  std::vector<AggregateResult> out(n_rounds);
  std::vector<Eigen::VectorXd> means(n_rounds);
  std::vector<double> lambdas(n_rounds);
  std::vector<double> trace;
  std::size_t iterations = 0;

  auto update_posteriors = [&](std::size_t t) {
    for (std::size_t i = 0; i < n_rounds; ++i) {
      const auto& x = rounds[i];
      const Eigen::VectorXd precision = inverse_variance_weights(x, state.sigma);
      lambdas[i] = 1.0 / (1.0 / state.tau_sq + precision.sum());
      means[i] = lambdas[i] * (x.values() * precision);
      if (!means[i].allFinite()) throw NumericalError("ivar_vb_aggregate: non-finite posterior", t);
      state.posteriors[i] = {x.round_id(), means[i], lambdas[i]};
      out[i].weights = precision / precision.sum();
    }
  };

  for (std::size_t t = 1; t <= options.max_iter; ++t) {
    update_posteriors(t);

    double change = 0.0;
    auto relative = [](double before, double after) { return std::abs(after - before) / before; };
    if (!options.freeze_tau) {
      double acc = 0.0;
      double count = 0.0;
      for (std::size_t i = 0; i < n_rounds; ++i) {
        const auto k = static_cast<double>(rounds[i].dim());
        acc += means[i].squaredNorm() + k * lambdas[i];
        count += k;
      }
      const double next = std::max(options.floor, acc / count);
      change = std::max(change, relative(state.tau_sq, next));
      state.tau_sq = next;
    }
    if (!options.freeze_sigma) {
      for (const auto& [id, value] : pooled_residuals(rounds, means, lambdas)) {
        auto& s = state.sigma.at(id).sigma_sq;
        const double next = std::max(options.floor, value);
        change = std::max(change, relative(s, next));
        s = next;
      }
    }
    trace.push_back(ivar_vb_free_energy(rounds, state));
    iterations = t;
    if (change < options.tol) break;
  }
  // Leave the posterior consistent with the final hyperparameters.
  update_posteriors(iterations);
  trace.push_back(ivar_vb_free_energy(rounds, state));
  record_history(rounds, means, state.sigma, options.window);

  for (std::size_t i = 0; i < n_rounds; ++i) {
    out[i].consensus = means[i];
    out[i].iterations = iterations;
    out[i].objective_trace = trace;
    out[i].posterior_variance = lambdas[i];
  }
  return out;
}

}  // namespace fedagg
