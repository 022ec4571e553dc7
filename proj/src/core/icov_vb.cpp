#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fedagg/errors.hpp"
#include "fedagg/icov.hpp"
#include "fedagg/linalg.hpp"
#include "fedagg/rng.hpp"

namespace fedagg {
namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2 pi)

struct RoundView {
  const UpdateMatrix* x;
  std::vector<LatentParty*> parties;  // aligned with x->party_ids()
  LatentRound* latent;
};

Eigen::MatrixXd v_means(const RoundView& r, Eigen::Index d) {
  Eigen::MatrixXd v(static_cast<Eigen::Index>(r.parties.size()), d);
  for (std::size_t j = 0; j < r.parties.size(); ++j) {
    v.row(static_cast<Eigen::Index>(j)) = r.parties[j]->v_mean.transpose();
  }
  return v;
}

Eigen::VectorXd precisions(const RoundView& r) {
  Eigen::VectorXd p(static_cast<Eigen::Index>(r.parties.size()));
  for (std::size_t j = 0; j < r.parties.size(); ++j) {
    p[static_cast<Eigen::Index>(j)] = 1.0 / r.parties[j]->sigma_sq;
  }
  return p;
}

// sum_k E[(x_ijk - y_ik - u_ik^T v_j)^2] under the current factors.
double expected_sq_error(const UpdateMatrix& x, std::size_t j, const LatentRound& lr,
                         const LatentParty& party) {
  const auto k = static_cast<double>(x.dim());
  const Eigen::VectorXd resid = x.column(static_cast<Eigen::Index>(j)) - lr.y_mean;
  const Eigen::MatrixXd u_second = k * lr.u_cov + lr.u_mean * lr.u_mean.transpose();
  const Eigen::MatrixXd v_second = party.v_cov + party.v_mean * party.v_mean.transpose();
  return k * lr.y_var + resid.squaredNorm() -
         2.0 * resid.dot(lr.u_mean.transpose() * party.v_mean) + (u_second * v_second).trace();
}

double log_det_spd(const Eigen::MatrixXd& m) {
  return factor_spd(m, "posterior covariance").log_det();
}

}  // namespace

double icov_vb_free_energy(std::span<const UpdateMatrix> rounds, const IcovVbState& state) {
  if (state.rounds.size() != rounds.size()) {
    throw ShapeError("icov_vb_free_energy: state does not match the round set");
  }
  const auto d = static_cast<double>(state.latent_dim);
  double f = 0.0;
  std::map<PartyId, bool> seen;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& x = rounds[i];
    const LatentRound& lr = state.rounds[i];
    const auto k = static_cast<double>(x.dim());
    for (std::size_t j = 0; j < x.party_ids().size(); ++j) {
      const PartyId id = x.party_ids()[j];
      const LatentParty& party = state.parties.at(id);
      seen[id] = true;
      f += -0.5 * k * (kLogTwoPi + std::log(party.sigma_sq)) -
           expected_sq_error(x, j, lr, party) / (2.0 * party.sigma_sq);
    }
    // y prior and entropy
    f += -0.5 * k * (kLogTwoPi + std::log(state.sigma_y_sq)) -
         (lr.y_mean.squaredNorm() + k * lr.y_var) / (2.0 * state.sigma_y_sq);
    f += 0.5 * k * (kLogTwoPi + 1.0 + std::log(lr.y_var));
    // u prior and entropy, K task vectors sharing one covariance
    const double u_second = k * lr.u_cov.trace() + lr.u_mean.squaredNorm();
    f += -0.5 * k * d * (kLogTwoPi + std::log(state.sigma_u_sq)) - u_second / (2.0 * state.sigma_u_sq);
    f += 0.5 * k * (d * (kLogTwoPi + 1.0) + log_det_spd(lr.u_cov));
  }
  for (const auto& [id, unused] : seen) {
    const LatentParty& p = state.parties.at(id);
    const double v_second = p.v_cov.trace() + p.v_mean.squaredNorm();
    f += -0.5 * d * (kLogTwoPi + std::log(state.sigma_v_sq)) - v_second / (2.0 * state.sigma_v_sq);
    f += 0.5 * (d * (kLogTwoPi + 1.0) + log_det_spd(p.v_cov));
  }
  return f;
}

std::vector<AggregateResult> icov_vb_aggregate(std::span<const UpdateMatrix> rounds,
                                               IcovVbState& state, const IcovVbOptions& options) {
  if (rounds.empty()) throw InvalidInputError("icov_vb_aggregate: empty round set");
  if (state.latent_dim < 1) throw InvalidInputError("icov_vb_aggregate: latent dimension must be >= 1");
  if (options.max_iter < 1) throw InvalidInputError("icov_vb_aggregate: max_iter must be >= 1");
  if (!(options.tol > 0.0) || !(options.floor > 0.0)) {
    throw InvalidInputError("icov_vb_aggregate: tol and floor must be > 0");
  }
  if (!(state.sigma_y_sq > 0.0) || !(state.sigma_u_sq > 0.0) || !(state.sigma_v_sq > 0.0)) {
    throw InvalidInputError("icov_vb_aggregate: hyperparameters must be > 0");
  }
  const auto d = static_cast<Eigen::Index>(state.latent_dim);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::Index k_dim = rounds.front().dim();

  // Shared-noise mode starts unseen parties at the common value.
  double shared_start = 1.0;
  if (options.shared_noise && !state.parties.empty()) {
    shared_start = state.parties.begin()->second.sigma_sq;
  }
  for (const auto& x : rounds) {
    if (x.dim() != k_dim) throw ShapeError("icov_vb_aggregate: rounds disagree on dimension K");
    for (PartyId id : x.party_ids()) {
      auto [it, inserted] = state.parties.try_emplace(id);
      LatentParty& p = it->second;
      if (inserted) {
        Rng rng = make_rng({state.seed, 0x1a7e47ULL, to_index(id)});
        std::normal_distribution<double> normal(0.0, 0.1);
        p.v_mean.resize(d);
        for (Eigen::Index c = 0; c < d; ++c) p.v_mean[c] = normal(rng);
        p.v_cov = 0.1 * eye;
        p.sigma_sq = shared_start;
      } else if (p.v_mean.size() != d || p.v_cov.rows() != d) {
        throw ShapeError("icov_vb_aggregate: party " + to_string(id) +
                         " has a latent vector of the wrong dimension");
      }
    }
  }

  // Warm-start round factors by round id; new rounds start at u = 0, cov 0.1 I.
  std::vector<LatentRound> latent(rounds.size());
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    auto it = std::find_if(state.rounds.begin(), state.rounds.end(), [&](const LatentRound& r) {
      return r.round_id == rounds[i].round_id();
    });
    if (it != state.rounds.end() && it->u_mean.rows() == d && it->u_mean.cols() == k_dim) {
      latent[i] = *it;
    } else {
      latent[i].round_id = rounds[i].round_id();
      latent[i].u_mean = Eigen::MatrixXd::Zero(d, k_dim);
      latent[i].u_cov = 0.1 * eye;
      latent[i].y_mean = Eigen::VectorXd::Zero(k_dim);
      latent[i].y_var = 0.0;
    }
  }
  state.rounds = std::move(latent);

  std::vector<RoundView> views(rounds.size());
  std::map<PartyId, std::vector<std::pair<std::size_t, std::size_t>>> membership;
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    views[i].x = &rounds[i];
    views[i].latent = &state.rounds[i];
    for (std::size_t j = 0; j < rounds[i].party_ids().size(); ++j) {
      const PartyId id = rounds[i].party_ids()[j];
      views[i].parties.push_back(&state.parties.at(id));
      membership[id].emplace_back(i, j);
    }
  }
  const double total_k = static_cast<double>(k_dim) * static_cast<double>(rounds.size());
  const auto k = static_cast<double>(k_dim);

  auto update_y = [&](std::size_t t) {
    for (auto& r : views) {
      const Eigen::VectorXd p = precisions(r);
      LatentRound& lr = *r.latent;
      lr.y_var = 1.0 / (1.0 / state.sigma_y_sq + p.sum());
      const Eigen::MatrixXd offsets = lr.u_mean.transpose() * v_means(r, d).transpose();
      lr.y_mean = lr.y_var * ((r.x->values() - offsets) * p);
      if (!lr.y_mean.allFinite()) throw NumericalError("icov_vb_aggregate: non-finite y", t);
    }
  };
  auto update_u = [&] {
    for (auto& r : views) {
      const Eigen::VectorXd p = precisions(r);
      const Eigen::MatrixXd v = v_means(r, d);
      Eigen::MatrixXd a = eye / state.sigma_u_sq;
      for (std::size_t j = 0; j < r.parties.size(); ++j) {
        const LatentParty& party = *r.parties[j];
        a += p[static_cast<Eigen::Index>(j)] *
             (party.v_cov + party.v_mean * party.v_mean.transpose());
      }
      LatentRound& lr = *r.latent;
      lr.u_cov = factor_spd(symmetrize(a), "u precision").inverse();
      const Eigen::MatrixXd resid = r.x->values().colwise() - lr.y_mean;
      lr.u_mean = lr.u_cov * v.transpose() * p.asDiagonal() * resid.transpose();
    }
  };
  auto update_v = [&] {
    for (const auto& [id, rows] : membership) {
      LatentParty& party = state.parties.at(id);
      const double p = 1.0 / party.sigma_sq;
      Eigen::MatrixXd b = eye / state.sigma_v_sq;
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
      for (const auto& [i, j] : rows) {
        const LatentRound& lr = state.rounds[i];
        b += p * (k * lr.u_cov + lr.u_mean * lr.u_mean.transpose());
        rhs += p * lr.u_mean * (rounds[i].column(static_cast<Eigen::Index>(j)) - lr.y_mean);
      }
      party.v_cov = factor_spd(symmetrize(b), "v precision").inverse();
      party.v_mean = party.v_cov * rhs;
    }
  };
  auto update_hyper = [&] {
    if (!options.pin_sigma_y) {
      double acc = 0.0;
      for (const auto& lr : state.rounds) acc += lr.y_mean.squaredNorm() + k * lr.y_var;
      state.sigma_y_sq = std::max(options.floor, acc / total_k);
    }
    if (!options.pin_sigma_u) {
      double acc = 0.0;
      for (const auto& lr : state.rounds) acc += k * lr.u_cov.trace() + lr.u_mean.squaredNorm();
      state.sigma_u_sq = std::max(options.floor, acc / (static_cast<double>(d) * total_k));
    }
    if (!options.pin_sigma_v) {
      double acc = 0.0;
      for (const auto& [id, rows] : membership) {
        const LatentParty& p = state.parties.at(id);
        acc += p.v_cov.trace() + p.v_mean.squaredNorm();
      }
      state.sigma_v_sq = std::max(
          options.floor, acc / (static_cast<double>(d) * static_cast<double>(membership.size())));
    }
    if (!options.pin_noise) {
      std::map<PartyId, double> err;
      for (const auto& [id, rows] : membership) {
        double acc = 0.0;
        for (const auto& [i, j] : rows) {
          acc += expected_sq_error(rounds[i], j, state.rounds[i], state.parties.at(id));
        }
        err[id] = acc;
      }
      if (options.shared_noise) {
        double acc = 0.0;
        double count = 0.0;
        for (const auto& [id, rows] : membership) {
          acc += err[id];
          count += k * static_cast<double>(rows.size());
        }
        const double s = std::max(options.floor, acc / count);
        for (const auto& [id, rows] : membership) state.parties.at(id).sigma_sq = s;
      } else {
        for (const auto& [id, rows] : membership) {
          state.parties.at(id).sigma_sq =
              std::max(options.floor, err[id] / (k * static_cast<double>(rows.size())));
        }
      }
    }
  };

  std::vector<double> trace;
  std::size_t iterations = 0;
  for (std::size_t t = 1; t <= options.max_iter; ++t) {
    update_y(t);
    update_u();
    update_v();
    update_hyper();
    const double f = icov_vb_free_energy(rounds, state);
    if (!std::isfinite(f)) throw NumericalError("icov_vb_aggregate: non-finite free energy", t);
    iterations = t;
    const bool converged =
        !trace.empty() && std::abs(f - trace.back()) < options.tol * (1.0 + std::abs(f));
    trace.push_back(f);
    if (converged) break;
  }
  // Leave q(y) consistent with the final hyperparameters.
  update_y(iterations);
  trace.push_back(icov_vb_free_energy(rounds, state));

  std::vector<AggregateResult> out(rounds.size());
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    const auto& r = views[i];
    const Eigen::VectorXd p = precisions(r);
    if (options.consensus == ConsensusSource::Marginal) {
      const Eigen::MatrixXd v = v_means(r, d);
      Eigen::MatrixXd sigma = state.sigma_u_sq * v * v.transpose();
      sigma.diagonal() += p.cwiseInverse();
      out[i] = mle_consensus_given_phi(rounds[i], sigma);
    } else {
      out[i].consensus = r.latent->y_mean;
      out[i].weights = p / p.sum();
    }
    out[i].posterior_variance = r.latent->y_var;
    out[i].iterations = iterations;
    out[i].objective_trace = trace;
  }
  return out;
}

}  // namespace fedagg
