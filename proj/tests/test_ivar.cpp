#include <doctest.h>

#include <cmath>

#include "fedagg/errors.hpp"
#include "fedagg/ivar.hpp"
#include "fedagg/rng.hpp"

using namespace fedagg;

namespace {

std::vector<PartyId> ids(std::size_t n) {
  std::vector<PartyId> out;
  for (std::size_t j = 0; j < n; ++j) out.push_back(PartyId{static_cast<std::uint32_t>(j)});
  return out;
}

// Rounds with a N(0, 1) truth per round and party noise N(0, sigma_j^2).
std::vector<UpdateMatrix> planted(const std::vector<double>& sigma_sq, std::size_t rounds,
                                  Eigen::Index k, std::uint64_t seed) {
  auto rng = make_rng({seed, 99});
  std::normal_distribution<double> n;
  std::vector<UpdateMatrix> out;
  for (std::size_t i = 0; i < rounds; ++i) {
    Eigen::VectorXd truth(k);
    for (auto& t : truth) t = n(rng);
    Eigen::MatrixXd x(k, static_cast<Eigen::Index>(sigma_sq.size()));
    for (std::size_t j = 0; j < sigma_sq.size(); ++j) {
      for (Eigen::Index r = 0; r < k; ++r) {
        x(r, static_cast<Eigen::Index>(j)) = truth[r] + std::sqrt(sigma_sq[j]) * n(rng);
      }
    }
    out.emplace_back(i, ids(sigma_sq.size()), x);
  }
  return out;
}

// Plain transcription of the fixed-point iteration on raw arrays, kept apart
// from the library code on purpose.
std::vector<double> scripted_ivar(const std::vector<std::vector<double>>& cols, int iters,
                                  double eps) {
  const std::size_t j_count = cols.size();
  const std::size_t k = cols[0].size();
  std::vector<double> s(j_count, 1.0);
  std::vector<double> y(k, 0.0);
  for (int t = 0; t < iters; ++t) {
    double wsum = 0;
    for (double v : s) wsum += 1.0 / v;
    for (std::size_t r = 0; r < k; ++r) {
      double acc = 0;
      for (std::size_t j = 0; j < j_count; ++j) acc += cols[j][r] / s[j];
      y[r] = acc / wsum;
    }
    for (std::size_t j = 0; j < j_count; ++j) {
      double ss = 0;
      for (std::size_t r = 0; r < k; ++r) ss += (y[r] - cols[j][r]) * (y[r] - cols[j][r]);
      s[j] = std::max(eps, ss / static_cast<double>(k));
    }
  }
  return y;
}

}  // namespace

TEST_CASE("ivar mle fixed points") {
  SUBCASE("two symmetric columns give the mean") {
    VarianceTable state;
    const std::vector<UpdateMatrix> r{UpdateMatrix::from_columns({{0}, {2}})};
    CHECK(ivar_mle_aggregate(r, state)[0].consensus[0] == doctest::Approx(1.0));
    CHECK(state.at(PartyId{0}).sigma_sq == doctest::Approx(state.at(PartyId{1}).sigma_sq));
  }

  SUBCASE("equidistant columns give the arithmetic mean") {
    const double h = std::sqrt(3.0) / 2.0;
    const std::vector<UpdateMatrix> r{
        UpdateMatrix::from_columns({{1.0 + 4, 0.0 - 1}, {-0.5 + 4, h - 1}, {-0.5 + 4, -h - 1}})};
    VarianceTable state;
    const auto out = ivar_mle_aggregate(r, state);
    CHECK((out[0].consensus - Eigen::Vector2d(4, -1)).norm() < 1e-12);
  }

  SUBCASE("scripted oracle: two agreeing parties absorb the outlier") {
    const std::vector<std::vector<double>> cols{{0, 0}, {0, 0}, {6, 8}};
    const auto oracle = scripted_ivar(cols, 50, 1e-8);
    CHECK(std::hypot(oracle[0], oracle[1]) < 0.05);

    VarianceTable state;
    IvarMleOptions opts;
    opts.max_iter = 50;
    const std::vector<UpdateMatrix> r{UpdateMatrix::from_columns(cols)};
    const auto out = ivar_mle_aggregate(r, state, opts);
    CHECK(out[0].consensus.norm() < 0.05);
    CHECK(std::abs(out[0].consensus[0] - oracle[0]) < 1e-9);
    CHECK(std::abs(out[0].consensus[1] - oracle[1]) < 1e-9);
    CHECK(state.at(PartyId{0}).sigma_sq >= 1e-8);
  }

  SUBCASE("one iteration from fresh state is the plain mean") {
    VarianceTable state;
    IvarMleOptions opts;
    opts.max_iter = 1;
    const std::vector<UpdateMatrix> r{UpdateMatrix::from_columns({{0}, {0}, {9}})};
    const auto out = ivar_mle_aggregate(r, state, opts);
    CHECK(out[0].consensus[0] == doctest::Approx(3.0));
    CHECK(out[0].iterations == 1);
  }

  SUBCASE("equal planted variances reduce to the mean") {
    VarianceTable state;
    for (std::uint32_t j = 0; j < 4; ++j) state[PartyId{j}].sigma_sq = 0.7;
    IvarMleOptions opts;
    opts.max_iter = 1;
    const auto rounds = planted({1, 1, 1, 1}, 1, 6, 3);
    const auto out = ivar_mle_aggregate(rounds, state, opts);
    const Eigen::VectorXd mean = rounds[0].values().rowwise().mean();
    CHECK((out[0].consensus - mean).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("ivar mle state and errors") {
  VarianceTable state;
  CHECK_THROWS_AS(ivar_mle_aggregate({}, state), InvalidInputError);
  const std::vector<UpdateMatrix> mixed{UpdateMatrix::from_columns({{1}}),
                                        UpdateMatrix::from_columns({{1, 2}})};
  CHECK_THROWS_AS(ivar_mle_aggregate(mixed, state), ShapeError);

  const std::vector<PartyId> two{PartyId{0}, PartyId{1}};
  state[PartyId{0}].sigma_sq = 1;
  state[PartyId{1}].sigma_sq = 1;
  auto w = ivar_weights(state, two);
  CHECK(w[0] == doctest::Approx(0.5));
  state[PartyId{1}].sigma_sq = 3;
  w = ivar_weights(state, two);
  CHECK(w[0] == doctest::Approx(0.75));
  CHECK(w[1] == doctest::Approx(0.25));
  state[PartyId{0}].sigma_sq = 1e-8;
  state[PartyId{1}].sigma_sq = 1e4;
  CHECK(ivar_weights(state, two)[0] >= 1 - 1e-6);
  const std::vector<PartyId> unknown{PartyId{5}};
  CHECK_THROWS_AS(ivar_weights(state, unknown), LookupError);

  SUBCASE("history is bounded by the window") {
    VarianceTable s;
    IvarMleOptions opts;
    opts.window = 3;
    const auto rounds = planted({1, 2}, 6, 4, 8);
    ivar_mle_aggregate(rounds, s, opts);
    CHECK(s.at(PartyId{0}).history.size() == 3);
    CHECK(s.at(PartyId{0}).history.back().round_id == 5);
  }
}

TEST_CASE("ivar mle likelihood ascent") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    VarianceTable state;
    const auto rounds = planted({0.2, 0.5, 1.0, 3.0}, 5, 8, seed);
    const auto out = ivar_mle_aggregate(rounds, state);
    bool floor_hit = false;
    for (const auto& [id, pv] : state) floor_hit = floor_hit || pv.sigma_sq <= 1e-8;
    if (floor_hit) continue;
    const auto& trace = out[0].objective_trace;
    for (std::size_t t = 1; t < trace.size(); ++t) {
      CHECK(trace[t] >= trace[t - 1] - 1e-9 * (1.0 + std::abs(trace[t - 1])));
    }
  }
}

TEST_CASE("ivar vb closed forms") {
  SUBCASE("two unit-variance parties") {
    IvarVbState state;
    state.sigma[PartyId{0}].sigma_sq = 1;
    state.sigma[PartyId{1}].sigma_sq = 1;
    IvarVbOptions opts;
    opts.freeze_tau = true;
    opts.freeze_sigma = true;
    const double a = 2.0, b = -5.0;
    const std::vector<UpdateMatrix> r{UpdateMatrix::from_columns({{a}, {b}})};
    const auto out = ivar_vb_aggregate(r, state, opts);
    CHECK(*out[0].posterior_variance == doctest::Approx(1.0 / 3.0));
    CHECK(out[0].consensus[0] == doctest::Approx((a + b) / 3.0));
  }

  SUBCASE("a flat prior recovers inverse-variance weighting") {
    IvarVbState state;
    state.tau_sq = 1e12;
    const std::vector<double> s{0.5, 2.0, 4.0};
    for (std::uint32_t j = 0; j < 3; ++j) state.sigma[PartyId{j}].sigma_sq = s[j];
    IvarVbOptions opts;
    opts.freeze_tau = true;
    opts.freeze_sigma = true;
    const auto rounds = planted({1, 1, 1}, 1, 5, 4);
    const auto out = ivar_vb_aggregate(rounds, state, opts);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(5);
    double wsum = 0;
    for (Eigen::Index j = 0; j < 3; ++j) {
      expect += rounds[0].column(j) / s[static_cast<std::size_t>(j)];
      wsum += 1 / s[static_cast<std::size_t>(j)];
    }
    expect /= wsum;
    for (Eigen::Index r = 0; r < 5; ++r) {
      CHECK(std::abs(out[0].consensus[r] - expect[r]) <= 1e-6 * std::abs(expect[r]) + 1e-12);
    }
  }

  SUBCASE("planted variance ordering is recovered") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      IvarVbState state;
      const auto rounds = planted({0.1, 0.1, 10.0}, 5, 10, seed);
      ivar_vb_aggregate(rounds, state);
      CHECK(state.sigma.at(PartyId{2}).sigma_sq > state.sigma.at(PartyId{0}).sigma_sq);
      CHECK(state.sigma.at(PartyId{2}).sigma_sq > state.sigma.at(PartyId{1}).sigma_sq);
    }
  }
}

TEST_CASE("ivar vb invariants") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    IvarVbState state;
    const auto rounds = planted({0.3, 1.0, 2.0, 5.0}, 4, 6, seed + 100);
    IvarVbOptions opts;
    opts.max_iter = 50;
    opts.tol = 1e-14;
    const auto out = ivar_vb_aggregate(rounds, state, opts);
    const auto& f = out[0].objective_trace;
    for (std::size_t t = 1; t < f.size(); ++t) CHECK(f[t] >= f[t - 1] - 1e-9);

    for (std::size_t i = 0; i < rounds.size(); ++i) {
      const double lambda = state.posteriors[i].variance;
      double precision = 1.0 / state.tau_sq;
      double smallest = std::numeric_limits<double>::infinity();
      for (PartyId id : rounds[i].party_ids()) {
        precision += 1.0 / state.sigma.at(id).sigma_sq;
        smallest = std::min(smallest, state.sigma.at(id).sigma_sq);
      }
      CHECK(lambda == doctest::Approx(1.0 / precision).epsilon(1e-12));
      CHECK(lambda > 0.0);
      CHECK(lambda <= state.tau_sq);
      CHECK(lambda <= smallest);
    }
  }
}
