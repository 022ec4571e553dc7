#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "fedagg/aggregator.hpp"
#include "fedagg/errors.hpp"
#include "fedagg/linalg.hpp"
#include "fedagg/rng.hpp"

using namespace fedagg;

namespace {

UpdateMatrix random_matrix(Eigen::Index k, Eigen::Index j, std::uint64_t seed,
                           std::size_t round = 0) {
  auto rng = make_rng({seed});
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(k, j);
  for (Eigen::Index c = 0; c < j; ++c)
    for (Eigen::Index r = 0; r < k; ++r) m(r, c) = n(rng) * (1.0 + c);
  std::vector<PartyId> ids;
  for (Eigen::Index c = 0; c < j; ++c) ids.push_back(PartyId{static_cast<std::uint32_t>(c)});
  return UpdateMatrix(round, ids, m);
}

// Same columns in a different order, each keeping its party id.
UpdateMatrix permuted(const UpdateMatrix& x, const std::vector<Eigen::Index>& perm) {
  Eigen::MatrixXd m(x.dim(), x.num_parties());
  std::vector<PartyId> ids;
  for (std::size_t c = 0; c < perm.size(); ++c) {
    m.col(static_cast<Eigen::Index>(c)) = x.column(perm[c]);
    ids.push_back(x.party_ids()[static_cast<std::size_t>(perm[c])]);
  }
  return UpdateMatrix(x.round_id(), ids, m);
}

UpdateMatrix shifted(const UpdateMatrix& x, const Eigen::VectorXd& c) {
  Eigen::MatrixXd m = x.values();
  m.colwise() += c;
  return UpdateMatrix(x.round_id(), x.party_ids(), m);
}

}  // namespace

TEST_CASE("update matrix rejects malformed input") {
  CHECK_THROWS_AS(UpdateMatrix(0, {}, Eigen::MatrixXd(1, 0)), ShapeError);
  CHECK_THROWS_AS(UpdateMatrix(0, {PartyId{0}}, Eigen::MatrixXd(0, 1)), ShapeError);
  CHECK_THROWS_AS(UpdateMatrix(0, {PartyId{0}}, Eigen::MatrixXd::Zero(2, 2)), ShapeError);
  CHECK_THROWS_AS(UpdateMatrix(0, {PartyId{3}, PartyId{3}}, Eigen::MatrixXd::Zero(1, 2)),
                  InvalidInputError);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(UpdateMatrix(0, {PartyId{0}, PartyId{1}}, bad), InvalidInputError);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(UpdateMatrix(0, {PartyId{0}, PartyId{1}}, bad), InvalidInputError);

  const auto x = UpdateMatrix::from_columns({{1, 2}, {3, 4}}, {PartyId{7}, PartyId{2}}, 5);
  CHECK(x.round_id() == 5);
  CHECK(x.dim() == 2);
  CHECK(x.column_of(PartyId{2}) == 1);
  CHECK_FALSE(x.column_of(PartyId{9}).has_value());
}

TEST_CASE("weighted average") {
  const auto x = UpdateMatrix::from_columns({{0}, {4}});
  const std::vector<double> w{1, 3};
  const auto r = weighted_average(x, w);
  CHECK(r.consensus[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK((*r.weights)[0] == doctest::Approx(0.25));
  CHECK((*r.weights)[1] == doctest::Approx(0.75));

  const auto single = UpdateMatrix::from_columns({{1.5, -2.0}});
  const std::vector<double> five{5};
  CHECK(weighted_average(single, five).consensus == single.column(0));

  const auto rnd = random_matrix(6, 5, 11);
  const std::vector<double> equal(5, 2.0);
  const Eigen::VectorXd mean = rnd.values().rowwise().mean();
  CHECK((weighted_average(rnd, equal).consensus - mean).cwiseAbs().maxCoeff() < 1e-12);

  // Sample-size weights reproduce the pooled mean of per-example values.
  const std::vector<double> sizes{10, 30, 60, 100, 300};
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(6);
  for (Eigen::Index j = 0; j < 5; ++j) pooled += sizes[static_cast<std::size_t>(j)] * rnd.column(j);
  pooled /= 500.0;
  CHECK((weighted_average(rnd, sizes).consensus - pooled).cwiseAbs().maxCoeff() < 1e-12);

  const std::vector<double> zeros{0, 0};
  CHECK_THROWS_AS(weighted_average(x, zeros), InvalidWeightsError);
  const std::vector<double> negative{-1, 2};
  CHECK_THROWS_AS(weighted_average(x, negative), InvalidWeightsError);
  const std::vector<double> short_w{1};
  CHECK_THROWS_AS(weighted_average(x, short_w), ShapeError);
}

TEST_CASE("coordinate median") {
  const auto odd = UpdateMatrix::from_columns({{1, 5}, {2, 6}, {9, 7}});
  const auto r = coordinate_median(odd);
  CHECK(r.consensus == Eigen::Vector2d(2, 6));
  CHECK_FALSE(r.weights.has_value());

  CHECK(coordinate_median(UpdateMatrix::from_columns({{0}, {4}})).consensus[0] == 2.0);
  const auto one = UpdateMatrix::from_columns({{3, -1, 2}});
  CHECK(coordinate_median(one).consensus == one.column(0));

  // Adding a copy of the column that already holds the median in every
  // coordinate keeps the median (odd count becomes even around the same value).
  const auto base = UpdateMatrix::from_columns({{0, 0}, {1, 1}, {5, 5}});
  const auto dup = UpdateMatrix::from_columns({{0, 0}, {1, 1}, {5, 5}, {1, 1}});
  CHECK(coordinate_median(base).consensus == coordinate_median(dup).consensus);
}

TEST_CASE("geometric median") {
  const auto line = UpdateMatrix::from_columns({{0}, {1}, {10}});
  CHECK(geometric_median(line).consensus[0] == doctest::Approx(1.0).epsilon(1e-6));

  const auto same = UpdateMatrix::from_columns({{2, -3}, {2, -3}, {2, -3}});
  const auto r = geometric_median(same);
  CHECK(r.consensus == Eigen::Vector2d(2, -3));
  CHECK(r.iterations <= 1);

  SUBCASE("square corners against a grid search") {
    const auto sq = UpdateMatrix::from_columns({{0, 0}, {2, 0}, {0, 2}, {2, 2}});
    // Oracle: the point of a fine grid over the square minimizing the sum of
    // Euclidean distances to the corners.
    double best = std::numeric_limits<double>::infinity();
    Eigen::Vector2d arg;
    for (int a = 0; a <= 400; ++a) {
      for (int b = 0; b <= 400; ++b) {
        const Eigen::Vector2d p(a * 0.005, b * 0.005);
        double s = 0;
        for (Eigen::Index j = 0; j < 4; ++j) s += (sq.column(j) - p).norm();
        if (s < best) {
          best = s;
          arg = p;
        }
      }
    }
    const auto g = geometric_median(sq);
    CHECK((g.consensus - arg).norm() < 1e-6);
    CHECK((g.consensus - Eigen::Vector2d(1, 1)).norm() < 1e-6);
  }

  SUBCASE("objective never increases") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto x = random_matrix(5, 7, seed);
      const auto g = geometric_median(x);
      REQUIRE(g.objective_trace.size() >= 2);
      for (std::size_t t = 1; t < g.objective_trace.size(); ++t) {
        CHECK(g.objective_trace[t] <= g.objective_trace[t - 1] * (1 + 1e-12));
      }
      CHECK(g.objective_trace.back() ==
            doctest::Approx(smoothed_distance_sum(x, g.consensus, 1e-6)).epsilon(1e-12));
      CHECK(std::abs(g.weights->sum() - 1.0) < 1e-9);
      CHECK(g.weights->minCoeff() >= 0.0);
    }
  }

  GeometricMedianOptions bad;
  bad.smoothing = 0;
  CHECK_THROWS_AS(geometric_median(line, bad), InvalidInputError);
}

TEST_CASE("aggregator kinds validate their hyperparameters") {
  for (const auto& name : AggregatorKind::method_names()) {
    CHECK(AggregatorKind::from_name(name).name() == name);
  }
  CHECK_THROWS_AS(AggregatorKind::from_name("krum"), InvalidInputError);
  IcovVb vb;
  vb.latent_dim = 0;
  CHECK_THROWS_AS(AggregatorKind{vb}, InvalidInputError);
  IvarMle mle;
  mle.options.tol = 0;
  CHECK_THROWS_AS(AggregatorKind{mle}, InvalidInputError);
  GeomMedian gm;
  gm.options.max_iter = 0;
  CHECK_THROWS_AS(AggregatorKind{gm}, InvalidInputError);
  IcovMle im;
  im.options.lr = -1;
  CHECK_THROWS_AS(AggregatorKind{im}, InvalidInputError);
  CHECK_FALSE(AggregatorKind::from_name("uniform").uses_state());
  CHECK(AggregatorKind::from_name("ivar_vb").uses_state());
}

TEST_CASE("aggregate dispatch") {
  NoiseState state;
  const auto twin = UpdateMatrix::from_columns({{1.5, 2.5}, {1.5, 2.5}});
  CHECK(aggregate(AggregatorKind::from_name("uniform"), twin, state).consensus ==
        Eigen::Vector2d(1.5, 2.5));

  const auto three = UpdateMatrix::from_columns({{1, 5}, {2, 6}, {9, 7}});
  CHECK(aggregate(AggregatorKind::from_name("coord_median"), three, state).consensus ==
        coordinate_median(three).consensus);
  CHECK(state.rounds().empty());

  const auto pulled = UpdateMatrix::from_columns({{0}, {0}, {9}});
  const double y = aggregate(AggregatorKind::from_name("ivar_mle"), pulled, state).consensus[0];
  CHECK(y < 3.0);
  CHECK(y < 0.05);
  CHECK(state.rounds().size() == 1);

  SUBCASE("reported sizes drive sample-size weighting") {
    NoiseState s;
    s.set_reported_size(PartyId{0}, 1);
    s.set_reported_size(PartyId{1}, 3);
    UniformAvg u;
    u.sample_size_weights = true;
    CHECK(aggregate(AggregatorKind(u), UpdateMatrix::from_columns({{0}, {4}}), s).consensus[0] ==
          doctest::Approx(3.0));
  }

  SUBCASE("window keeps the most recent rounds") {
    NoiseState s(3);
    for (std::size_t i = 0; i < 5; ++i) {
      aggregate(AggregatorKind::from_name("ivar_vb"), random_matrix(2, 3, i, i), s);
    }
    REQUIRE(s.rounds().size() == 3);
    CHECK(s.rounds().front().round_id() == 2);
    s.reset();
    CHECK(s.rounds().empty());
    CHECK(s.ivar_vb.sigma.empty());
  }
}

TEST_CASE("translation equivariance and permutation invariance") {
  const std::vector<Eigen::Index> perm{3, 0, 4, 1, 2};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto x = random_matrix(4, 5, seed, 0);
    Eigen::VectorXd c(4);
    c << 3.0, -1.0, 0.5, 10.0;
    for (const auto& name : AggregatorKind::method_names()) {
      CAPTURE(name);
      CAPTURE(seed);
      const auto kind = AggregatorKind::from_name(name);
      NoiseState s1(10, 7), s2(10, 7), s3(10, 7);
      const Eigen::VectorXd base = aggregate(kind, x, s1).consensus;
      const Eigen::VectorXd moved = aggregate(kind, shifted(x, c), s2).consensus;
      const Eigen::VectorXd swapped = aggregate(kind, permuted(x, perm), s3).consensus;
      const bool closed_form = name == "uniform" || name == "coord_median";
      // The VB methods put a zero-mean prior on the consensus, so they are
      // only equivariant up to that shrinkage; they are checked for
      // permutation invariance alone.
      const bool has_prior = name == "ivar_vb" || name == "icov_vb";
      if (closed_form) {
        CHECK(((moved - c) - base).cwiseAbs().maxCoeff() < 1e-12);
      } else if (!has_prior) {
        CHECK(((moved - c) - base).cwiseAbs().maxCoeff() < 1e-5);
      }
      if (closed_form) {
        CHECK(swapped == base);
      } else {
        CHECK((swapped - base).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + base.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("SPD factorization with jitter") {
  Eigen::Matrix2d spd;
  spd << 2, 1, 1, 2;
  auto f = factor_spd(spd);
  CHECK(f.jitter == 0.0);
  CHECK((f.solve(Eigen::Vector2d(1, 1)) - Eigen::Vector2d(1.0 / 3, 1.0 / 3)).norm() < 1e-14);
  CHECK(f.log_det() == doctest::Approx(std::log(3.0)));

  Eigen::Matrix2d singular;
  singular << 1, -1, -1, 1;
  auto g = factor_spd(singular);
  CHECK(g.jitter > 0.0);
  CHECK(g.jitter <= 1e-6 * singular.trace() / 2 + 1e-18);

  Eigen::Matrix2d indefinite;
  indefinite << 1, 0, 0, -1;
  CHECK_THROWS_AS(factor_spd(indefinite), ConditioningError);
  CHECK(factor_spd(Eigen::Matrix2d::Zero()).jitter > 0.0);
}
