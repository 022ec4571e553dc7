#include "fedagg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "fedagg/errors.hpp"

namespace fedagg {
namespace {

std::vector<Eigen::Index> columns_by_party_id(const UpdateMatrix& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.num_parties()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto& ids = x.party_ids();
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return to_index(ids[a]) < to_index(ids[b]);
  });
  return order;
}

}  // namespace

AggregateResult weighted_average(const UpdateMatrix& x, std::span<const double> weights) {
  if (static_cast<Eigen::Index>(weights.size()) != x.num_parties()) {
    throw ShapeError("weighted_average: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(x.num_parties()) + " parties");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw InvalidWeightsError("weighted_average: weights must be finite and nonnegative");
    }
    total += w;
  }
  if (!(total > 0.0)) throw InvalidWeightsError("weighted_average: all weights are zero");

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.dim());
  double denom = 0.0;
  for (Eigen::Index j : columns_by_party_id(x)) {
    acc += weights[static_cast<std::size_t>(j)] * x.column(j);
    denom += weights[static_cast<std::size_t>(j)];
  }

  AggregateResult out;
  out.consensus = acc / denom;
  Eigen::VectorXd normalized(x.num_parties());
  for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
    normalized[j] = weights[static_cast<std::size_t>(j)] / total;
  }
  out.weights = std::move(normalized);
  out.iterations = 1;
  return out;
}

AggregateResult coordinate_median(const UpdateMatrix& x) {
  const auto n = static_cast<std::size_t>(x.num_parties());
  std::vector<double> row(n);
  AggregateResult out;
  out.consensus.resize(x.dim());
  for (Eigen::Index k = 0; k < x.dim(); ++k) {
    for (std::size_t j = 0; j < n; ++j) row[j] = x.values()(k, static_cast<Eigen::Index>(j));
    const auto mid = row.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(row.begin(), mid, row.end());
    double median = *mid;
    if (n % 2 == 0) {
      const double lower = *std::max_element(row.begin(), mid);
      median = lower + (median - lower) / 2.0;
    }
    out.consensus[k] = median;
  }
  out.iterations = 1;
  return out;
}

double smoothed_distance_sum(const UpdateMatrix& x, const Eigen::VectorXd& point,
                             double smoothing) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.num_parties(); ++j) {
    total += std::max((x.column(j) - point).norm(), smoothing);
  }
  return total;
}

AggregateResult geometric_median(const UpdateMatrix& x, const GeometricMedianOptions& options) {
  if (!(options.smoothing > 0.0)) throw InvalidInputError("geometric_median: smoothing must be > 0");
  if (!(options.tol > 0.0)) throw InvalidInputError("geometric_median: tol must be > 0");
  if (options.max_iter < 1) throw InvalidInputError("geometric_median: max_iter must be >= 1");

  const auto order = columns_by_party_id(x);
  AggregateResult out;
  Eigen::VectorXd current = coordinate_median(x).consensus;
  out.objective_trace.push_back(smoothed_distance_sum(x, current, options.smoothing));

  Eigen::VectorXd weights(x.num_parties());
  for (std::size_t it = 1; it <= options.max_iter; ++it) {
    Eigen::VectorXd numer = Eigen::VectorXd::Zero(x.dim());
    double denom = 0.0;
    for (Eigen::Index j : order) {
      const double w = 1.0 / std::max((x.column(j) - current).norm(), options.smoothing);
      weights[j] = w;
      numer += w * x.column(j);
      denom += w;
    }
    Eigen::VectorXd next = numer / denom;
    if (!next.allFinite()) throw NumericalError("geometric_median: non-finite iterate", it);

    const double step = (next - current).norm();
    const double scale = 1.0 + current.norm();
    current = std::move(next);
    out.iterations = it;
    out.objective_trace.push_back(smoothed_distance_sum(x, current, options.smoothing));
    out.weights = weights / denom;
    if (step <= options.tol * scale) break;
  }
  out.consensus = std::move(current);
  return out;
}

}  // namespace fedagg
