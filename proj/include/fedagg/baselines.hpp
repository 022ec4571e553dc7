#pragma once

#include <span>

#include "fedagg/update_matrix.hpp"

namespace fedagg {

// Weighted mean of the columns. Weights are normalized before use and
// reported in normalized form; the sum runs in ascending party-id order so the
// result does not depend on column order.
AggregateResult weighted_average(const UpdateMatrix& x, std::span<const double> weights);

// Per-coordinate median. An even number of parties takes the midpoint of the
// two central order statistics.
AggregateResult coordinate_median(const UpdateMatrix& x);

struct GeometricMedianOptions {
  double smoothing = 1e-6;
  double tol = 1e-8;
  std::size_t max_iter = 100;
};

// Smoothed Weiszfeld iteration started from the coordinate-wise median.
// objective_trace holds sum_j max(|x_j - y|, smoothing) at the start point
// and after every iteration.
AggregateResult geometric_median(const UpdateMatrix& x, const GeometricMedianOptions& options = {});

double smoothed_distance_sum(const UpdateMatrix& x, const Eigen::VectorXd& point, double smoothing);

}  // namespace fedagg
