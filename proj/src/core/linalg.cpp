#include "fedagg/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedagg/errors.hpp"

namespace fedagg {
namespace {

constexpr double kRelativeJitter = 1e-9;
constexpr int kJitterRetries = 3;

bool factorized(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto diag = llt.matrixLLT().diagonal();
  return diag.allFinite() && (diag.array() > 0.0).all();
}

}  // namespace

Eigen::MatrixXd SpdFactor::inverse() const {
  const auto n = llt.matrixLLT().rows();
  return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

double SpdFactor::log_det() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

SpdFactor factor_spd(const Eigen::MatrixXd& matrix, const char* what) {
  if (matrix.rows() != matrix.cols() || matrix.rows() == 0) {
    throw ShapeError(std::string(what) + ": expected a non-empty square matrix");
  }
  if (!matrix.allFinite()) throw ConditioningError(std::string(what) + ": non-finite entries");

  SpdFactor out;
  out.llt.compute(matrix);
  if (factorized(out.llt)) return out;

  const auto n = static_cast<double>(matrix.rows());
  // An all-zero matrix has zero trace; fall back to a unit scale.
  const double scale = matrix.trace() > 0.0 ? matrix.trace() / n : 1.0;
  double jitter = kRelativeJitter * scale;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd shifted = matrix;
    shifted.diagonal().array() += jitter;
    out.llt.compute(shifted);
    if (factorized(out.llt)) {
      out.jitter = jitter;
      return out;
    }
  }
  throw ConditioningError(std::string(what) + ": not positive-definite after jitter");
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace fedagg
