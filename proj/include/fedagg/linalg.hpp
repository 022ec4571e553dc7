#pragma once

#include <Eigen/Dense>

namespace fedagg {

// Cholesky factor of a matrix that should be SPD. If the plain factorization
// fails, 1e-9 * trace / n is added to the diagonal and multiplied by ten on
// each of up to three retries. Throws ConditioningError when all attempts
// fail.
struct SpdFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;  // amount added to the diagonal, 0 if none was needed

  template <class Rhs>
  typename Rhs::PlainObject solve(const Eigen::MatrixBase<Rhs>& rhs) const {
    return llt.solve(rhs);
  }
  Eigen::MatrixXd inverse() const;
  double log_det() const;
};

SpdFactor factor_spd(const Eigen::MatrixXd& matrix, const char* what = "matrix");

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

}  // namespace fedagg
