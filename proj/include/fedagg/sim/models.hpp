#pragma once

#include <span>
#include <variant>
#include <vector>

#include "fedagg/sim/data.hpp"

namespace fedagg::sim {

// Parameter layout. Linear regression: w (dim). Logistic regression: class
// weights row-major by class (c * dim + d), then one bias per class.
//
// Losses are per-example means: squared error 0.5 (x^T w - y)^2, and softmax
// cross-entropy. An explicit row list selects a batch; it must not be empty.
double mean_loss(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& data);
double mean_loss(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& data,
                 std::span<const Eigen::Index> rows);
Eigen::VectorXd mean_gradient(const ModelSpec& model, const Eigen::VectorXd& w,
                              const Samples& data);
Eigen::VectorXd mean_gradient(const ModelSpec& model, const Eigen::VectorXd& w,
                              const Samples& data, std::span<const Eigen::Index> rows);

// Held-out metric: MSE against the clean targets, or accuracy.
double test_metric(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& test);
bool higher_is_better(const ModelSpec& model) noexcept;

struct FullBatch {
  bool operator==(const FullBatch&) const = default;
};
struct MiniBatch {
  std::size_t size = 32;
  bool operator==(const MiniBatch&) const = default;
};
using BatchMode = std::variant<FullBatch, MiniBatch>;

// Mean gradient over the party's batch at w. Mini-batches are drawn without
// replacement from `rng`; the chosen rows are appended to `drawn` if given.
Eigen::VectorXd genuine_update(const ModelSpec& model, const Samples& data,
                               const Eigen::VectorXd& w, const BatchMode& batch, Rng& rng,
                               std::vector<Eigen::Index>* drawn = nullptr);

struct LocalFitOptions {
  std::size_t steps = 500;
  double lr = 0.5;
  double grad_tol = 1e-6;
};

struct LocalFit {
  Eigen::VectorXd w;
  std::size_t steps = 0;
  bool converged = false;
  // The iterate stopped being finite; w holds the last finite one.
  bool diverged = false;
};

// Full-batch gradient descent from zero.
LocalFit fit_local(const ModelSpec& model, const Samples& data, const LocalFitOptions& options = {});

// Adversarial vector of length k for `round`, reproducible from
// (seed, party, round). Gaussian: scale * N(0, I). Random update: the mean
// gradient on `batch` fresh examples at a point uniform in [-1, 1]^k, times
// scale.
Eigen::VectorXd adversary_update(const Behavior& behavior, const TaskInstance& task,
                                 std::size_t k, std::uint64_t seed, PartyId party,
                                 std::size_t round, std::size_t batch = 32);

}  // namespace fedagg::sim
