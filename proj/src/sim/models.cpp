#include "fedagg/sim/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedagg/errors.hpp"

namespace fedagg::sim {
namespace {

constexpr std::uint64_t kAdversaryStream = 0x61647672;

std::vector<Eigen::Index> all_rows(const Samples& data) {
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(data.size()));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  return rows;
}

void check_params(const ModelSpec& model, const Eigen::VectorXd& w) {
  if (static_cast<std::size_t>(w.size()) != num_params(model)) {
    throw ShapeError("model expects " + std::to_string(num_params(model)) + " parameters, got " +
                     std::to_string(w.size()));
  }
}

// Softmax probabilities for the selected rows (rows x classes).
Eigen::MatrixXd softmax(const LogisticRegression& m, const Eigen::VectorXd& w,
                        const Eigen::MatrixXd& x) {
  const auto d = static_cast<Eigen::Index>(m.dim);
  const auto c = static_cast<Eigen::Index>(m.classes);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      weights(w.data(), c, d);
  Eigen::MatrixXd logits = x * weights.transpose();
  logits.rowwise() += w.tail(c).transpose();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i) = (logits.row(i).array() - top).exp();
    logits.row(i) /= logits.row(i).sum();
  }
  return logits;
}

}  // namespace

double mean_loss(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& data) {
  const auto rows = all_rows(data);
  return mean_loss(model, w, data, rows);
}

double mean_loss(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& data,
                 std::span<const Eigen::Index> rows) {
  if (rows.empty()) throw InvalidInputError("mean_loss: empty batch");
  check_params(model, w);
  const std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  const Eigen::MatrixXd x = data.x(idx, Eigen::all);
  const auto n = static_cast<double>(idx.size());
  if (std::holds_alternative<LinearRegression>(model)) {
    return 0.5 * (x * w - data.y(idx)).squaredNorm() / n;
  }
  const auto& m = std::get<LogisticRegression>(model);
  const auto d = static_cast<Eigen::Index>(m.dim);
  const auto c = static_cast<Eigen::Index>(m.classes);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      weights(w.data(), c, d);
  Eigen::MatrixXd logits = x * weights.transpose();
  logits.rowwise() += w.tail(c).transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const double lse = top + std::log((logits.row(i).array() - top).exp().sum());
    total += lse - logits(i, data.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  }
  return total / n;
}

Eigen::VectorXd mean_gradient(const ModelSpec& model, const Eigen::VectorXd& w,
                              const Samples& data) {
  const auto rows = all_rows(data);
  return mean_gradient(model, w, data, rows);
}

Eigen::VectorXd mean_gradient(const ModelSpec& model, const Eigen::VectorXd& w,
                              const Samples& data, std::span<const Eigen::Index> rows) {
  if (rows.empty()) throw InvalidInputError("mean_gradient: empty batch");
  check_params(model, w);
  const std::vector<Eigen::Index> idx(rows.begin(), rows.end());
  const Eigen::MatrixXd x = data.x(idx, Eigen::all);
  const auto n = static_cast<double>(idx.size());
  if (std::holds_alternative<LinearRegression>(model)) {
    return x.transpose() * (x * w - data.y(idx)) / n;
  }
  const auto& m = std::get<LogisticRegression>(model);
  const auto d = static_cast<Eigen::Index>(m.dim);
  const auto c = static_cast<Eigen::Index>(m.classes);
  Eigen::MatrixXd resid = softmax(m, w, x);  // p - onehot
  for (std::size_t i = 0; i < idx.size(); ++i) {
    resid(static_cast<Eigen::Index>(i), data.labels[static_cast<std::size_t>(idx[i])]) -= 1.0;
  }
  Eigen::VectorXd grad(c * d + c);
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(grad.data(),
                                                                                        c, d);
  gw = resid.transpose() * x / n;
  grad.tail(c) = resid.colwise().sum().transpose() / n;
  return grad;
}

double test_metric(const ModelSpec& model, const Eigen::VectorXd& w, const Samples& test) {
  check_params(model, w);
  if (test.size() == 0) throw InvalidInputError("test_metric: empty test set");
  if (std::holds_alternative<LinearRegression>(model)) {
    return (test.x * w - test.y).squaredNorm() / static_cast<double>(test.size());
  }
  const Eigen::MatrixXd p = softmax(std::get<LogisticRegression>(model), w, test.x);
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Eigen::Index best = 0;
    p.row(i).maxCoeff(&best);
    if (best == test.labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

bool higher_is_better(const ModelSpec& model) noexcept {
  return std::holds_alternative<LogisticRegression>(model);
}

Eigen::VectorXd genuine_update(const ModelSpec& model, const Samples& data,
                               const Eigen::VectorXd& w, const BatchMode& batch, Rng& rng,
                               std::vector<Eigen::Index>* drawn) {
  if (data.size() == 0) throw InvalidInputError("genuine_update: party has no data");
  if (!w.allFinite()) throw InvalidInputError("genuine_update: non-finite parameters");
  auto rows = all_rows(data);
  if (const auto* mb = std::get_if<MiniBatch>(&batch)) {
    if (mb->size == 0) throw InvalidInputError("genuine_update: empty mini-batch");
    if (mb->size > rows.size()) {
      throw InvalidInputError("genuine_update: mini-batch larger than the local sample");
    }
    // Partial Fisher-Yates: the first `size` slots become the batch.
    for (std::size_t i = 0; i < mb->size; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, rows.size() - 1);
      std::swap(rows[i], rows[pick(rng)]);
    }
    rows.resize(mb->size);
  }
  if (drawn) drawn->insert(drawn->end(), rows.begin(), rows.end());
  return mean_gradient(model, w, data, rows);
}

LocalFit fit_local(const ModelSpec& model, const Samples& data, const LocalFitOptions& options) {
  LocalFit fit;
  fit.w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_params(model)));
  for (std::size_t t = 0; t < options.steps; ++t) {
    const Eigen::VectorXd g = mean_gradient(model, fit.w, data);
    if (!g.allFinite()) {
      fit.diverged = true;
      return fit;
    }
    if (g.norm() < options.grad_tol) {
      fit.converged = true;
      return fit;
    }
    Eigen::VectorXd next = fit.w - options.lr * g;
    if (!next.allFinite()) {
      fit.diverged = true;
      return fit;
    }
    fit.w = std::move(next);
    fit.steps = t + 1;
  }
  return fit;
}

Eigen::VectorXd adversary_update(const Behavior& behavior, const TaskInstance& task,
                                 std::size_t k, std::uint64_t seed, PartyId party,
                                 std::size_t round, std::size_t batch) {
  auto rng = make_rng({seed, kAdversaryStream, to_index(party), round});
  const auto n = static_cast<Eigen::Index>(k);
  if (const auto* g = std::get_if<GaussianAdversary>(&behavior)) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
    return g->scale * v;
  }
  if (const auto* r = std::get_if<RandomUpdateAdversary>(&behavior)) {
    if (k != num_params(task.model())) {
      throw ShapeError("random-update adversary: k differs from the model size");
    }
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Eigen::VectorXd point(n);
    for (Eigen::Index i = 0; i < n; ++i) point[i] = unit(rng);
    const Samples fresh = task.draw(std::max<std::size_t>(batch, 1), rng);
    return r->scale * mean_gradient(task.model(), point, fresh);
  }
  throw InvalidInputError("adversary_update: party " + to_string(party) + " is genuine");
}

}  // namespace fedagg::sim
