#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "fedagg/icov.hpp"
#include "fedagg/rng.hpp"
#include "fedagg/update_matrix.hpp"

namespace fedagg::sim {

// ---- parties -------------------------------------------------------------

struct Genuine {
  std::size_t sample_size = 300;
  // Parties with the same non-negative group share one block of
  // `overlap_block` examples (set on the design, not here).
  int overlap_group = -1;
};
struct GaussianAdversary {
  double scale = 1.0;
};
struct RandomUpdateAdversary {
  double scale = 1.0;
};
using Behavior = std::variant<Genuine, GaussianAdversary, RandomUpdateAdversary>;

// Multiplier on the label noise. Either fixed or drawn log-uniformly per
// (seed, party).
struct NoiseLevel {
  double value = 1.0;
  std::optional<std::pair<double, double>> log_uniform;

  double draw(std::uint64_t seed, PartyId id) const;
  bool operator==(const NoiseLevel&) const = default;
};

struct PartySpec {
  PartyId id{};
  Behavior behavior = Genuine{};
  NoiseLevel noise_level;

  bool genuine() const noexcept { return std::holds_alternative<Genuine>(behavior); }
};

// ---- tasks ---------------------------------------------------------------

struct LinearRegression {
  std::size_t dim = 20;
  std::optional<Eigen::VectorXd> true_w;       // N(0, I) per seed when absent
  std::optional<Eigen::MatrixXd> feature_cov;  // identity when absent
  double label_noise = 10.0;
};

struct LogisticRegression {
  std::size_t dim = 20;
  std::size_t classes = 3;
  std::optional<Eigen::MatrixXd> class_means;  // classes x dim
  // Norm of each randomly drawn class mean when class_means is absent.
  double class_separation = 4.0;
  double label_flip_rate = 0.3;
};

using ModelSpec = std::variant<LinearRegression, LogisticRegression>;

std::size_t num_params(const ModelSpec& model);

// Examples with either real-valued targets or class labels.
struct Samples {
  Eigen::MatrixXd x;  // n x dim
  Eigen::VectorXd y;
  std::vector<int> labels;

  Eigen::Index size() const noexcept { return x.rows(); }
};

// A model specification with its per-seed ground truth resolved.
class TaskInstance {
 public:
  TaskInstance(const ModelSpec& model, std::uint64_t seed);

  const ModelSpec& model() const noexcept { return model_; }
  const Eigen::VectorXd& true_w() const noexcept { return true_w_; }
  const Eigen::MatrixXd& class_means() const noexcept { return class_means_; }

  // Fresh clean examples: noise-free targets or true labels.
  Samples draw(std::size_t n, Rng& rng) const;

 private:
  ModelSpec model_;
  Eigen::VectorXd true_w_;
  Eigen::MatrixXd class_means_;
  Eigen::MatrixXd feature_chol_;
};

// ---- overlapping local datasets -----------------------------------------

// A block of pool examples shared by exactly `members`.
struct SharedBlock {
  std::vector<PartyId> members;
  std::size_t size = 0;
};

struct OverlapDesign {
  // Block size for every overlap group of genuine parties.
  std::size_t group_block = 0;
  // Explicit pairwise overlaps, realized as blocks private to the pair.
  std::vector<std::tuple<PartyId, PartyId, std::size_t>> pairs;

  bool operator==(const OverlapDesign&) const = default;
};

// Expands groups and pairs into disjoint shared blocks. Throws DesignError
// when a party's shared blocks exceed its sample size, when a pair names a
// non-genuine or unknown party, or when the pool is too small.
std::vector<SharedBlock> expand_design(std::size_t pool_size, const std::vector<PartySpec>& parties,
                                       const OverlapDesign& design);

// Pool indices per genuine party. Shared blocks come first, private indices
// fill the rest; the pool order is shuffled by `seed`.
std::map<PartyId, std::vector<std::size_t>> generate_overlapping_data(
    std::size_t pool_size, const std::vector<PartySpec>& parties, const OverlapDesign& design,
    std::uint64_t seed);

// Realized counts as an OverlapSpec over the given parties (in order).
OverlapSpec realized_overlap(const std::map<PartyId, std::vector<std::size_t>>& indices,
                             const std::vector<PartyId>& order, double sigma_sq = 1.0);

// Shared example pool with per-example noise draws, so overlapping parties
// see correlated label noise.
struct Pool {
  Samples clean;
  Eigen::VectorXd noise;           // standard normal per example
  Eigen::VectorXd flip_uniform;    // U(0,1) per example
  std::vector<int> flip_to;        // alternative label per example
};

Pool make_pool(const TaskInstance& task, std::size_t size, std::uint64_t seed);

// Party-local samples: clean pool rows with this party's label noise applied.
Samples party_samples(const TaskInstance& task, const Pool& pool,
                      const std::vector<std::size_t>& indices, double noise_level);

}  // namespace fedagg::sim
