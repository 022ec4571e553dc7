#pragma once

#include <deque>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>

#include "fedagg/baselines.hpp"
#include "fedagg/icov.hpp"
#include "fedagg/ivar.hpp"

namespace fedagg {

struct UniformAvg {
  // Weight each party by its reported sample size instead of equally.
  bool sample_size_weights = false;
};
struct CoordMedian {};
struct GeomMedian {
  GeometricMedianOptions options;
};
struct IvarMle {
  IvarMleOptions options;
};
struct IvarVb {
  IvarVbOptions options;
  double initial_tau_sq = 1.0;
};
struct IcovMle {
  IcovMleOptions options;
  double initial_sigma_u_sq = 0.1;
  double initial_sigma_sq = 1.0;
};
struct IcovVb {
  IcovVbOptions options;
  std::size_t latent_dim = 2;
  double initial_sigma_y_sq = 1.0;
  double initial_sigma_u_sq = 0.1;
  double initial_sigma_v_sq = 0.1;
};

// One aggregation method with its hyperparameters. Construction validates
// them and throws InvalidInputError on a bad value.
class AggregatorKind {
 public:
  using Variant = std::variant<UniformAvg, CoordMedian, GeomMedian, IvarMle, IvarVb, IcovMle, IcovVb>;

  AggregatorKind(Variant method);  // NOLINT(google-explicit-constructor)

  // Default hyperparameters for a method name (see method_names()).
  static AggregatorKind from_name(std::string_view name);
  static const std::vector<std::string>& method_names();

  const Variant& method() const noexcept { return method_; }
  std::string name() const;
  bool uses_state() const noexcept;

 private:
  Variant method_;
};

// Cross-round aggregator memory: the sliding window of recent rounds plus the
// per-method estimates that persist between calls. One state belongs to one
// aggregation sequence at a time.
class NoiseState {
 public:
  explicit NoiseState(std::size_t window = 10, std::uint64_t seed = 0);

  std::size_t window() const noexcept { return window_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::deque<UpdateMatrix>& rounds() const noexcept { return rounds_; }

  void set_reported_size(PartyId id, double size) { reported_sizes_[id] = size; }
  double reported_size(PartyId id) const;

  // Forget everything except the window length, seed and reported sizes.
  void reset();

  VarianceTable ivar_mle;
  IvarVbState ivar_vb;
  IcovMleState icov_mle;
  IcovVbState icov_vb;

 private:
  friend AggregateResult aggregate(const AggregatorKind&, const UpdateMatrix&, NoiseState&);
  void push(const UpdateMatrix& x);

  std::size_t window_;
  std::uint64_t seed_;
  std::deque<UpdateMatrix> rounds_;
  std::unordered_map<PartyId, double> reported_sizes_;
};

// Routes one round to the chosen method. Baselines leave `state` untouched;
// the estimators append the round to the window, re-estimate over the whole
// window and return the result for `x`.
AggregateResult aggregate(const AggregatorKind& kind, const UpdateMatrix& x, NoiseState& state);

}  // namespace fedagg
