#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fedagg {

enum class PartyId : std::uint32_t {};

constexpr std::uint32_t to_index(PartyId id) noexcept { return static_cast<std::uint32_t>(id); }
std::string to_string(PartyId id);

// One round of party updates: column j holds the flattened update vector of
// party_ids()[j]. Immutable after construction; every value is finite.
class UpdateMatrix {
 public:
  UpdateMatrix(std::size_t round_id, std::vector<PartyId> party_ids, Eigen::MatrixXd values);

  // Columns given as plain vectors; party ids default to 0..n-1.
  static UpdateMatrix from_columns(const std::vector<std::vector<double>>& columns,
                                   std::size_t round_id = 0);
  static UpdateMatrix from_columns(const std::vector<std::vector<double>>& columns,
                                   std::vector<PartyId> party_ids, std::size_t round_id = 0);

  std::size_t round_id() const noexcept { return round_id_; }
  const std::vector<PartyId>& party_ids() const noexcept { return party_ids_; }
  const Eigen::MatrixXd& values() const noexcept { return values_; }

  Eigen::Index dim() const noexcept { return values_.rows(); }
  Eigen::Index num_parties() const noexcept { return values_.cols(); }
  auto column(Eigen::Index j) const { return values_.col(j); }

  std::optional<Eigen::Index> column_of(PartyId id) const;

 private:
  std::size_t round_id_;
  std::vector<PartyId> party_ids_;
  Eigen::MatrixXd values_;
};

// Consensus plus diagnostics returned by every aggregator.
struct AggregateResult {
  Eigen::VectorXd consensus;
  // Present for methods that are a weighted mean of the columns, ordered as
  // the input party_ids. Sums to one.
  std::optional<Eigen::VectorXd> weights;
  std::size_t iterations = 0;
  std::vector<double> objective_trace;
  // Posterior variance of the consensus (VB methods only).
  std::optional<double> posterior_variance;
  // Generalized-least-squares weights can be negative; set when they are.
  bool negative_weights = false;
};

}  // namespace fedagg

template <>
struct std::hash<fedagg::PartyId> {
  std::size_t operator()(fedagg::PartyId id) const noexcept {
    return std::hash<std::uint32_t>{}(fedagg::to_index(id));
  }
};
