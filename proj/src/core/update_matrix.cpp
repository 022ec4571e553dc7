#include "fedagg/update_matrix.hpp"

#include <algorithm>
#include <unordered_set>

#include "fedagg/errors.hpp"

namespace fedagg {

std::string to_string(PartyId id) { return std::to_string(to_index(id)); }

UpdateMatrix::UpdateMatrix(std::size_t round_id, std::vector<PartyId> party_ids,
                           Eigen::MatrixXd values)
    : round_id_(round_id), party_ids_(std::move(party_ids)), values_(std::move(values)) {
  if (values_.rows() < 1 || values_.cols() < 1) {
    throw ShapeError("update matrix needs K >= 1 rows and at least one party column");
  }
  if (static_cast<Eigen::Index>(party_ids_.size()) != values_.cols()) {
    throw ShapeError("update matrix has " + std::to_string(values_.cols()) + " columns but " +
                     std::to_string(party_ids_.size()) + " party ids");
  }
  std::unordered_set<PartyId> seen;
  for (PartyId id : party_ids_) {
    if (!seen.insert(id).second) {
      throw InvalidInputError("duplicate party id " + to_string(id) + " in round " +
                              std::to_string(round_id_));
    }
  }
  if (!values_.allFinite()) {
    throw InvalidInputError("non-finite update value in round " + std::to_string(round_id_));
  }
}

UpdateMatrix UpdateMatrix::from_columns(const std::vector<std::vector<double>>& columns,
                                        std::size_t round_id) {
  std::vector<PartyId> ids(columns.size());
  for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = PartyId{static_cast<std::uint32_t>(j)};
  return from_columns(columns, std::move(ids), round_id);
}

UpdateMatrix UpdateMatrix::from_columns(const std::vector<std::vector<double>>& columns,
                                        std::vector<PartyId> party_ids, std::size_t round_id) {
  if (columns.empty()) throw ShapeError("update matrix needs at least one column");
  const auto k = static_cast<Eigen::Index>(columns.front().size());
  Eigen::MatrixXd values(k, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (static_cast<Eigen::Index>(columns[j].size()) != k) {
      throw ShapeError("ragged update columns");
    }
    for (Eigen::Index r = 0; r < k; ++r) values(r, static_cast<Eigen::Index>(j)) = columns[j][r];
  }
  return UpdateMatrix(round_id, std::move(party_ids), std::move(values));
}

std::optional<Eigen::Index> UpdateMatrix::column_of(PartyId id) const {
  auto it = std::find(party_ids_.begin(), party_ids_.end(), id);
  if (it == party_ids_.end()) return std::nullopt;
  return static_cast<Eigen::Index>(it - party_ids_.begin());
}

}  // namespace fedagg
