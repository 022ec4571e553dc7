#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedagg/aggregator.hpp"
#include "fedagg/sim/federation.hpp"

namespace fedagg::harness {

// An aggregator as it appears in reports. The label defaults to the method
// name and must be unique within a config.
struct NamedAggregator {
  std::string label;
  AggregatorKind kind;
};

struct FederationConfig {
  sim::SimConfig sim;
  std::vector<NamedAggregator> aggregators;
  std::vector<std::uint64_t> seeds;
  std::optional<std::string> output;
};

// Parses and validates a JSON config (schema in README.md). Throws
// ConfigError listing every violation with its JSON path.
FederationConfig parse_config(std::string_view text);
FederationConfig load_config(const std::filesystem::path& path);  // IoError if unreadable

// Fully expanded form; parse_config(serialize_config(c)) == c.
nlohmann::json to_json(const FederationConfig& config);
std::string serialize_config(const FederationConfig& config);

bool operator==(const FederationConfig& a, const FederationConfig& b);

}  // namespace fedagg::harness
