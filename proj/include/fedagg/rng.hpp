#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedagg {

using Rng = std::mt19937_64;

// Order-sensitive combination of seed components (splitmix64 finalizer per
// component). Streams keyed this way do not depend on scheduling.
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(mix_seed(parts)); }

}  // namespace fedagg
