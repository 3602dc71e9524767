// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cfcap {

using TokenId = std::int32_t;
using CellId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved cell identifiers. Object ids start at kFirstObjectCell.
inline constexpr CellId kBackgroundCell = 0;
inline constexpr CellId kMaskCell = 1;
inline constexpr CellId kFirstObjectCell = 2;

// Error taxonomy shared by every module. The CLI maps ConfigError to exit
// code 2 and everything else to 1.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Portable random stream. std::mt19937_64 is fully specified by the standard,
// the std:: distributions are not, so all derived draws are computed here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n);
  // Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a, used for config hashes and dataset fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// True when `needle` occurs as a contiguous run inside `haystack`.
bool contains_subsequence(std::span<const TokenId> haystack,
                          std::span<const TokenId> needle);

}  // namespace cfcap
