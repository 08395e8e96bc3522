#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace greylag {

using Block128 = std::array<std::uint64_t, 2>;

/// Threefry-2x64 with 20 rounds (Salmon et al. 2011) applied to one
/// counter block under the given key.
Block128 threefry2x64(const Block128& key, const Block128& counter) noexcept;

/// Splittable counter-based PRNG key.
///
/// Keys are values: deriving a child never mutates the parent, so the same
/// (key, data) pair always yields the same child. Distinct derivation paths
/// hash to distinct 128-bit keys with overwhelming probability.
class PrngKey {
 public:
  constexpr PrngKey() = default;
  constexpr explicit PrngKey(Block128 words) : words_(words) {}

  static PrngKey from_seed(std::uint64_t seed) noexcept;

  /// Child key for an integer coordinate.
  PrngKey fold_in(std::uint64_t data) const noexcept;

  /// `n` independent child keys.
  std::vector<PrngKey> split(std::size_t n) const;

  const Block128& words() const noexcept { return words_; }

  friend bool operator==(const PrngKey&, const PrngKey&) = default;

 private:
  Block128 words_{0, 0};
};

/// Counter-mode bit generator over a key. Satisfies
/// UniformRandomBitGenerator; the same key replays the same stream.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(const PrngKey& key) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept;

  /// Uniform on the open interval (0, 1), 53 bits.
  double uniform() noexcept;
  double normal() noexcept;
  double exponential() noexcept;
  /// Gamma(shape, rate 1) by Marsaglia-Tsang.
  double gamma(double shape) noexcept;
  Eigen::VectorXd normal_vector(Eigen::Index n) noexcept;

 private:
  PrngKey key_;
  std::uint64_t counter_ = 0;
  Block128 buffer_{0, 0};
  int buffered_ = 0;
};

}  // namespace greylag
