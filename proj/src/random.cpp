#include "greylag/random.hpp"

#include <cmath>
#include <numbers>

namespace greylag {

namespace {

constexpr std::uint64_t kParity = 0x1BD11BDAA9FC1A22ULL;
constexpr int kRotations[8] = {16, 42, 12, 31, 16, 32, 24, 21};

constexpr std::uint64_t rotl(std::uint64_t x, int r) noexcept {
  return (x << r) | (x >> (64 - r));
}

// domain tags in the high counter word keep derivation kinds apart
constexpr std::uint64_t kTagFold = 0x666f6c64ULL;
constexpr std::uint64_t kTagSplit = 0x73706c74ULL;
constexpr std::uint64_t kTagStream = 0x7374726dULL;

}  // namespace

Block128 threefry2x64(const Block128& key, const Block128& counter) noexcept {
  const std::uint64_t ks[3] = {key[0], key[1], kParity ^ key[0] ^ key[1]};
  std::uint64_t x0 = counter[0] + ks[0];
  std::uint64_t x1 = counter[1] + ks[1];
  for (int round = 0; round < 20; ++round) {
    x0 += x1;
    x1 = rotl(x1, kRotations[round % 8]);
    x1 ^= x0;
    if ((round + 1) % 4 == 0) {
      const std::uint64_t inj = std::uint64_t(round + 1) / 4;
      x0 += ks[inj % 3];
      x1 += ks[(inj + 1) % 3];
      x1 += inj;
    }
  }
  return {x0, x1};
}

PrngKey PrngKey::from_seed(std::uint64_t seed) noexcept {
  return PrngKey({0, 0}).fold_in(seed);
}

PrngKey PrngKey::fold_in(std::uint64_t data) const noexcept {
  return PrngKey(threefry2x64(words_, {data, kTagFold}));
}

std::vector<PrngKey> PrngKey::split(std::size_t n) const {
  std::vector<PrngKey> keys;
  keys.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys.emplace_back(threefry2x64(words_, {std::uint64_t(i), kTagSplit}));
  }
  return keys;
}

RandomStream::result_type RandomStream::operator()() noexcept {
  if (buffered_ == 0) {
    buffer_ = threefry2x64(key_.words(), {counter_++, kTagStream});
    buffered_ = 2;
  }
  return buffer_[2 - buffered_--];
}

double RandomStream::uniform() noexcept {
  // (k + 0.5) / 2^53 never hits 0 or 1
  return (double((*this)() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() noexcept {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RandomStream::exponential() noexcept { return -std::log(uniform()); }

double RandomStream::gamma(double shape) noexcept {
  if (shape < 1.0) {
    // boost to shape + 1 and scale back by U^(1/shape)
    const double g = gamma(shape + 1.0);
    return g * std::pow(uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

Eigen::VectorXd RandomStream::normal_vector(Eigen::Index n) noexcept {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
  return z;
}

}  // namespace greylag
