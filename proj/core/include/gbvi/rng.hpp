#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>

namespace gbvi {

/// Counter-based random stream. A stream is identified by a 64-bit key;
/// substream(i) derives a new independent stream from (key, i) without
/// consuming state, so sample i of a Monte-Carlo loop can be generated
/// by any worker and the result never depends on scheduling.
///
/// The generator is the splitmix64 sequence over an incrementing counter,
/// which is enough for the Monte-Carlo workloads here and makes every
/// draw a pure function of (key, position).
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : key_(mix(key ^ kKeyTag)), counter_(0) {}

  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : RngStream(mix(mix(seed) ^ mix(stream_id ^ kStreamTag))) {}

  /// Derive an independent stream keyed by (this stream's identity, index).
  RngStream substream(std::uint64_t index) const {
    return RngStream(key_, index);
  }

  std::uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

  /// Uniform draw in the open interval (0, 1).
  double next_uniform() {
    // 53 random bits; +0.5 keeps the value strictly inside (0,1).
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal draw via Box-Muller (no pair caching, so every draw
  /// consumes exactly two uniforms and the sequence is position-stable).
  double next_gaussian() {
    const double r = std::sqrt(-2.0 * std::log(next_uniform()));
    const double theta = 2.0 * std::numbers::pi * next_uniform();
    return r * std::cos(theta);
  }

  Eigen::VectorXd next_gaussian_vector(Eigen::Index n) {
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = next_gaussian();
    return out;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kKeyTag = 0xA02B8D5F61C3E749ull;
  static constexpr std::uint64_t kStreamTag = 0x5851F42D4C957F2Dull;

  static std::uint64_t mix(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace gbvi
