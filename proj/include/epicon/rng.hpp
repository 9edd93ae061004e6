#pragma once

#include <cstdint>

namespace epicon {

/// Inverse of the standard normal CDF on (0,1); rational approximation with
/// |relative error| < 1.2e-9.
double inverse_normal_cdf(double p);

/// Splittable 64-bit generator built on the splitmix64 finalizer.
///
/// Child streams are derived from the stream's origin seed and a child index,
/// never from consumed state, so per-trajectory / per-replication streams are
/// reproducible regardless of draw order or thread scheduling.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), state_(seed) {}

  /// Independent stream addressed by (origin seed, index).
  RngStream child(std::uint64_t index) const;

  std::uint64_t next_u64();

  /// Uniform on the open interval (0,1).
  double next_double();

  /// Standard normal via inverse-CDF transform. Deterministic given the seed.
  double next_normal();

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace epicon
