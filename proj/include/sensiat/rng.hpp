#pragma once

#include <cmath>
#include <cstdint>

#include "sensiat/common.hpp"

namespace sensiat {

// Counter-based stream: every draw is a pure function of
// (seed, arm, subject, purpose, counter), so streams are disjoint and
// insertion-stable across subjects and safe under any parallel schedule.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint32_t arm, std::uint32_t subject,
            std::uint32_t purpose)
      : key_(mix(mix(mix(seed ^ (0x9e3779b97f4a7c15ull * arm + 1)) ^
                     (0xbf58476d1ce4e5b9ull * subject + 1)) ^
                 (0x94d049bb133111ebull * purpose + 1))) {}

  std::uint64_t next_bits() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // uniform in (0, 1]
  double uniform() {
    return (static_cast<double>(next_bits() >> 11) + 1.0) * 0x1.0p-53;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  double normal() {
    double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double gamma(double shape);    // Marsaglia-Tsang, any shape > 0
  long poisson(double mean);     // log-space Knuth multiplication

  // negative binomial count: mean mu, variance mu + mu^2/kappa
  long negative_binomial(double mu, double kappa) {
    return poisson(gamma(kappa) * (mu / kappa));
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sensiat
