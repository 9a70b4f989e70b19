#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace splitplot {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t s = seed;
  std::uint64_t a = splitmix64(s);
  s = a ^ stream_id;
  return splitmix64(s);
}

}  // namespace detail

// Seeded random stream. Identical (seed, stream_id) pairs reproduce the same
// draw sequence bit for bit; distinct stream_ids give statistically
// independent streams. Each concurrent task must own its stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id),
        engine_(detail::mix_seed(seed, stream_id)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  // Derives an independent stream; deterministic in (seed, stream_id, id).
  RngStream substream(std::uint64_t id) const {
    std::uint64_t s = stream_id_;
    std::uint64_t h = detail::splitmix64(s);
    return RngStream(seed_, h ^ (id * 0x9e3779b97f4a7c15ULL + 1));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n).
  std::uint64_t bounded(std::uint64_t n) {
    if (n < 2) return 0;
    const std::uint64_t min = (-n) % n;  // 2^64 mod n
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r < min);
    return r % n;
  }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; the spare draw is cached.
  double standard_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double variance) {
    if (variance < 0.0) throw std::domain_error("normal: negative variance");
    return mean + std::sqrt(variance) * standard_normal();
  }

  // Exact Poisson sampler: inversion by sequential search for lambda <= 30,
  // additive splitting Poisson(l) = Poisson(l/2) + Poisson(l - l/2) above.
  long poisson(double lambda) {
    if (lambda < 0.0 || !std::isfinite(lambda))
      throw std::domain_error("poisson: invalid rate");
    if (lambda == 0.0) return 0;
    if (lambda > 30.0) {
      const double half = lambda / 2.0;
      return poisson(half) + poisson(lambda - half);
    }
    double p = std::exp(-lambda);
    double cum = p;
    long k = 0;
    const double u = uniform01();
    while (u > cum && p > 0.0) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cum += p;
    }
    return k;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace splitplot
