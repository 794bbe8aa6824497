// Deterministic random number generation.
//
// Every stochastic component of the pipeline (init, masking, negative
// sampling, dropout, shuffles) draws from an Rng seeded through explicit
// derivation, so a (seed, data, config) triple fully determines a run.
// Distribution sampling is hand-rolled on top of mt19937_64 because the
// std distribution objects are implementation-defined and would break
// byte-level reproducibility across standard libraries.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace seqrec {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform integer in [lo, hi], both inclusive. Unbiased via rejection.
  int uniform_int(int lo, int hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int>(x % range);
  }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform_int(0, static_cast<int>(n) - 1));
  }

  /// Uniform double in [0, 1).
  double uniform_real() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  bool bernoulli(double p) { return uniform_real() < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  /// Normal truncated to [-limit, limit] standard deviations (resampling).
  double truncated_normal(double limit = 2.0) {
    double z = normal();
    while (std::abs(z) > limit) z = normal();
    return z;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent generator for a named sub-stream.
  Rng derive(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (stream + 1) * 0x9E3779B97F4A7C15ULL));
  }

  std::string state_string() const {
    std::ostringstream os;
    os << seed_ << ' ' << engine_;
    return os.str();
  }

  static Rng from_state(const std::string& s) {
    std::istringstream is(s);
    std::uint64_t seed = 0;
    is >> seed;
    Rng r(seed);
    is >> r.engine_;
    return r;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace seqrec
