#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace dmest {

// xoshiro256++ seeded through splitmix64. Substreams are derived from a
// master seed plus a label and up to three indices, so the harness can hand
// out independent streams (parameter draw, sample draw, shard permutation,
// resampling, failure draws) without any sequencing constraints between them.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Unbiased integer in [0, bound); bound must be positive.
  std::uint64_t uniform_int(std::uint64_t bound);
  double uniform01();  // [0, 1)
  double uniform(double a, double b);
  bool bernoulli(double p);
  double normal();               // standard normal (Box-Muller)
  double gamma(double shape);    // Marsaglia-Tsang squeeze, shape > 0

 private:
  std::array<std::uint64_t, 4> state_;
};

std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                          std::uint64_t i0 = 0, std::uint64_t i1 = 0,
                          std::uint64_t i2 = 0);

inline Rng substream(std::uint64_t master, std::string_view label,
                     std::uint64_t i0 = 0, std::uint64_t i1 = 0,
                     std::uint64_t i2 = 0) {
  return Rng(derive_seed(master, label, i0, i1, i2));
}

// First `m` slots of a Fisher-Yates pass over [0, n); returned ascending.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m,
                                                    Rng& rng);

}  // namespace dmest
