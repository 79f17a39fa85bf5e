#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace gttt {

// Deterministic splitmix64 generator. Every random draw in the project goes
// through this type, with hand-rolled distributions, so results are
// reproducible bit-for-bit from a root seed on any platform.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();

    // Uniform in [0, 1).
    double uniform01();

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Standard normal via Box-Muller.
    double normal();

    // Uniform over {0, ..., n-1}; n must be > 0.
    std::size_t uniform_index(std::size_t n);

    // k distinct indices from {0, ..., n-1}, returned ascending.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named substream derivation: the same (root, stream) pair always yields the
// same seed, distinct names yield decorrelated seeds. This is how one root
// seed fans out into split/init/selection/oracle/dropedge streams.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index);

}  // namespace gttt
