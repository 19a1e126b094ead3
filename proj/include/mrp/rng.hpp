#ifndef MRP_RNG_HPP
#define MRP_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace mrp {

using Rng = std::mt19937_64;

/// Seed of the named sub-stream of `seed`. Each consumer (data, init, batch,
/// split, mixup, shift, encoder, ...) draws from its own stream so a change
/// in one consumer's draw count leaves the others untouched.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

inline Rng make_stream(std::uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

double sample_normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double sample_uniform(Rng& rng);
std::size_t sample_index(Rng& rng, std::size_t n);
/// Beta(mu, nu) via the ratio of two gamma draws.
double sample_beta(Rng& rng, double mu, double nu);

}  // namespace mrp

#endif  // MRP_RNG_HPP
