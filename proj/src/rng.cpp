#include "mrp/rng.hpp"

#include "mrp/error.hpp"

namespace mrp {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the stream name
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h);
}

double sample_normal(Rng& rng, double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(rng);
}

double sample_uniform(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

std::size_t sample_index(Rng& rng, std::size_t n) {
  if (n == 0) throw Error(ErrorCode::invalid_argument, "sample_index: empty range");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  return dist(rng);
}

double sample_beta(Rng& rng, double mu, double nu) {
  if (!(mu > 0.0) || !(nu > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "sample_beta: parameters must be positive");
  }
  std::gamma_distribution<double> ga(mu, 1.0);
  std::gamma_distribution<double> gb(nu, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

}  // namespace mrp
