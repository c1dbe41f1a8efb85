#include "nvi/rng.hpp"

#include <random>

namespace nvi::rng {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t combine(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ (splitmix64(b) + 0x632be59bd9b4e019ULL)); }

Stream::result_type Stream::operator()() { return splitmix64(combine(key_, counter_++)); }

Stream stream(std::uint64_t seed, Purpose purpose, std::uint64_t iteration, std::uint64_t level,
              std::uint64_t particle) {
  std::uint64_t key = splitmix64(seed);
  key = combine(key, static_cast<std::uint64_t>(purpose));
  key = combine(key, iteration);
  key = combine(key, level);
  key = combine(key, particle);
  return Stream(key);
}

ad::Matrix normal_noise(std::uint64_t seed, Purpose purpose, std::uint64_t iteration, std::uint64_t level,
                        Eigen::Index rows, Eigen::Index cols) {
  ad::Matrix out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    Stream s = stream(seed, purpose, iteration, level, static_cast<std::uint64_t>(r));
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index c = 0; c < cols; ++c) {
      out(r, c) = n(s);
    }
  }
  return out;
}

double uniform01(Stream& s) { return std::uniform_real_distribution<double>(0.0, 1.0)(s); }

}  // namespace nvi::rng
