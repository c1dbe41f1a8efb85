#ifndef NVI_RNG_HPP
#define NVI_RNG_HPP

#include <cstdint>
#include <limits>

#include "nvi/tape.hpp"

namespace nvi::rng {

/// Counter-based random bit generator. A stream is fully determined by its
/// coordinates, so results do not depend on the order in which streams are
/// consumed. Satisfies UniformRandomBitGenerator for use with <random>.
class Stream {
 public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) : key_(key) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()();

  [[nodiscard]] std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t combine(std::uint64_t a, std::uint64_t b);

/// What a stream is used for; keeps e.g. resampling draws independent of noise.
enum class Purpose : std::uint64_t {
  noise = 1,
  resample = 2,
  init = 3,
  simulate = 4,
  discrete = 5,
  batch = 6,
  misc = 7,
};

/// Stream at coordinates (seed, purpose, iteration, level, particle).
Stream stream(std::uint64_t seed, Purpose purpose, std::uint64_t iteration = 0, std::uint64_t level = 0,
              std::uint64_t particle = 0);

/// S x d standard normal noise with one counter stream per particle row.
ad::Matrix normal_noise(std::uint64_t seed, Purpose purpose, std::uint64_t iteration, std::uint64_t level,
                        Eigen::Index rows, Eigen::Index cols);

/// One uniform draw in [0, 1).
double uniform01(Stream& s);

}  // namespace nvi::rng

#endif
