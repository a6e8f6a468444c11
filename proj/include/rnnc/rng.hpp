#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rnnc {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives one stream key from a seed plus structural tags (level, block, ...),
// so every sampling block owns an independent stream and sweep order or
// parallelism cannot perturb draw order elsewhere.
inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a = 0,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t k = splitmix64(seed);
  k = splitmix64(k ^ (a + 0x632be59bd9b4e019ULL));
  k = splitmix64(k ^ (b + 0x9e3779b97f4a7c15ULL));
  k = splitmix64(k ^ (c + 0xc2b2ae3d27d4eb4fULL));
  return k;
}

// Deterministic stream with hand-rolled transforms: the distributions in
// <random> are implementation-defined, which would break the byte-exact
// reproducibility contract across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t key) : eng_(splitmix64(key)) {}

  // uniform on (0, 1]
  double uniform() {
    return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1p-53;
  }

  // standard normal, Box-Muller; consumes exactly two uniforms per call
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rnnc
