#include "hydronet/random.hpp"

#include <cmath>
#include <numbers>

namespace hydronet {

double standard_normal(Xoshiro256& rng) {
  const double u1 = 1.0 - rng.uniform01();  // (0, 1]
  const double u2 = rng.uniform01();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace hydronet
