#include "dcfl/random.hpp"

#include <cmath>

#include "dcfl/error.hpp"

namespace dcfl {

std::vector<double> random_unit_vector(std::size_t dim, Rng& rng) {
  if (dim == 0) throw DimensionError("random_unit_vector: zero dimension");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double ss = 0.0;
  do {
    ss = 0.0;
    for (double& x : v) {
      x = normal(rng);
      ss += x * x;
    }
  } while (ss < 1e-24);
  const double inv = 1.0 / std::sqrt(ss);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace dcfl
