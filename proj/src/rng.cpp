#include "twlm/rng.hpp"

#include <cmath>

namespace twlm {

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u is kept away from 0 so log() stays finite.
  double u = 0.0;
  do {
    u = uniform01();
  } while (u <= 0.0);
  const double v = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 2.0 * 3.14159265358979323846 * v;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal(double sd, double trunc_sds) {
  double z = 0.0;
  do {
    z = normal();
  } while (std::abs(z) > trunc_sds);
  return z * sd;
}

}  // namespace twlm
