#include "hyperimts/common.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hyperimts {

double Rng::gauss(double mean, double sigma) {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  return mean + sigma * r * std::cos(2.0 * M_PI * u2);
}

double Rng::exponential(double rate) {
  double u = 1.0 - uniform();
  return -std::log(u) / rate;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw ContractError("uniform_int: n must be positive");
  return static_cast<std::uint64_t>(
      (static_cast<__uint128_t>(next_u64()) * n) >> 64);
}

double stable_sum(std::vector<double>& buf) {
  std::sort(buf.begin(), buf.end());
  double acc = 0.0;
  for (double v : buf) acc += v;
  return acc;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

}  // namespace hyperimts
