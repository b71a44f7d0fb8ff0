#include "kser/nn.hpp"

#include <cmath>

namespace kser {

Parameter uniform_fan_in(const std::string& name, long rows, long cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  Mat w(rows, cols);
  for (long i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  return Parameter(name, std::move(w));
}

Dense::Dense(const std::string& name, long in, long out, Rng& rng)
    : weight(uniform_fan_in(name + ".weight", in, out, rng)),
      bias(name + ".bias", Mat::Zero(1, out)) {}

}  // namespace kser
