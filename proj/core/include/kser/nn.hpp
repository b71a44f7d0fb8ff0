#pragma once

#include "kser/autograd.hpp"
#include "kser/rng.hpp"

#include <string>
#include <vector>

namespace kser {

/// Affine map x W + b with W: in x out, b: 1 x out.
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;
  /// Weights uniform in +-1/sqrt(in), zero bias.
  Dense(const std::string& name, long in, long out, Rng& rng);

  long in_width() const { return weight.value.rows(); }
  long out_width() const { return weight.value.cols(); }

  Var operator()(Graph& g, Var x) {
    return add_row_bias(matmul(x, g.param(weight)), g.param(bias));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Weight matrix without bias, uniform in +-1/sqrt(rows).
Parameter uniform_fan_in(const std::string& name, long rows, long cols, Rng& rng);

}  // namespace kser
