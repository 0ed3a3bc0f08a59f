#pragma once

#include <cmath>
#include <string>

#include "meps/numcore/ops.hpp"
#include "meps/numcore/params.hpp"
#include "meps/numcore/rng.hpp"

namespace meps::layers {

using num::Tensor;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) fill.
inline Tensor uniform_fan_in(num::Rng& rng, num::Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(num::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor normal_fill(num::Rng& rng, num::Shape shape, double stddev) {
  std::vector<double> v(num::shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

/// Fully connected layer y = x W + b with W stored [in x out].
struct Linear {
  std::size_t in = 0, out = 0;
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, num::Rng& rng) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = uniform_fan_in(rng, {in, out}, in);
    l.bias = uniform_fan_in(rng, {out}, in);
    return l;
  }

  void register_params(num::ParameterSet& params, const std::string& prefix) {
    weight = params.add(prefix + ".weight", weight);
    bias = params.add(prefix + ".bias", bias);
  }

  Tensor forward(const Tensor& x) const { return num::add_bias(num::matmul(x, weight), bias); }
};

}  // namespace meps::layers
