#pragma once

#include <vector>

#include "meps/numcore/rng.hpp"
#include "meps/numcore/tensor.hpp"

namespace meps::testing {

inline num::Tensor random_tensor(num::Rng& rng, num::Shape shape, double scale = 1.0,
                                 bool requires_grad = false) {
  std::vector<double> v(num::shape_numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return num::Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace meps::testing
