#pragma once

#include <vector>

#include "meps/geometry/geodesic.hpp"
#include "meps/geometry/synth.hpp"
#include "meps/model/config.hpp"
#include "meps/numcore/rng.hpp"

namespace meps::model {

/// Reference shape with labelled training and held-out shapes.
struct Dataset {
  geo::Mesh reference;
  std::vector<geo::Mesh> train;
  std::vector<geo::Mesh> test;
};

/// Template sphere plus `deformations` deformed copies. Deformation s uses
/// seed stream_seed(data.seed, s); the template itself is the first training
/// shape and the last `held_out` copies form the test split.
inline Dataset synthetic_dataset(const DataConfig& data) {
  data.validate();
  Dataset out;
  out.reference = geo::sphere_template(data.vertices, data.synth.radius);
  const double amplitude = data.deform_scale * geo::shape_scale(out.reference).value;
  out.train.push_back(out.reference);
  const auto n_train = data.deformations - data.held_out;
  for (std::size_t s = 0; s < data.deformations; ++s) {
    auto pair = geo::synth_pair(num::stream_seed(data.seed, s), data.vertices, amplitude, data.synth);
    (s < n_train ? out.train : out.test).push_back(std::move(pair.deformed));
  }
  return out;
}

}  // namespace meps::model
