#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "meps/numcore/params.hpp"

namespace meps::num {

enum class UpdateRule { Sgd, Adam };

inline std::string to_string(UpdateRule r) { return r == UpdateRule::Sgd ? "sgd" : "adam"; }

inline UpdateRule update_rule_from_string(const std::string& s) {
  if (s == "sgd") return UpdateRule::Sgd;
  if (s == "adam") return UpdateRule::Adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerState {
  double learning_rate = 0.01;
  double weight_decay = 1e-4;
  UpdateRule rule = UpdateRule::Sgd;
  // Adam moments; sized lazily on the first step.
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long steps = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

namespace detail {

inline void require_grads(const ParameterSet& params) {
  for (const auto& e : params.entries()) {
    if (!e.tensor.has_grad()) {
      throw ContractError("parameter '" + e.name + "' has no gradient; was it reachable from the loss?");
    }
  }
}

}  // namespace detail

/// p <- p - lr * (grad + weight_decay * p), then grads are cleared.
inline void sgd_step(ParameterSet& params, OptimizerState& opt) {
  detail::require_grads(params);
  for (auto& e : params.entries()) {
    auto p = e.tensor.mutable_data();
    auto g = e.tensor.grad();
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= opt.learning_rate * (g[i] + opt.weight_decay * p[i]);
  }
  ++opt.steps;
  params.clear_grads();
}

/// Adam on the weight-decayed gradient grad + weight_decay * p.
inline void adam_step(ParameterSet& params, OptimizerState& opt) {
  detail::require_grads(params);
  auto& entries = params.entries();
  if (opt.first_moment.size() != entries.size()) {
    opt.first_moment.clear();
    opt.second_moment.clear();
    for (const auto& e : entries) {
      opt.first_moment.emplace_back(e.tensor.numel(), 0.0);
      opt.second_moment.emplace_back(e.tensor.numel(), 0.0);
    }
  }
  ++opt.steps;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.steps));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.steps));
  for (std::size_t t = 0; t < entries.size(); ++t) {
    auto p = entries[t].tensor.mutable_data();
    auto g = entries[t].tensor.grad();
    auto& m = opt.first_moment[t];
    auto& v = opt.second_moment[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + opt.weight_decay * p[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      p[i] -= opt.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.epsilon);
    }
  }
  params.clear_grads();
}

inline void optimizer_step(ParameterSet& params, OptimizerState& opt) {
  if (opt.rule == UpdateRule::Sgd) {
    sgd_step(params, opt);
  } else {
    adam_step(params, opt);
  }
}

}  // namespace meps::num
