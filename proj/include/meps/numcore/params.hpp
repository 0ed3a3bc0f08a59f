#pragma once

#include <json.hpp>

#include <string>
#include <utility>
#include <vector>

#include "meps/numcore/tensor.hpp"

namespace meps::num {

/// Ordered collection of named learnable leaves. Order is part of the
/// checkpoint format and of optimizer state alignment.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor t) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
    }
    t.set_requires_grad(true);
    entries_.push_back({std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.tensor;
    throw ManifestError("no parameter named '" + name + "'");
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void clear_grads() {
    for (auto& e : entries_) e.tensor.clear_grad();
  }

  // Deep copy of the current values (fresh leaves, no grads).
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& e : entries_) out.add(e.name, e.tensor.detach());
    return out;
  }

  // Overwrite values in place from another set with the same layout.
  void assign(const ParameterSet& other) {
    check_layout(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto dst = entries_[i].tensor.mutable_data();
      auto src = other.entries_[i].tensor.data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }

  void check_layout(const ParameterSet& other) const {
    if (other.size() != size()) {
      throw ManifestError("parameter count mismatch: " + std::to_string(other.size()) + " vs " +
                          std::to_string(size()));
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      const auto& a = entries_[i];
      const auto& b = other.entries_[i];
      if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) {
        throw ManifestError("parameter " + std::to_string(i) + " mismatch: " + a.name +
                            shape_str(a.tensor.shape()) + " vs " + b.name + shape_str(b.tensor.shape()));
      }
    }
  }

 private:
  std::vector<Entry> entries_;
};

inline constexpr int kParameterFormatVersion = 1;

/// Ordered (name, shape, row-major values) records.
inline nlohmann::json parameters_to_json(const ParameterSet& params) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& e : params.entries()) {
    auto values = e.tensor.data();
    records.push_back({{"name", e.name},
                       {"shape", e.tensor.shape()},
                       {"values", std::vector<double>(values.begin(), values.end())}});
  }
  return {{"format_version", kParameterFormatVersion}, {"parameters", std::move(records)}};
}

inline ParameterSet parameters_from_json(const nlohmann::json& doc) {
  if (!doc.contains("format_version") || doc.at("format_version") != kParameterFormatVersion) {
    throw ManifestError("unsupported parameter format version");
  }
  ParameterSet out;
  for (const auto& rec : doc.at("parameters")) {
    auto shape = rec.at("shape").get<Shape>();
    auto values = rec.at("values").get<std::vector<double>>();
    if (shape_numel(shape) != values.size()) {
      throw ManifestError("parameter '" + rec.at("name").get<std::string>() +
                          "' has inconsistent shape and value count");
    }
    out.add(rec.at("name").get<std::string>(), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace meps::num
