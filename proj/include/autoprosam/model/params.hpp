#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "autoprosam/core/autograd.hpp"
#include "autoprosam/io/archive.hpp"

namespace aps::model {

struct Parameter {
  std::string name;
  Var var;
  bool frozen = false;
  bool weight_decay = true;  // off for normalization affine and positional tables
};

struct ParamCounts {
  std::int64_t tunable = 0;
  std::int64_t frozen = 0;
  std::int64_t total() const { return tunable + frozen; }
};

// Named parameter store in insertion order. Frozen parameters are the
// inherited 2D weights; everything else is adapted during fine-tuning.
class ModelParams {
 public:
  Parameter& add(const std::string& name, Tensor init, bool frozen, bool weight_decay = true);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const Parameter& at(const std::string& name) const;
  Parameter& at(const std::string& name);
  const Var& var(const std::string& name) const { return at(name).var; }
  const Tensor& value(const std::string& name) const { return at(name).var.value(); }

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }
  std::size_t size() const { return params_.size(); }

  ParamCounts counts() const;
  // Counts restricted to names starting with prefix.
  ParamCounts counts(const std::string& prefix) const;
  void zero_grad();

  // Serializes every parameter (with frozen flags) as f64 entries.
  void write_to(io::Archive& archive) const;
  // Overwrites values from archive entries of identical name and shape.
  void load_values_from(const io::Archive& archive);

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Deterministic initializers for from-scratch parameters. Each draws from a
// generator seeded by (seed, name) so init does not depend on creation order.
std::mt19937_64 param_rng(std::uint64_t seed, const std::string& name);
Tensor init_uniform_fan_in(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, const std::string& name);

std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 1469598103934665603ULL);

}  // namespace aps::model
