#include "autoprosam/model/params.hpp"

#include <cmath>

#include "autoprosam/core/errors.hpp"

namespace aps::model {

Parameter& ModelParams::add(const std::string& name, Tensor init, bool frozen, bool weight_decay) {
  if (index_.contains(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_[name] = params_.size();
  params_.push_back(Parameter{name, leaf(std::move(init), true), frozen, weight_decay});
  return params_.back();
}

const Parameter& ModelParams::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

Parameter& ModelParams::at(const std::string& name) {
  return const_cast<Parameter&>(static_cast<const ModelParams&>(*this).at(name));
}

ParamCounts ModelParams::counts() const { return counts(""); }

ParamCounts ModelParams::counts(const std::string& prefix) const {
  ParamCounts c;
  for (const auto& p : params_) {
    if (!p.name.starts_with(prefix)) continue;
    (p.frozen ? c.frozen : c.tunable) += p.var.numel();
  }
  return c;
}

void ModelParams::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

void ModelParams::write_to(io::Archive& archive) const {
  for (const auto& p : params_) archive.put(p.name, p.var.value(), io::DType::F64, p.frozen);
}

void ModelParams::load_values_from(const io::Archive& archive) {
  for (auto& p : params_) {
    const auto& e = archive.get(p.name);
    if (e.shape() != p.var.shape()) {
      throw DataError("parameter '" + p.name + "' has shape " + shape_to_string(e.shape()) + " in archive, expected " +
                      shape_to_string(p.var.shape()));
    }
    p.var.mutable_value() = e.values;
  }
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t h) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 param_rng(std::uint64_t seed, const std::string& name) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(fnv1a64(name)), static_cast<std::uint32_t>(fnv1a64(name) >> 32)};
  return std::mt19937_64(seq);
}

Tensor init_uniform_fan_in(const Shape& shape, std::int64_t fan_in, std::uint64_t seed, const std::string& name) {
  auto rng = param_rng(seed, name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace aps::model
