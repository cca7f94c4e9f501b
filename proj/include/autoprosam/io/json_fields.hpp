#pragma once

#include <set>
#include <string>

#include "json.hpp"

#include "autoprosam/core/errors.hpp"

namespace aps::io {

using Json = nlohmann::json;

// Reads fields from a JSON object, leaving defaults for absent keys and
// rejecting keys that were never asked for (call finish()).
class JsonFields {
 public:
  JsonFields(const Json& object, std::string context) : obj_(object), ctx_(std::move(context)) {
    if (!obj_.is_object()) throw ConfigError(ctx_ + ": expected an object");
  }

  template <typename T>
  JsonFields& get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return *this;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ctx_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  bool has(const std::string& key) const { return obj_.contains(key); }
  const Json* child(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  std::string path(const std::string& key) const { return ctx_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.contains(it.key())) throw ConfigError(ctx_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& obj_;
  std::string ctx_;
  std::set<std::string> seen_;
};

}  // namespace aps::io
