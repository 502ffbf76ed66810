#pragma once

#include <set>
#include <string>

#include <fmt/format.h>
#include <json.hpp>

#include "lidarlabel/model.hpp"

namespace lidarlabel::detail {

// Copies j[key] into out when present, and rejects keys not in `allowed`.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw InputError(where_ + " must be a JSON object");
  }
  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError(fmt::format("{}.{}: {}", where_, key, e.what()));
    }
  }
  const nlohmann::json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw InputError(fmt::format("{}: unknown key '{}'", where_, k));
    }
  }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace lidarlabel::detail
