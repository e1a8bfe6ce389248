#pragma once

#include <set>
#include <string>

#include "cwm/error.hpp"
#include "json.hpp"

namespace cwm {

using Json = nlohmann::ordered_json;

/// Strict reader over one JSON object: every key must be consumed, types must
/// match. Absent keys keep the caller's default. Failures raise ConfigError.
class JsonFields {
 public:
  JsonFields(const Json& obj, std::string context) : obj_(obj), context_(std::move(context)) {
    if (!obj_.is_object()) fail("expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("bad value for '") + key + "': " + e.what());
    }
  }

  /// Nested object, or nullptr when absent.
  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.contains(k)) fail("unknown key '" + k + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::ConfigError, context_ + ": " + msg);
  }

  const std::string& context() const { return context_; }

 private:
  const Json& obj_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace cwm
