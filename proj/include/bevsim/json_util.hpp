// Copyright 2026 The bevsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>

#include "bevsim/common.hpp"
#include "json.hpp"

namespace bevsim {

using json = nlohmann::json;

// Reads optional fields from a JSON object and rejects any key that was not
// asked for, naming it and the section it appeared in.
class FieldReader {
 public:
  FieldReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    require(j_.is_object(), "config section '{}' must be a JSON object", section_);
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail("config key '{}.{}': {}", section_, key, e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& sub(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) fail("unknown config key '{}.{}'", section_, key);
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace bevsim
