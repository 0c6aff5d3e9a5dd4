#pragma once

// JSON schema helpers. Readers collect every violation with its field path
// ("train.batch_size: must be >= 1") and raise them together.

#include <concepts>
#include <initializer_list>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "glad/error.hpp"

namespace glad::config {

using Json = nlohmann::json;

class FieldErrors {
 public:
  void add(const std::string& path, const std::string& message) {
    errors_.push_back(path + ": " + message);
  }
  bool empty() const { return errors_.empty(); }
  const std::vector<std::string>& messages() const { return errors_; }
  // Throws Error(config_error) listing all messages, one per line.
  void throw_if_any() const;

 private:
  std::vector<std::string> errors_;
};

inline std::string join_path(const std::string& parent, const std::string& key) {
  return parent.empty() ? key : parent + "." + key;
}

void reject_unknown(const Json& object, std::initializer_list<const char*> known,
                    const std::string& path, FieldErrors& errors);

namespace detail {

template <class T>
bool holds(const Json& value) {
  if constexpr (std::is_same_v<T, bool>) {
    return value.is_boolean();
  } else if constexpr (std::is_unsigned_v<T>) {
    return value.is_number_unsigned() ||
           (value.is_number_integer() && value.template get<long long>() >= 0);
  } else if constexpr (std::is_integral_v<T>) {
    return value.is_number_integer();
  } else if constexpr (std::is_floating_point_v<T>) {
    return value.is_number();
  } else if constexpr (std::is_same_v<T, std::string>) {
    return value.is_string();
  } else {
    return false;
  }
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_unsigned_v<T>) return "a non-negative integer";
  else if constexpr (std::is_integral_v<T>) return "an integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else return "a string";
}

}  // namespace detail

// Leaves `out` untouched when the key is absent; records an error when the
// present value has the wrong type.
template <class T>
void read(const Json& object, const char* key, const std::string& path, T& out,
          FieldErrors& errors) {
  if (!object.is_object() || !object.contains(key)) return;
  const Json& value = object.at(key);
  const std::string field = join_path(path, key);
  if (!detail::holds<T>(value)) {
    errors.add(field, std::string("expected ") + detail::type_name<T>());
    return;
  }
  out = value.template get<T>();
}

template <class T>
void read(const Json& object, const char* key, const std::string& path, std::vector<T>& out,
          FieldErrors& errors) {
  if (!object.is_object() || !object.contains(key)) return;
  const Json& value = object.at(key);
  const std::string field = join_path(path, key);
  if (!value.is_array()) {
    errors.add(field, "expected an array");
    return;
  }
  std::vector<T> parsed;
  for (std::size_t i = 0; i < value.size(); ++i) {
    if (!detail::holds<T>(value[i])) {
      errors.add(field + "[" + std::to_string(i) + "]",
                 std::string("expected ") + detail::type_name<T>());
      return;
    }
    parsed.push_back(value[i].template get<T>());
  }
  out = std::move(parsed);
}

}  // namespace glad::config
