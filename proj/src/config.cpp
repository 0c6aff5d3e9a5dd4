#include "glad/config.hpp"

#include <algorithm>

namespace glad::config {

void FieldErrors::throw_if_any() const {
  if (errors_.empty()) return;
  std::string message = std::to_string(errors_.size()) + " schema violation(s)";
  for (const auto& e : errors_) message += "\n  " + e;
  throw Error(ErrorCode::config_error, message);
}

void reject_unknown(const Json& object, std::initializer_list<const char*> known,
                    const std::string& path, FieldErrors& errors) {
  if (!object.is_object()) {
    errors.add(path.empty() ? "<root>" : path, "expected an object");
    return;
  }
  for (const auto& [key, value] : object.items()) {
    const bool ok = std::any_of(known.begin(), known.end(),
                                [&key = key](const char* k) { return key == k; });
    if (!ok) errors.add(join_path(path, key), "unknown field");
  }
}

}  // namespace glad::config
