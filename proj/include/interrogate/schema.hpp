#pragma once

#include <string>

#include "json.hpp"

namespace interrogate {

// Minimal structural validator for the schemas shipped under schemas/.
// Supports the subset those schemas use: type, properties, required,
// items, enum, additionalProperties (boolean form).
// Returns an empty string on success, else a path-prefixed reason.
std::string schema_validate(const nlohmann::json& doc,
                            const nlohmann::json& schema,
                            const std::string& path = "$");

}  // namespace interrogate
