#pragma once

#include <string>
#include <vector>

#include <json.hpp>

// Validator for the JSON-Schema subset used by the report schema:
// "type" (object, array, string, number, integer, boolean), "required",
// "properties", and a single-schema "items". Unknown keywords are ignored.
namespace testsupport {

inline void schema_check(const nlohmann::json& value,
                         const nlohmann::json& schema, const std::string& path,
                         std::vector<std::string>& errors) {
  if (schema.contains("type")) {
    const std::string t = schema["type"].get<std::string>();
    bool ok = true;
    if (t == "object")
      ok = value.is_object();
    else if (t == "array")
      ok = value.is_array();
    else if (t == "string")
      ok = value.is_string();
    else if (t == "boolean")
      ok = value.is_boolean();
    else if (t == "integer")
      ok = value.is_number_integer() || value.is_number_unsigned();
    else if (t == "number")
      ok = value.is_number();
    else
      errors.push_back(path + ": unsupported schema type \"" + t + "\"");
    if (!ok) {
      errors.push_back(path + ": expected " + t + ", got " +
                       std::string(value.type_name()));
      return;
    }
  }
  if (schema.contains("required") && value.is_object()) {
    for (const auto& k : schema["required"]) {
      const std::string key = k.get<std::string>();
      if (!value.contains(key))
        errors.push_back(path + ": missing required key \"" + key + "\"");
    }
  }
  if (schema.contains("properties") && value.is_object()) {
    for (const auto& [key, sub] : schema["properties"].items()) {
      if (value.contains(key))
        schema_check(value.at(key), sub, path + "." + key, errors);
    }
  }
  if (schema.contains("items") && value.is_array()) {
    const auto& sub = schema["items"];
    for (size_t i = 0; i < value.size(); ++i)
      schema_check(value[i], sub, path + "[" + std::to_string(i) + "]",
                   errors);
  }
}

inline std::vector<std::string> schema_errors(const nlohmann::json& value,
                                              const nlohmann::json& schema) {
  std::vector<std::string> errors;
  schema_check(value, schema, "$", errors);
  return errors;
}

}  // namespace testsupport
