#include "interrogate/schema.hpp"

namespace interrogate {

using nlohmann::json;

namespace {

bool type_matches(const json& doc, const std::string& type) {
  if (type == "object") return doc.is_object();
  if (type == "array") return doc.is_array();
  if (type == "string") return doc.is_string();
  if (type == "number") return doc.is_number();
  if (type == "integer") return doc.is_number_integer() ||
                                 doc.is_number_unsigned();
  if (type == "boolean") return doc.is_boolean();
  if (type == "null") return doc.is_null();
  return false;
}

}  // namespace

std::string schema_validate(const json& doc, const json& schema,
                            const std::string& path) {
  if (schema.contains("type")) {
    const auto& t = schema.at("type");
    bool ok = false;
    if (t.is_array()) {
      for (const auto& v : t)
        ok = ok || type_matches(doc, v.get<std::string>());
    } else {
      ok = type_matches(doc, t.get<std::string>());
    }
    if (!ok) return path + ": expected type " + t.dump();
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& v : schema.at("enum")) ok = ok || v == doc;
    if (!ok) return path + ": value not in enum";
  }
  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const auto& key : schema.at("required"))
        if (!doc.contains(key.get<std::string>()))
          return path + ": missing required key " + key.get<std::string>();
    }
    const json props = schema.value("properties", json::object());
    for (const auto& [key, value] : doc.items()) {
      auto it = props.find(key);
      if (it != props.end()) {
        std::string err = schema_validate(value, *it, path + "." + key);
        if (!err.empty()) return err;
      } else if (schema.value("additionalProperties", true) == false) {
        return path + ": unexpected key " + key;
      }
    }
  }
  if (doc.is_array() && schema.contains("items")) {
    const json& items = schema.at("items");
    for (size_t i = 0; i < doc.size(); ++i) {
      std::string err =
          schema_validate(doc[i], items, path + "[" + std::to_string(i) + "]");
      if (!err.empty()) return err;
    }
  }
  return "";
}

}  // namespace interrogate
