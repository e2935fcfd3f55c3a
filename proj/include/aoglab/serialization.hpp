#pragma once

// JSON mappings shared by the file formats, the CLI and the HTTP service.

#include "aoglab/error.hpp"
#include "aoglab/geometry.hpp"
#include "aoglab/tensor_store.hpp"

#include <json.hpp>

#include <string>

namespace aoglab {

using Json = nlohmann::json;

Json rect_to_json(const Rect& r);
Rect rect_from_json(const Json& j, const std::string& field);
Json point_to_json(const Vec2& p);
Vec2 point_from_json(const Json& j, const std::string& field);

Json to_json(const LayerGeometry& g);
LayerGeometry layer_geometry_from_json(const Json& j, const std::string& field);
Json to_json(const ImageRecord& r);
ImageRecord image_record_from_json(const Json& j, const std::string& field);
Json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const Json& j);

/// Typed field access that reports the JSON path on failure.
template <typename T>
T required(const Json& j, const char* key, const std::string& field) {
  const std::string path = field.empty() ? std::string(key) : field + "." + key;
  if (!j.is_object() || !j.contains(key)) throw ValidationError(path, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(path, "wrong type");
  }
}

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string content_hash(std::string_view bytes);

}  // namespace aoglab
