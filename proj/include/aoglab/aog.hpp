#pragma once

#include "aoglab/geometry.hpp"
#include "aoglab/serialization.hpp"
#include "aoglab/tensor_store.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace aoglab {

struct Cell {
  int x{0};
  int y{0};
  bool operator==(const Cell&) const = default;
};

/// Inclusive cell window [x0, x1] x [y0, y1].
struct CellWindow {
  int x0{0}, y0{0}, x1{-1}, y1{-1};
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool contains(Cell c) const { return c.x >= x0 && c.x <= x1 && c.y >= y0 && c.y <= y1; }
  std::size_t size() const { return width() > 0 && height() > 0 ? std::size_t(width()) * height() : 0; }
};

/// Square window of half-extent `half` around `center`, clipped to a grid.
CellWindow clipped_window(Cell center, int half, int grid_w, int grid_h);

/// Side of the default deformation range: a third of the grid side, rounded.
int default_deform_side(int grid_side);
/// floor(default_deform_side / 2), using the shorter grid side.
int default_half_extent(const LayerGeometry& g);

/// OR node over the units of one channel inside a square deformation range.
struct LatentPattern {
  std::string pattern_id;
  std::string layer_id;
  int channel{0};
  Cell deform_center;         ///< p(R_V), cells
  int deform_half_extent{0};  ///< cells
  Vec2 displacement{0, 0};    ///< pattern position -> template center, pixels
  bool active{true};

  /// R_V clipped to the layer grid.
  CellWindow deformation_range(const LayerGeometry& g) const {
    return clipped_window(deform_center, deform_half_extent, g.grid_w, g.grid_h);
  }
  bool operator==(const LatentPattern&) const = default;
};

struct BoxSize {
  double w_px{0};
  double h_px{0};
  bool operator==(const BoxSize&) const = default;
};

/// AND node: sums the scores of its latent patterns.
struct PartTemplate {
  std::string template_id;
  std::vector<LatentPattern> patterns;
  BoxSize canonical_box;

  std::size_t active_count() const;
  bool operator==(const PartTemplate&) const = default;
};

struct AogConstants {
  double lambda_def{1.0 / 3.0};
  double lambda_geo{5.0};
  bool operator==(const AogConstants&) const = default;
};

/// Root OR node over alternative part templates.
struct SemanticPartAOG {
  std::string part_name;
  std::vector<PartTemplate> templates;
  AogConstants constants;
  Json provenance = Json::object();

  /// Throws ValidationError naming the offending field.
  void validate() const;
  /// Additionally checks layer ids, channels and deformation centers against the geometry.
  void validate_against(std::span<const LayerGeometry> geometries) const;

  const LatentPattern& pattern(std::string_view pattern_id) const;
  const PartTemplate& template_of(std::string_view pattern_id) const;
  std::size_t active_count() const;
  bool operator==(const SemanticPartAOG& o) const {
    return part_name == o.part_name && templates == o.templates && constants == o.constants && provenance == o.provenance;
  }
};

Json to_json(const SemanticPartAOG& aog);
SemanticPartAOG aog_from_json(const Json& j);
void save_aog(const SemanticPartAOG& aog, const std::filesystem::path& path);
SemanticPartAOG load_aog(const std::filesystem::path& path);
/// Hash of the canonical JSON form; changes whenever any field (including an active flag) does.
std::string aog_hash(const SemanticPartAOG& aog);

/// Soft removal: clears the active flag. Unknown ids throw NotFoundError.
SemanticPartAOG prune_pattern(SemanticPartAOG aog, std::string_view pattern_id);
SemanticPartAOG restore_pattern(SemanticPartAOG aog, std::string_view pattern_id);

struct PatternAssignment {
  std::string pattern_id;
  std::string layer_id;
  int channel{0};
  Cell unit;         ///< chosen unit (x, y)
  Vec2 unit_center;  ///< p(Lambda_V), pre-clip
  Rect unit_region;  ///< Lambda_V, clipped receptive field
  double response{0};
  double deform_penalty{0};
  double geo_penalty{0};
  double contribution{0};
  bool operator==(const PatternAssignment&) const = default;
};

/// One parse: the selected template, part region and per-pattern unit choices.
struct ParseTree {
  std::string image_id;
  std::string template_id;
  int template_index{0};
  Vec2 part_center{0, 0};
  Rect part_region;  ///< Lambda_U
  double total_score{0};
  std::vector<PatternAssignment> assignments;

  const PatternAssignment& assignment(std::string_view pattern_id) const;
  bool operator==(const ParseTree&) const = default;
};

Json to_json(const ParseTree& tree);
ParseTree parse_tree_from_json(const Json& j);

}  // namespace aoglab
