#include "aoglab/aog.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace aoglab {

CellWindow clipped_window(Cell center, int half, int grid_w, int grid_h) {
  return {std::max(0, center.x - half), std::max(0, center.y - half), std::min(grid_w - 1, center.x + half),
          std::min(grid_h - 1, center.y + half)};
}

int default_deform_side(int grid_side) { return std::max(1, int(std::lround(grid_side / 3.0))); }

int default_half_extent(const LayerGeometry& g) { return default_deform_side(std::min(g.grid_h, g.grid_w)) / 2; }

std::size_t PartTemplate::active_count() const {
  return std::size_t(std::count_if(patterns.begin(), patterns.end(), [](const LatentPattern& p) { return p.active; }));
}

std::size_t SemanticPartAOG::active_count() const {
  std::size_t n = 0;
  for (const auto& t : templates) n += t.active_count();
  return n;
}

void SemanticPartAOG::validate() const {
  if (templates.empty()) throw ValidationError("templates", "at least one template required");
  if (!(constants.lambda_def > 0)) throw ValidationError("constants.lambda_def", "must be positive");
  if (!(constants.lambda_geo > 0)) throw ValidationError("constants.lambda_geo", "must be positive");
  std::set<std::string> template_ids;
  std::set<std::string> pattern_ids;
  for (std::size_t t = 0; t < templates.size(); ++t) {
    const PartTemplate& tpl = templates[t];
    const std::string tf = "templates[" + std::to_string(t) + "]";
    if (tpl.template_id.empty()) throw ValidationError(tf + ".template_id", "must be nonempty");
    if (!template_ids.insert(tpl.template_id).second)
      throw ValidationError(tf + ".template_id", "duplicate template id '" + tpl.template_id + "'");
    if (!(tpl.canonical_box.w_px > 0) || !(tpl.canonical_box.h_px > 0))
      throw ValidationError(tf + ".canonical_box", "must be positive");
    for (std::size_t p = 0; p < tpl.patterns.size(); ++p) {
      const LatentPattern& pat = tpl.patterns[p];
      const std::string pf = tf + ".patterns[" + std::to_string(p) + "]";
      if (pat.pattern_id.empty()) throw ValidationError(pf + ".pattern_id", "must be nonempty");
      // Pattern ids are used as global handles by sessions, so uniqueness is AOG-wide.
      if (!pattern_ids.insert(pat.pattern_id).second)
        throw ValidationError(pf + ".pattern_id", "duplicate pattern id '" + pat.pattern_id + "'");
      if (pat.layer_id.empty()) throw ValidationError(pf + ".layer_id", "must be nonempty");
      if (pat.channel < 0) throw ValidationError(pf + ".channel", "must be >= 0");
      if (pat.deform_center.x < 0 || pat.deform_center.y < 0)
        throw ValidationError(pf + ".deform_center", "must lie in the grid");
      if (pat.deform_half_extent < 0) throw ValidationError(pf + ".deform_half_extent_cells", "must be >= 0");
      if (!pat.displacement.allFinite()) throw ValidationError(pf + ".displacement", "must be finite");
    }
  }
}

void SemanticPartAOG::validate_against(std::span<const LayerGeometry> geometries) const {
  validate();
  for (std::size_t t = 0; t < templates.size(); ++t)
    for (std::size_t p = 0; p < templates[t].patterns.size(); ++p) {
      const LatentPattern& pat = templates[t].patterns[p];
      const std::string pf = "templates[" + std::to_string(t) + "].patterns[" + std::to_string(p) + "]";
      auto g = std::find_if(geometries.begin(), geometries.end(), [&](const LayerGeometry& g) { return g.layer_id == pat.layer_id; });
      if (g == geometries.end()) throw ValidationError(pf + ".layer_id", "unknown layer '" + pat.layer_id + "'");
      if (pat.channel >= g->channels) throw ValidationError(pf + ".channel", "exceeds the layer's channel count");
      if (pat.deform_center.x >= g->grid_w || pat.deform_center.y >= g->grid_h)
        throw ValidationError(pf + ".deform_center", "must lie in the grid");
    }
}

const LatentPattern& SemanticPartAOG::pattern(std::string_view pattern_id) const {
  for (const auto& t : templates)
    for (const auto& p : t.patterns)
      if (p.pattern_id == pattern_id) return p;
  throw NotFoundError("unknown pattern '" + std::string(pattern_id) + "'");
}

const PartTemplate& SemanticPartAOG::template_of(std::string_view pattern_id) const {
  for (const auto& t : templates)
    for (const auto& p : t.patterns)
      if (p.pattern_id == pattern_id) return t;
  throw NotFoundError("unknown pattern '" + std::string(pattern_id) + "'");
}

namespace {

SemanticPartAOG set_active(SemanticPartAOG aog, std::string_view pattern_id, bool active) {
  for (auto& t : aog.templates)
    for (auto& p : t.patterns)
      if (p.pattern_id == pattern_id) {
        p.active = active;
        return aog;
      }
  throw NotFoundError("unknown pattern '" + std::string(pattern_id) + "'");
}

}  // namespace

SemanticPartAOG prune_pattern(SemanticPartAOG aog, std::string_view pattern_id) { return set_active(std::move(aog), pattern_id, false); }

SemanticPartAOG restore_pattern(SemanticPartAOG aog, std::string_view pattern_id) { return set_active(std::move(aog), pattern_id, true); }

Json to_json(const SemanticPartAOG& aog) {
  Json templates = Json::array();
  for (const auto& t : aog.templates) {
    Json patterns = Json::array();
    for (const auto& p : t.patterns)
      patterns.push_back({{"pattern_id", p.pattern_id},
                          {"layer_id", p.layer_id},
                          {"channel", p.channel},
                          {"deform_center", {{"x_cell", p.deform_center.x}, {"y_cell", p.deform_center.y}}},
                          {"deform_half_extent_cells", p.deform_half_extent},
                          {"displacement", {{"dx_px", p.displacement.x()}, {"dy_px", p.displacement.y()}}},
                          {"active", p.active}});
    templates.push_back({{"template_id", t.template_id},
                         {"canonical_box", {{"w_px", t.canonical_box.w_px}, {"h_px", t.canonical_box.h_px}}},
                         {"patterns", patterns}});
  }
  return {{"aog_version", 1},
          {"part_name", aog.part_name},
          {"constants", {{"lambda_def", aog.constants.lambda_def}, {"lambda_geo", aog.constants.lambda_geo}}},
          {"provenance", aog.provenance},
          {"templates", templates}};
}

SemanticPartAOG aog_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("", "AOG must be a JSON object");
  if (required<int>(j, "aog_version", "") != 1) throw ValidationError("aog_version", "unsupported version");
  SemanticPartAOG aog;
  aog.part_name = required<std::string>(j, "part_name", "");
  if (j.contains("constants")) {
    aog.constants.lambda_def = required<double>(j.at("constants"), "lambda_def", "constants");
    aog.constants.lambda_geo = required<double>(j.at("constants"), "lambda_geo", "constants");
  }
  if (j.contains("provenance")) aog.provenance = j.at("provenance");
  if (!j.contains("templates") || !j.at("templates").is_array()) throw ValidationError("templates", "missing array");
  const Json& templates = j.at("templates");
  for (std::size_t t = 0; t < templates.size(); ++t) {
    const std::string tf = "templates[" + std::to_string(t) + "]";
    const Json& jt = templates[t];
    PartTemplate tpl;
    tpl.template_id = required<std::string>(jt, "template_id", tf);
    const Json box = required<Json>(jt, "canonical_box", tf);
    tpl.canonical_box = {required<double>(box, "w_px", tf + ".canonical_box"), required<double>(box, "h_px", tf + ".canonical_box")};
    const Json patterns = required<Json>(jt, "patterns", tf);
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      const std::string pf = tf + ".patterns[" + std::to_string(p) + "]";
      const Json& jp = patterns[p];
      LatentPattern pat;
      pat.pattern_id = required<std::string>(jp, "pattern_id", pf);
      pat.layer_id = required<std::string>(jp, "layer_id", pf);
      pat.channel = required<int>(jp, "channel", pf);
      const Json dc = required<Json>(jp, "deform_center", pf);
      pat.deform_center = {required<int>(dc, "x_cell", pf + ".deform_center"), required<int>(dc, "y_cell", pf + ".deform_center")};
      pat.deform_half_extent = required<int>(jp, "deform_half_extent_cells", pf);
      const Json d = required<Json>(jp, "displacement", pf);
      pat.displacement = {required<double>(d, "dx_px", pf + ".displacement"), required<double>(d, "dy_px", pf + ".displacement")};
      pat.active = jp.contains("active") ? required<bool>(jp, "active", pf) : true;
      tpl.patterns.push_back(std::move(pat));
    }
    aog.templates.push_back(std::move(tpl));
  }
  aog.validate();
  return aog;
}

void save_aog(const SemanticPartAOG& aog, const std::filesystem::path& path) {
  aog.validate();
  write_text_file(path, to_json(aog).dump(2) + "\n");
}

SemanticPartAOG load_aog(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError("AOG " + path.string() + ": " + e.what());
  }
  return aog_from_json(j);
}

std::string aog_hash(const SemanticPartAOG& aog) { return content_hash(to_json(aog).dump()); }

const PatternAssignment& ParseTree::assignment(std::string_view pattern_id) const {
  for (const auto& a : assignments)
    if (a.pattern_id == pattern_id) return a;
  throw NotFoundError("pattern '" + std::string(pattern_id) + "' has no assignment in the parse of '" + image_id + "'");
}

Json to_json(const ParseTree& tree) {
  Json assignments = Json::array();
  for (const auto& a : tree.assignments)
    assignments.push_back({{"pattern_id", a.pattern_id},
                           {"layer_id", a.layer_id},
                           {"channel", a.channel},
                           {"unit", {{"x_cell", a.unit.x}, {"y_cell", a.unit.y}}},
                           {"unit_center", point_to_json(a.unit_center)},
                           {"unit_region", rect_to_json(a.unit_region)},
                           {"response", a.response},
                           {"deform_penalty", a.deform_penalty},
                           {"geo_penalty", a.geo_penalty},
                           {"contribution", a.contribution}});
  return {{"parse_tree_version", 1},
          {"image_id", tree.image_id},
          {"template_id", tree.template_id},
          {"template_index", tree.template_index},
          {"part_center", point_to_json(tree.part_center)},
          {"part_region", rect_to_json(tree.part_region)},
          {"total_score", tree.total_score},
          {"assignments", assignments}};
}

ParseTree parse_tree_from_json(const Json& j) {
  if (required<int>(j, "parse_tree_version", "") != 1) throw ValidationError("parse_tree_version", "unsupported version");
  ParseTree t;
  t.image_id = required<std::string>(j, "image_id", "");
  t.template_id = required<std::string>(j, "template_id", "");
  t.template_index = required<int>(j, "template_index", "");
  t.part_center = point_from_json(j.at("part_center"), "part_center");
  t.part_region = rect_from_json(j.at("part_region"), "part_region");
  t.total_score = required<double>(j, "total_score", "");
  const Json& as = j.at("assignments");
  for (std::size_t i = 0; i < as.size(); ++i) {
    const std::string f = "assignments[" + std::to_string(i) + "]";
    const Json& ja = as[i];
    PatternAssignment a;
    a.pattern_id = required<std::string>(ja, "pattern_id", f);
    a.layer_id = required<std::string>(ja, "layer_id", f);
    a.channel = required<int>(ja, "channel", f);
    a.unit = {required<int>(ja.at("unit"), "x_cell", f + ".unit"), required<int>(ja.at("unit"), "y_cell", f + ".unit")};
    a.unit_center = point_from_json(ja.at("unit_center"), f + ".unit_center");
    a.unit_region = rect_from_json(ja.at("unit_region"), f + ".unit_region");
    a.response = required<double>(ja, "response", f);
    a.deform_penalty = required<double>(ja, "deform_penalty", f);
    a.geo_penalty = required<double>(ja, "geo_penalty", f);
    a.contribution = required<double>(ja, "contribution", f);
    t.assignments.push_back(std::move(a));
  }
  return t;
}

}  // namespace aoglab
