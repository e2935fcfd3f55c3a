#include "aoglab/interaction.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace aoglab {

LayerGroup parse_annotation_scope(std::string_view s) {
  if (s == "background") return LayerGroup::High;
  if (s == "outside_part_box") return LayerGroup::Low;
  try {
    return parse_layer_group(s);
  } catch (const ValidationError&) {
    throw ValidationError("scope", "unknown annotation scope '" + std::string(s) + "'");
  }
}

void AnnotatedRegionSet::validate(const ImageRecord& record) const {
  if (image_id != record.image_id) throw ValidationError("image_id", "does not match the parsed image");
  if (rectangles.empty()) throw ValidationError("rectangles", "at least one rectangle required");
  const Rect img = record.image_rect();
  for (std::size_t i = 0; i < rectangles.size(); ++i) {
    const Rect& r = rectangles[i];
    if (!(r.w > 0 && r.h > 0) || r.x < 0 || r.y < 0 || !img.contains(r))
      throw ValidationError("rectangles[" + std::to_string(i) + "]", "must be a nonempty box within the image");
  }
}

void SaliencyMap::validate(int width, int height) const {
  if (values.rows() != height || values.cols() != width)
    throw ValidationError("saliency." + pattern_id, "dimensions " + std::to_string(values.cols()) + "x" + std::to_string(values.rows()) +
                                                        " do not match the image " + std::to_string(width) + "x" + std::to_string(height));
  if (!values.isFinite().all() || (values < 0).any()) throw ValidationError("saliency." + pattern_id, "values must be finite and >= 0");
}

SaliencyMap fallback_saliency(const PatternAssignment& a, const std::string& image_id, int width, int height) {
  SaliencyMap m{image_id, a.pattern_id, Eigen::ArrayXXf::Zero(height, width)};
  std::size_t n = 0;
  for_each_pixel(a.unit_region, width, height, [&](int, int) { ++n; });
  if (n == 0) return m;
  const float mass = 1.0f / float(n);
  for_each_pixel(a.unit_region, width, height, [&](int i, int j) { m.values(i, j) = mass; });
  return m;
}

SaliencyMass split_mass(const SaliencyMap& map, const RegionMask& annotated) {
  SaliencyMass s;
  for (Eigen::Index i = 0; i < map.values.rows(); ++i)
    for (Eigen::Index j = 0; j < map.values.cols(); ++j) {
      const double v = std::abs(map.values(i, j));
      (annotated(i, j) ? s.inside : s.outside) += v;
    }
  return s;
}

std::vector<std::string> ProposalReport::proposed_ids() const {
  std::vector<std::string> out;
  for (const auto& e : evidence)
    if (e.proposed) out.push_back(e.pattern_id);
  return out;
}

ProposalReport propose_prunes(const ParseTree& tree, const SemanticPartAOG& aog, const DatasetManifest& manifest,
                              const AnnotatedRegionSet& regions, const SaliencyProvider& saliency) {
  const ImageRecord& record = manifest.record(tree.image_id);
  regions.validate(record);
  const RegionMask mask = rasterize_union(regions.rectangles, record.width_px, record.height_px);

  ProposalReport report{tree.image_id, regions.scope, {}};
  for (const PatternAssignment& a : tree.assignments) {
    const LatentPattern& pat = aog.pattern(a.pattern_id);
    const LayerGroup group = manifest.layer_groups.group_of(pat.layer_id);
    if (group != regions.scope) continue;

    PruneEvidence e;
    e.pattern_id = a.pattern_id;
    e.layer_id = a.layer_id;
    e.group = group;
    e.region_center = a.unit_region.center();
    e.center_inside = any_contains(regions.rectangles, e.region_center);

    std::optional<SaliencyMap> supplied = saliency ? saliency(tree.image_id, a.pattern_id) : std::nullopt;
    e.saliency_supplied = supplied.has_value();
    const SaliencyMap map = supplied ? std::move(*supplied) : fallback_saliency(a, tree.image_id, record.width_px, record.height_px);
    map.validate(record.width_px, record.height_px);
    const SaliencyMass mass = split_mass(map, mask);
    e.inside_mass = mass.inside;
    e.outside_mass = mass.outside;
    e.proposed = e.center_inside && mass.inside > mass.outside;
    report.evidence.push_back(std::move(e));
  }
  return report;
}

SaliencyMap load_saliency(const std::filesystem::path& path, const std::string& image_id, const std::string& pattern_id) {
  auto layers = read_fmap(path);
  if (layers.size() != 1 || layers.front().channels != 1)
    throw ValidationError("saliency." + pattern_id, "saliency FMAP must hold one single-channel layer");
  const RawLayer& l = layers.front();
  SaliencyMap m{image_id, pattern_id, Eigen::ArrayXXf(l.grid_h, l.grid_w)};
  for (int i = 0; i < l.grid_h; ++i)
    for (int j = 0; j < l.grid_w; ++j) m.values(i, j) = l.values[std::size_t(i) * l.grid_w + j];
  return m;
}

SaliencyProvider manifest_saliency(std::shared_ptr<const Dataset> dataset) {
  return [dataset](const std::string& image_id, const std::string& pattern_id) -> std::optional<SaliencyMap> {
    for (const auto& s : dataset->manifest.saliency_paths)
      if (s.image_id == image_id && s.pattern_id == pattern_id) {
        std::filesystem::path p = s.path;
        if (p.is_relative()) p = dataset->root / p;
        return load_saliency(p, image_id, pattern_id);
      }
    return std::nullopt;
  };
}

// ---------------------------------------------------------------------------
// Sessions

InteractionSession InteractionSession::open(std::string session_id, std::shared_ptr<const Dataset> dataset,
                                            SemanticPartAOG base, std::string manifest_ref) {
  base.validate_against(dataset->manifest.layer_geometries);
  InteractionSession s;
  s.session_id = std::move(session_id);
  s.manifest_ref = std::move(manifest_ref);
  s.dataset = std::move(dataset);
  s.current = base;
  s.base = std::move(base);
  return s;
}

SemanticPartAOG replay(const SemanticPartAOG& base, const std::vector<PruneOp>& stack) {
  SemanticPartAOG aog = base;
  for (const auto& op : stack)
    for (const auto& id : op.pattern_ids) aog = prune_pattern(std::move(aog), id);
  return aog;
}

namespace {

void reparse_all(InteractionSession& s) {
  for (auto it = s.trees.begin(); it != s.trees.end();) {
    const ImageRecord& r = s.dataset->manifest.record(it->first);
    if (s.current.active_count() == 0) {
      it = s.trees.erase(it);
      continue;
    }
    it->second = parse(s.dataset->features_for(r.image_id), s.current, ImageFrame::from(r));
    ++it;
  }
}

}  // namespace

InteractionSession parse_image(InteractionSession session, const std::string& image_id) {
  const ImageRecord& r = session.dataset->manifest.record(image_id);
  session.trees[image_id] = parse(session.dataset->features_for(image_id), session.current, ImageFrame::from(r));
  session.active_image = image_id;
  return session;
}

ProposalReport propose_prunes(const InteractionSession& session, const AnnotatedRegionSet& regions, const SaliencyProvider& saliency) {
  auto it = session.trees.find(regions.image_id);
  if (it == session.trees.end()) throw ValidationError("image_id", "image '" + regions.image_id + "' has not been parsed in this session");
  return propose_prunes(it->second, session.current, session.dataset->manifest, regions, saliency);
}

InteractionSession apply_prunes(InteractionSession session, const std::vector<std::string>& pattern_ids,
                                std::optional<AnnotatedRegionSet> annotation, std::int64_t timestamp_ms) {
  if (pattern_ids.empty()) throw ValidationError("pattern_ids", "at least one pattern id required");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < pattern_ids.size(); ++i) {
    const std::string f = "pattern_ids[" + std::to_string(i) + "]";
    const LatentPattern* p = nullptr;
    try {
      p = &session.current.pattern(pattern_ids[i]);
    } catch (const NotFoundError&) {
      throw ValidationError(f, "unknown pattern '" + pattern_ids[i] + "'");
    }
    if (!p->active) throw ValidationError(f, "pattern '" + pattern_ids[i] + "' is already pruned");
    if (!seen.insert(pattern_ids[i]).second) throw ValidationError(f, "duplicate pattern id");
  }
  session.stack.push_back({pattern_ids, timestamp_ms, std::move(annotation)});
  session.current = replay(session.base, session.stack);
  reparse_all(session);
  return session;
}

InteractionSession undo(InteractionSession session, std::size_t k) {
  if (k > session.stack.size())
    throw ValidationError("k", "cannot undo " + std::to_string(k) + " operations, stack depth is " + std::to_string(session.stack.size()));
  session.stack.resize(session.stack.size() - k);
  session.current = replay(session.base, session.stack);
  reparse_all(session);
  return session;
}

// ---------------------------------------------------------------------------
// JSON

Json to_json(const AnnotatedRegionSet& r) {
  Json rects = Json::array();
  for (const auto& rect : r.rectangles) rects.push_back(rect_to_json(rect));
  return {{"image_id", r.image_id}, {"rectangles", rects}, {"scope", to_string(r.scope)}};
}

AnnotatedRegionSet annotated_regions_from_json(const Json& j) {
  AnnotatedRegionSet r;
  r.image_id = required<std::string>(j, "image_id", "");
  const Json rects = required<Json>(j, "rectangles", "");
  if (!rects.is_array()) throw ValidationError("rectangles", "must be an array");
  for (std::size_t i = 0; i < rects.size(); ++i) r.rectangles.push_back(rect_from_json(rects[i], "rectangles[" + std::to_string(i) + "]"));
  r.scope = parse_annotation_scope(required<std::string>(j, "scope", ""));
  if (r.rectangles.empty()) throw ValidationError("rectangles", "at least one rectangle required");
  return r;
}

Json to_json(const ProposalReport& r) {
  Json ev = Json::array();
  for (const auto& e : r.evidence)
    ev.push_back({{"pattern_id", e.pattern_id},
                  {"layer_id", e.layer_id},
                  {"group", to_string(e.group)},
                  {"region_center", point_to_json(e.region_center)},
                  {"center_inside", e.center_inside},
                  {"containment_rule", "center"},
                  {"inside_mass", e.inside_mass},
                  {"outside_mass", e.outside_mass},
                  {"saliency", e.saliency_supplied ? "supplied" : "fallback"},
                  {"proposed", e.proposed}});
  return {{"image_id", r.image_id}, {"scope", to_string(r.scope)}, {"proposed", r.proposed_ids()}, {"evidence", ev}};
}

Json to_json(const InteractionSession& s) {
  Json stack = Json::array();
  for (const auto& op : s.stack)
    stack.push_back({{"pattern_ids", op.pattern_ids},
                     {"timestamp_ms", op.timestamp_ms},
                     {"annotation", op.annotation ? to_json(*op.annotation) : Json(nullptr)}});
  Json working = Json::array();
  for (const auto& [id, tree] : s.trees) working.push_back(id);
  return {{"session_version", 1},
          {"session_id", s.session_id},
          {"manifest", s.manifest_ref},
          {"base_aog", to_json(s.base)},
          {"stack", stack},
          {"working_images", working},
          {"active_image", s.active_image ? Json(*s.active_image) : Json(nullptr)}};
}

InteractionSession session_from_json(const Json& j, std::shared_ptr<const Dataset> dataset) {
  if (required<int>(j, "session_version", "") != 1) throw ValidationError("session_version", "unsupported version");
  InteractionSession s = InteractionSession::open(required<std::string>(j, "session_id", ""), std::move(dataset),
                                                  aog_from_json(j.at("base_aog")), required<std::string>(j, "manifest", ""));
  const Json& stack = j.at("stack");
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const std::string f = "stack[" + std::to_string(i) + "]";
    PruneOp op;
    op.pattern_ids = required<std::vector<std::string>>(stack[i], "pattern_ids", f);
    op.timestamp_ms = required<std::int64_t>(stack[i], "timestamp_ms", f);
    if (stack[i].contains("annotation") && !stack[i].at("annotation").is_null())
      op.annotation = annotated_regions_from_json(stack[i].at("annotation"));
    s.stack.push_back(std::move(op));
  }
  s.current = replay(s.base, s.stack);
  if (s.current.active_count() > 0)
    for (const auto& id : required<std::vector<std::string>>(j, "working_images", "")) s = parse_image(std::move(s), id);
  s.active_image = j.contains("active_image") && !j.at("active_image").is_null()
                       ? std::optional<std::string>(j.at("active_image").get<std::string>())
                       : std::nullopt;
  return s;
}

}  // namespace aoglab
