#include "aoglab/viz.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>

namespace aoglab {

Heatmap pattern_heatmap(const FeatureMapSet& fm, const LatentPattern& pattern, const ParseTree& tree, int width, int height) {
  const PatternAssignment& a = tree.assignment(pattern.pattern_id);
  const FeatureLayer& layer = fm.layer(pattern.layer_id);
  const LayerGeometry& g = layer.geometry;
  Heatmap h = Heatmap::Zero(height, width);
  const CellWindow win = clipped_window(a.unit, g.viz_window, g.grid_w, g.grid_h);
  for (int y = win.y0; y <= win.y1; ++y)
    for (int x = win.x0; x <= win.x1; ++x) {
      const float r = std::max(0.0f, layer.at(pattern.channel, x, y));
      if (r == 0.0f) continue;
      const Rect box = receptive_field(g, x, y, width, height).box;
      for_each_pixel(box, width, height, [&](int i, int j) { h(i, j) = std::max(h(i, j), r); });
    }
  return h;
}

HeatmapLayer group_heatmaps(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ParseTree& tree,
                            const LayerGroups& groups, LayerGroup group, int width, int height) {
  HeatmapLayer out{tree.image_id, group, {}, Heatmap::Zero(height, width)};
  for (const auto& a : tree.assignments) {
    const LatentPattern& p = aog.pattern(a.pattern_id);
    if (groups.group_of(p.layer_id) != group) continue;
    out.patterns.push_back({p.pattern_id, pattern_heatmap(fm, p, tree, width, height)});
    out.composite = out.composite.max(out.patterns.back().heatmap);
  }
  return out;
}

namespace {

void outline(Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& img, const Rect& r) {
  const int h = int(img.rows()), w = int(img.cols());
  const PixelSpan cols = covered_pixels(r.x, r.right(), w);
  const PixelSpan rows = covered_pixels(r.y, r.bottom(), h);
  if (cols.empty() || rows.empty()) return;
  for (int j = cols.begin; j < cols.end; ++j) img(rows.begin, j) = img(rows.end - 1, j) = 255;
  for (int i = rows.begin; i < rows.end; ++i) img(i, cols.begin) = img(i, cols.end - 1) = 255;
}

}  // namespace

Overlay render_overlay(const std::string& image_id, const std::vector<PatternHeatmap>& heatmaps, const ParseTree& tree,
                       const SemanticPartAOG& aog, const LayerGroups& groups, int width, int height,
                       std::optional<LayerGroup> group, const Heatmap* base_image, float base_alpha) {
  if (width <= 0 || height <= 0) throw ValidationError("image", "dimensions must be positive");
  Heatmap composite = Heatmap::Zero(height, width);
  for (const auto& h : heatmaps) {
    if (h.heatmap.rows() != height || h.heatmap.cols() != width)
      throw ValidationError("heatmaps." + h.pattern_id, "dimensions do not match the image");
    composite = composite.max(h.heatmap);
  }
  if (base_image && (base_image->rows() != height || base_image->cols() != width))
    throw ValidationError("base_image", "dimensions do not match the image");

  const float peak = composite.maxCoeff();
  Heatmap shade = peak > 0 ? Heatmap(composite / peak) : composite;
  if (base_image) shade = base_alpha * base_image->cwiseMax(0.0f).cwiseMin(1.0f) + (1.0f - base_alpha) * shade;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> pixels = (shade * 255.0f).round().cwiseMax(0.0f).cwiseMin(255.0f).cast<std::uint8_t>();
  outline(pixels, tree.part_region);

  Json patterns = Json::array();
  for (const auto& a : tree.assignments) {
    const LayerGroup g = groups.group_of(aog.pattern(a.pattern_id).layer_id);
    const bool shown = std::any_of(heatmaps.begin(), heatmaps.end(), [&](const PatternHeatmap& h) { return h.pattern_id == a.pattern_id; });
    patterns.push_back({{"pattern_id", a.pattern_id},
                        {"layer_id", a.layer_id},
                        {"group", to_string(g)},
                        {"peak", point_to_json(a.unit_center)},
                        {"contribution", a.contribution},
                        {"active", true},
                        {"in_overlay", shown}});
  }
  Overlay out;
  out.png = encode_png_gray(pixels);
  out.layout = {{"layout_version", 1},
                {"image_id", image_id},
                {"width", width},
                {"height", height},
                {"group", group ? Json(std::string(to_string(*group))) : Json(nullptr)},
                {"template_id", tree.template_id},
                {"part_box", rect_to_json(tree.part_region)},
                {"part_center", point_to_json(tree.part_center)},
                {"heat_max", peak},
                {"patterns", patterns}};
  return out;
}

}  // namespace aoglab
