#include "aoglab/parser.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aoglab {

namespace {

std::vector<double> lattice_axis(double lo, double hi, double offset, double step) {
  std::vector<double> out;
  const double k0 = std::ceil((lo - offset) / step);
  for (double k = k0;; k += 1) {
    const double v = offset + k * step;
    if (v >= hi) break;
    if (v >= lo) out.push_back(v);
  }
  if (out.empty()) out.push_back(offset + std::round(((lo + hi) / 2 - offset) / step) * step);
  return out;
}

PatternAssignment make_assignment(const LatentPattern& p, const LayerGeometry& g, Cell unit, const UnitScore& s,
                                  double image_w, double image_h) {
  const UnitField f = receptive_field(g, unit.x, unit.y, image_w, image_h);
  return {p.pattern_id, p.layer_id, p.channel, unit, f.center, f.box, s.response, s.deform_penalty, s.geo_penalty, s.contribution};
}

/// Per-pattern state reused across all candidate centers of one parse.
struct PreparedPattern {
  const LatentPattern* pattern{nullptr};
  const FeatureLayer* layer{nullptr};
  CellWindow window;
  Eigen::ArrayXXd unary;  ///< response - deform_penalty, rows = y - y0
  double unary_max{0};
};

PreparedPattern prepare(const FeatureMapSet& fm, const LatentPattern& p, const AogConstants& k) {
  PreparedPattern pp;
  pp.pattern = &p;
  pp.layer = &fm.layer(p.layer_id);
  const LayerGeometry& g = pp.layer->geometry;
  if (p.channel < 0 || p.channel >= g.channels) throw ValidationError(p.pattern_id + ".channel", "out of range for layer " + g.layer_id);
  pp.window = p.deformation_range(g);
  if (pp.window.size() == 0) throw ValidationError(p.pattern_id + ".deform_center", "deformation range misses the grid");
  pp.unary.resize(pp.window.height(), pp.window.width());
  pp.unary_max = -std::numeric_limits<double>::infinity();
  for (int y = pp.window.y0; y <= pp.window.y1; ++y)
    for (int x = pp.window.x0; x <= pp.window.x1; ++x) {
      const int dx = x - p.deform_center.x;
      const int dy = y - p.deform_center.y;
      const double response = pp.layer->at(p.channel, x, y);
      const double deform_penalty = k.lambda_def * double(dx * dx + dy * dy);
      const double u = response - deform_penalty;
      pp.unary(y - pp.window.y0, x - pp.window.x0) = u;
      pp.unary_max = std::max(pp.unary_max, u);
    }
  return pp;
}

struct BestUnit {
  Cell unit;
  double contribution;
};

/// Exact argmax over the deformation range for one center. Units whose geometric penalty alone
/// puts them below the nearest unit's contribution are skipped; they cannot win or tie.
BestUnit best_unit(const PreparedPattern& pp, const Vec2& center, double geo_unit, const AogConstants& k) {
  const LayerGeometry& g = pp.layer->geometry;
  const LatentPattern& p = *pp.pattern;
  const CellWindow& w = pp.window;

  auto geo = [&](int x, int y) {
    const double rx = (g.offset_px + x * g.stride_px + p.displacement.x() - center.x()) / geo_unit;
    const double ry = (g.offset_px + y * g.stride_px + p.displacement.y() - center.y()) / geo_unit;
    return k.lambda_geo * (rx * rx + ry * ry);
  };

  CellWindow scan = w;
  if (k.lambda_geo > 0) {
    const double ix = (center.x() - p.displacement.x() - g.offset_px) / g.stride_px;
    const double iy = (center.y() - p.displacement.y() - g.offset_px) / g.stride_px;
    const int x0 = std::clamp(int(std::lround(ix)), w.x0, w.x1);
    const int y0 = std::clamp(int(std::lround(iy)), w.y0, w.y1);
    const double seed = pp.unary(y0 - w.y0, x0 - w.x0) - geo(x0, y0);
    const double slack = pp.unary_max - seed;
    const double eps = 1e-9 * (1.0 + std::abs(pp.unary_max) + std::abs(seed));
    const double radius_cells = std::sqrt((slack + eps) / k.lambda_geo) * geo_unit / g.stride_px;
    scan.x0 = std::max(w.x0, int(std::floor(ix - radius_cells)) - 1);
    scan.x1 = std::min(w.x1, int(std::ceil(ix + radius_cells)) + 1);
    scan.y0 = std::max(w.y0, int(std::floor(iy - radius_cells)) - 1);
    scan.y1 = std::min(w.y1, int(std::ceil(iy + radius_cells)) + 1);
  }

  BestUnit best{{scan.x0, scan.y0}, -std::numeric_limits<double>::infinity()};
  for (int y = scan.y0; y <= scan.y1; ++y)
    for (int x = scan.x0; x <= scan.x1; ++x) {
      const double c = pp.unary(y - w.y0, x - w.x0) - geo(x, y);
      if (c > best.contribution) best = {{x, y}, c};
    }
  return best;
}

}  // namespace

SearchGrid SearchGrid::over(const Rect& box, double offset_px, double step_px) {
  return {lattice_axis(box.x, box.right(), offset_px, step_px), lattice_axis(box.y, box.bottom(), offset_px, step_px)};
}

SearchGrid SearchGrid::for_features(const FeatureMapSet& fm, const Rect& object_box) {
  const LayerGeometry& g = fm.finest();
  return over(object_box, g.offset_px, g.stride_px);
}

UnitScore score_unit(const FeatureMapSet& fm, const LatentPattern& pattern, Cell unit, const Vec2& part_center,
                     const AogConstants& constants) {
  const FeatureLayer& layer = fm.layer(pattern.layer_id);
  const LayerGeometry& g = layer.geometry;
  if (!pattern.deformation_range(g).contains(unit))
    throw ValidationError(pattern.pattern_id, "unit (" + std::to_string(unit.x) + "," + std::to_string(unit.y) +
                                                  ") lies outside the deformation range");
  const double geo_unit = fm.finest().stride_px;
  UnitScore s;
  s.response = unit_response(fm, pattern.layer_id, pattern.channel, unit.x, unit.y);
  const int dx = unit.x - pattern.deform_center.x;
  const int dy = unit.y - pattern.deform_center.y;
  s.deform_penalty = constants.lambda_def * double(dx * dx + dy * dy);
  const Vec2 pos = unit_position(g, unit.x, unit.y);
  const double rx = (pos.x() + pattern.displacement.x() - part_center.x()) / geo_unit;
  const double ry = (pos.y() + pattern.displacement.y() - part_center.y()) / geo_unit;
  s.geo_penalty = constants.lambda_geo * (rx * rx + ry * ry);
  s.contribution = s.response - s.deform_penalty - s.geo_penalty;
  return s;
}

PatternAssignment score_pattern(const FeatureMapSet& fm, const LatentPattern& pattern, const Vec2& part_center,
                                const AogConstants& constants, double image_w, double image_h) {
  const LayerGeometry& g = fm.layer(pattern.layer_id).geometry;
  const CellWindow w = pattern.deformation_range(g);
  Cell best_cell{w.x0, w.y0};
  UnitScore best{0, 0, 0, -std::numeric_limits<double>::infinity()};
  for (int y = w.y0; y <= w.y1; ++y)
    for (int x = w.x0; x <= w.x1; ++x) {
      const UnitScore s = score_unit(fm, pattern, {x, y}, part_center, constants);
      if (s.contribution > best.contribution) {
        best = s;
        best_cell = {x, y};
      }
    }
  return make_assignment(pattern, g, best_cell, best, image_w, image_h);
}

TemplateScore score_template(const FeatureMapSet& fm, const PartTemplate& tpl, const Vec2& part_center,
                             const AogConstants& constants, double image_w, double image_h) {
  TemplateScore out;
  out.part_region = Rect::centered(part_center, tpl.canonical_box.w_px, tpl.canonical_box.h_px).clipped(image_w, image_h);
  for (const auto& p : tpl.patterns) {
    if (!p.active) continue;
    out.assignments.push_back(score_pattern(fm, p, part_center, constants, image_w, image_h));
    out.score += out.assignments.back().contribution;
  }
  return out;
}

ParseTree parse(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame) {
  if (aog.active_count() == 0) throw EmptyAogError();
  const SearchGrid grid = SearchGrid::for_features(fm, frame.object_box);
  const double geo_unit = fm.finest().stride_px;
  const AogConstants& k = aog.constants;

  bool have_best = false;
  double best_score = 0;
  std::size_t best_template = 0;
  Vec2 best_center{0, 0};

  for (std::size_t t = 0; t < aog.templates.size(); ++t) {
    std::vector<PreparedPattern> prepared;
    for (const auto& p : aog.templates[t].patterns)
      if (p.active) prepared.push_back(prepare(fm, p, k));
    for (double cy : grid.ys)
      for (double cx : grid.xs) {
        const Vec2 center{cx, cy};
        double score = 0;
        for (const auto& pp : prepared) score += best_unit(pp, center, geo_unit, k).contribution;
        if (!have_best || score > best_score) {
          have_best = true;
          best_score = score;
          best_template = t;
          best_center = center;
        }
      }
  }

  const PartTemplate& tpl = aog.templates[best_template];
  TemplateScore ts = score_template(fm, tpl, best_center, k, frame.width, frame.height);
  ParseTree tree;
  tree.image_id = frame.image_id.empty() ? fm.image_id() : frame.image_id;
  tree.template_id = tpl.template_id;
  tree.template_index = int(best_template);
  tree.part_center = best_center;
  tree.part_region = ts.part_region;
  tree.total_score = ts.score;
  tree.assignments = std::move(ts.assignments);
  return tree;
}

}  // namespace aoglab
