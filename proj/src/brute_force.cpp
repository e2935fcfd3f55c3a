// Exhaustive parser used as a testing oracle. It deliberately shares no scoring code with
// parser.cpp: every (template, center, unit tuple) is scored from the raw tensors.

#include "aoglab/error.hpp"
#include "aoglab/parser.hpp"

#include <limits>

namespace aoglab {

namespace {

struct Candidate {
  const LatentPattern* pattern;
  const FeatureLayer* layer;
  std::vector<Cell> units;  ///< deformation range in (y, x) order
};

std::vector<Candidate> candidates_of(const FeatureMapSet& fm, const PartTemplate& tpl) {
  std::vector<Candidate> out;
  for (const auto& p : tpl.patterns) {
    if (!p.active) continue;
    Candidate c{&p, &fm.layer(p.layer_id), {}};
    const LayerGeometry& g = c.layer->geometry;
    const int x0 = std::max(0, p.deform_center.x - p.deform_half_extent);
    const int x1 = std::min(g.grid_w - 1, p.deform_center.x + p.deform_half_extent);
    const int y0 = std::max(0, p.deform_center.y - p.deform_half_extent);
    const int y1 = std::min(g.grid_h - 1, p.deform_center.y + p.deform_half_extent);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) c.units.push_back({x, y});
    if (c.units.empty()) throw ValidationError(p.pattern_id + ".deform_center", "deformation range misses the grid");
    out.push_back(std::move(c));
  }
  return out;
}

UnitScore tuple_term(const Candidate& c, Cell u, double cx, double cy, double geo_unit, const AogConstants& k) {
  const LatentPattern& p = *c.pattern;
  const LayerGeometry& g = c.layer->geometry;
  UnitScore s;
  s.response = c.layer->values(u.y * g.grid_w + u.x, p.channel);
  const int dx = u.x - p.deform_center.x;
  const int dy = u.y - p.deform_center.y;
  s.deform_penalty = k.lambda_def * double(dx * dx + dy * dy);
  const double rx = (g.offset_px + u.x * g.stride_px + p.displacement.x() - cx) / geo_unit;
  const double ry = (g.offset_px + u.y * g.stride_px + p.displacement.y() - cy) / geo_unit;
  s.geo_penalty = k.lambda_geo * (rx * rx + ry * ry);
  s.contribution = s.response - s.deform_penalty - s.geo_penalty;
  return s;
}

std::uint64_t tuple_count(const std::vector<Candidate>& cands) {
  std::uint64_t n = 1;
  for (const auto& c : cands) {
    n *= c.units.size();
    if (n > (std::uint64_t(1) << 40)) return n;
  }
  return n;
}

}  // namespace

std::uint64_t brute_force_size(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame) {
  const std::uint64_t centers = SearchGrid::for_features(fm, frame.object_box).size();
  std::uint64_t total = 0;
  for (const auto& t : aog.templates) total += centers * tuple_count(candidates_of(fm, t));
  return total;
}

ParseTree brute_force_parse(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame,
                            BruteForceOptions options) {
  if (aog.active_count() == 0) throw EmptyAogError();
  const std::uint64_t size = brute_force_size(fm, aog, frame);
  if (size > options.max_evaluations)
    throw Error("brute-force parse needs " + std::to_string(size) + " evaluations, cap is " +
                std::to_string(options.max_evaluations));

  const SearchGrid grid = SearchGrid::for_features(fm, frame.object_box);
  const double geo_unit = fm.finest().stride_px;
  const AogConstants& k = aog.constants;

  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t best_t = 0;
  double best_cx = 0, best_cy = 0;
  std::vector<std::size_t> best_tuple;

  for (std::size_t t = 0; t < aog.templates.size(); ++t) {
    const auto cands = candidates_of(fm, aog.templates[t]);
    for (double cy : grid.ys)
      for (double cx : grid.xs) {
        // Odometer over unit tuples, first pattern most significant.
        std::vector<std::size_t> idx(cands.size(), 0);
        for (bool more = true; more;) {
          double score = 0;
          for (std::size_t i = 0; i < cands.size(); ++i)
            score += tuple_term(cands[i], cands[i].units[idx[i]], cx, cy, geo_unit, k).contribution;
          if (score > best_score) {
            best_score = score;
            best_t = t;
            best_cx = cx;
            best_cy = cy;
            best_tuple = idx;
          }
          more = false;
          for (std::size_t i = cands.size(); i-- > 0;) {
            if (++idx[i] < cands[i].units.size()) {
              more = true;
              break;
            }
            idx[i] = 0;
          }
        }
      }
  }

  const PartTemplate& tpl = aog.templates[best_t];
  const auto cands = candidates_of(fm, tpl);
  ParseTree tree;
  tree.image_id = frame.image_id.empty() ? fm.image_id() : frame.image_id;
  tree.template_id = tpl.template_id;
  tree.template_index = int(best_t);
  tree.part_center = {best_cx, best_cy};
  tree.part_region = Rect::centered(tree.part_center, tpl.canonical_box.w_px, tpl.canonical_box.h_px).clipped(frame.width, frame.height);
  tree.total_score = best_score;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    const Candidate& c = cands[i];
    const Cell u = c.units[best_tuple[i]];
    const LayerGeometry& g = c.layer->geometry;
    PatternAssignment a;
    a.pattern_id = c.pattern->pattern_id;
    a.layer_id = c.pattern->layer_id;
    a.channel = c.pattern->channel;
    a.unit = u;
    a.unit_center = {g.offset_px + u.x * g.stride_px, g.offset_px + u.y * g.stride_px};
    a.unit_region = Rect::centered(a.unit_center, g.rf_size_px, g.rf_size_px).clipped(frame.width, frame.height);
    const UnitScore s = tuple_term(c, u, best_cx, best_cy, geo_unit, k);
    a.response = s.response;
    a.deform_penalty = s.deform_penalty;
    a.geo_penalty = s.geo_penalty;
    a.contribution = s.contribution;
    tree.assignments.push_back(std::move(a));
  }
  return tree;
}

}  // namespace aoglab
