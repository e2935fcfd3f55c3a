#include "aoglab/miner.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace aoglab {

int round_half_down(double v) { return int(std::ceil(v - 0.5)); }

int MinerConfig::patterns_for(const std::string& layer_id) const {
  auto it = patterns_per_layer.find(layer_id);
  const int n = it == patterns_per_layer.end() ? default_patterns_per_layer : it->second;
  if (n < 1) throw ValidationError("patterns_per_layer." + layer_id, "n_k must be >= 1");
  return n;
}

Json MinerConfig::to_json() const {
  Json j = {{"miner", strategy},
            {"default_patterns_per_layer", default_patterns_per_layer},
            {"patterns_per_layer", patterns_per_layer},
            {"low_layer_scope", "part_box"},
            {"high_layer_scope", "object_box"},
            {"half_extent_override", nullptr}};
  if (half_extent_override) j["half_extent_override"] = *half_extent_override;
  return j;
}

std::vector<AnnotatedInstance> instances_of(const Dataset& ds, std::string_view template_id) {
  std::vector<AnnotatedInstance> out;
  for (const auto& r : ds.manifest.records) {
    if (r.split != "train") continue;
    for (const auto& a : r.part_annotations)
      if (a.template_id == template_id) out.push_back({&r, a.part_box});
  }
  return out;
}

namespace {

struct Peak {
  Cell cell{-1, -1};
  float value{-std::numeric_limits<float>::infinity()};
};

const Rect& scope_of(const Dataset& ds, const AnnotatedInstance& inst, const LayerGeometry& g,
                     MiningScope scope = MiningScope::ByLayerGroup) {
  if (scope == MiningScope::ObjectBox) return inst.record->object_box;
  return ds.manifest.layer_groups.group_of(g.layer_id) == LayerGroup::Low ? inst.part_box : inst.record->object_box;
}

/// Units whose receptive-field center lies inside the scope, in (y, x) order.
std::vector<Cell> scoped_units(const LayerGeometry& g, const Rect& scope) {
  std::vector<Cell> out;
  for (int y = 0; y < g.grid_h; ++y)
    for (int x = 0; x < g.grid_w; ++x)
      if (scope.contains(unit_position(g, x, y))) out.push_back({x, y});
  if (out.empty()) throw ValidationError("layer '" + g.layer_id + "'", "scope region contains no unit centers");
  return out;
}

Peak peak_in(const FeatureLayer& layer, int channel, const std::vector<Cell>& units) {
  Peak p;
  for (Cell c : units) {
    const float v = layer.at(channel, c.x, c.y);
    if (v > p.value) p = {c, v};
  }
  return p;
}

}  // namespace

std::vector<ChannelScore> rank_channels(const Dataset& ds, const std::vector<AnnotatedInstance>& instances,
                                        const LayerGeometry& g) {
  if (instances.empty()) throw ValidationError("part_annotations", "template has no annotated training instance");
  std::vector<double> sums(g.channels, 0.0);
  for (const auto& inst : instances) {
    const FeatureLayer& layer = ds.features_for(inst.record->image_id).layer(g.layer_id);
    const auto units = scoped_units(g, scope_of(ds, inst, g));
    for (int c = 0; c < g.channels; ++c) sums[c] += peak_in(layer, c, units).value;
  }
  std::vector<ChannelScore> out;
  for (int c = 0; c < g.channels; ++c) out.push_back({c, sums[c] / double(instances.size())});
  std::stable_sort(out.begin(), out.end(), [](const ChannelScore& a, const ChannelScore& b) { return a.score > b.score; });
  return out;
}

LatentPattern estimate_pattern(const Dataset& ds, const std::vector<AnnotatedInstance>& instances, const LayerGeometry& g,
                               int channel, const MinerConfig& config, std::string pattern_id, MiningScope scope) {
  if (instances.empty()) throw ValidationError("part_annotations", "template has no annotated training instance");
  double sx = 0, sy = 0;
  Vec2 disp{0, 0};
  for (const auto& inst : instances) {
    const FeatureLayer& layer = ds.features_for(inst.record->image_id).layer(g.layer_id);
    const Peak p = peak_in(layer, channel, scoped_units(g, scope_of(ds, inst, g, scope)));
    sx += p.cell.x;
    sy += p.cell.y;
    disp += inst.part_box.center() - unit_position(g, p.cell.x, p.cell.y);
  }
  const double n = double(instances.size());
  LatentPattern pat;
  pat.pattern_id = std::move(pattern_id);
  pat.layer_id = g.layer_id;
  pat.channel = channel;
  pat.deform_center = {std::clamp(round_half_down(sx / n), 0, g.grid_w - 1), std::clamp(round_half_down(sy / n), 0, g.grid_h - 1)};
  pat.deform_half_extent = config.half_extent_override.value_or(default_half_extent(g));
  if (pat.deform_half_extent < 0) throw ValidationError("half_extent_override", "must be >= 0");
  pat.displacement = disp / n;
  return pat;
}

namespace {

BoxSize mean_box(const std::vector<AnnotatedInstance>& instances, const std::string& template_id) {
  if (instances.empty()) throw ValidationError("templates." + template_id, "template has no annotated training instance");
  BoxSize b;
  for (const auto& i : instances) {
    b.w_px += i.part_box.w;
    b.h_px += i.part_box.h;
  }
  b.w_px /= double(instances.size());
  b.h_px /= double(instances.size());
  return b;
}

}  // namespace

SemanticPartAOG mine(const Dataset& ds, const MinerConfig& config) {
  if (config.strategy != "greedy_channel")
    throw ValidationError("strategy", "miner strategy '" + config.strategy + "' is not built into this engine");
  std::set<std::string> template_ids;
  for (const auto& r : ds.manifest.records)
    if (r.split == "train")
      for (const auto& a : r.part_annotations) template_ids.insert(a.template_id);
  if (template_ids.empty()) throw ValidationError("records", "no annotated training images");

  SemanticPartAOG aog;
  aog.part_name = ds.manifest.part.empty() ? ds.manifest.category : ds.manifest.part;
  aog.provenance = config.to_json();
  for (const auto& tid : template_ids) {
    const auto instances = instances_of(ds, tid);
    PartTemplate tpl;
    tpl.template_id = tid;
    tpl.canonical_box = mean_box(instances, tid);
    for (const auto& g : ds.manifest.layer_geometries) {
      const auto ranked = rank_channels(ds, instances, g);
      const int keep = std::min<int>(config.patterns_for(g.layer_id), int(ranked.size()));
      for (int i = 0; i < keep; ++i) {
        const int c = ranked[i].channel;
        tpl.patterns.push_back(estimate_pattern(ds, instances, g, c, config, tid + "/" + g.layer_id + "/c" + std::to_string(c)));
      }
    }
    aog.templates.push_back(std::move(tpl));
  }
  aog.validate_against(ds.manifest.layer_geometries);
  return aog;
}

SemanticPartAOG rebuild_template_box(SemanticPartAOG aog, const DatasetManifest& manifest) {
  for (auto& tpl : aog.templates) {
    std::vector<AnnotatedInstance> instances;
    for (const auto& r : manifest.records)
      if (r.split == "train")
        for (const auto& a : r.part_annotations)
          if (a.template_id == tpl.template_id) instances.push_back({&r, a.part_box});
    tpl.canonical_box = mean_box(instances, tpl.template_id);
  }
  return aog;
}

SemanticPartAOG rebuild_template_box(SemanticPartAOG aog, const Dataset& ds) { return rebuild_template_box(std::move(aog), ds.manifest); }

}  // namespace aoglab
