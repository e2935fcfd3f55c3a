#include "aoglab/synthetic.hpp"

#include "aoglab/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace aoglab {

namespace {

LayerGeometry pyramid_layer(const std::string& id, int image_w, int image_h, double stride, double rf, int channels) {
  LayerGeometry g;
  g.layer_id = id;
  g.grid_w = int(image_w / stride);
  g.grid_h = int(image_h / stride);
  g.channels = channels;
  g.stride_px = stride;
  g.rf_size_px = rf;
  g.offset_px = stride / 2;
  g.viz_window = LayerGeometry::default_viz_window(g.grid_h, g.grid_w);
  return g;
}

std::string template_name(int t) { return "tpl" + std::to_string(t); }

std::string padded(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

void splat_blob(FeatureLayer& layer, int channel, double gx, double gy, double amplitude, double sigma) {
  const LayerGeometry& g = layer.geometry;
  const double two_s2 = 2 * sigma * sigma;
  for (int y = 0; y < g.grid_h; ++y)
    for (int x = 0; x < g.grid_w; ++x) {
      const double d2 = (x - gx) * (x - gx) + (y - gy) * (y - gy);
      const float v = float(amplitude * std::exp(-d2 / two_s2));
      layer.at(channel, x, y) = std::max(layer.at(channel, x, y), v);
    }
}

}  // namespace

SyntheticConfig SyntheticConfig::resolved() const {
  SyntheticConfig c = *this;
  if (c.templates < 1 || c.patterns_per_layer < 1 || c.train_per_template < 1 || c.test_images < 1)
    throw ValidationError("synthetic", "counts must be >= 1");
  if (c.distractors_per_layer < 0) throw ValidationError("synthetic.distractors_per_layer", "must be >= 0");
  if (c.image_w < 16 || c.image_h < 16) throw ValidationError("synthetic.image_w", "image too small");
  const int channels = std::max(24, c.templates * c.patterns_per_layer + c.distractors_per_layer);
  if (c.layers.empty()) {
    c.layers = {pyramid_layer("conv_low", c.image_w, c.image_h, 4, 12, channels),
                pyramid_layer("conv_mid", c.image_w, c.image_h, 8, 28, channels),
                pyramid_layer("conv_high", c.image_w, c.image_h, 16, 60, channels)};
  }
  if (c.groups.low.empty() && c.groups.mid.empty() && c.groups.high.empty()) {
    c.groups.low = {c.layers.front().layer_id};
    for (std::size_t i = 1; i + 1 < c.layers.size(); ++i) c.groups.mid.push_back(c.layers[i].layer_id);
    if (c.layers.size() > 1) c.groups.high = {c.layers.back().layer_id};
  }
  for (const auto& g : c.layers)
    if (g.channels < c.templates * c.patterns_per_layer + c.distractors_per_layer)
      throw ValidationError("synthetic.layers." + g.layer_id, "not enough channels for planted and distractor patterns");
  return c;
}

Json SyntheticConfig::to_json() const {
  Json layers_j = Json::array();
  for (const auto& g : layers) layers_j.push_back(aoglab::to_json(g));
  return {{"seed", seed},
          {"image_w", image_w},
          {"image_h", image_h},
          {"layers", layers_j},
          {"groups", {{"low", groups.low}, {"mid", groups.mid}, {"high", groups.high}}},
          {"templates", templates},
          {"patterns_per_layer", patterns_per_layer},
          {"blob_amplitude", blob_amplitude},
          {"normalize", normalize},
          {"blob_sigma_cells", blob_sigma_cells},
          {"noise_amplitude", noise_amplitude},
          {"distractors_per_layer", distractors_per_layer},
          {"train_per_template", train_per_template},
          {"test_images", test_images},
          {"part_jitter_px", part_jitter_px},
          {"low_displacement_max_px", low_displacement_max_px},
          {"displacement_max_px", displacement_max_px},
          {"part_box_px", part_box_px},
          {"distractor_jitter_cells", distractor_jitter_cells},
          {"category", category},
          {"part", part}};
}

SyntheticConfig SyntheticConfig::from_json(const Json& j) {
  SyntheticConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = required<std::decay_t<decltype(field)>>(j, key, "");
  };
  opt("seed", c.seed);
  opt("image_w", c.image_w);
  opt("image_h", c.image_h);
  opt("templates", c.templates);
  opt("patterns_per_layer", c.patterns_per_layer);
  opt("blob_amplitude", c.blob_amplitude);
  opt("normalize", c.normalize);
  opt("blob_sigma_cells", c.blob_sigma_cells);
  opt("noise_amplitude", c.noise_amplitude);
  opt("distractors_per_layer", c.distractors_per_layer);
  opt("train_per_template", c.train_per_template);
  opt("test_images", c.test_images);
  opt("part_jitter_px", c.part_jitter_px);
  opt("low_displacement_max_px", c.low_displacement_max_px);
  opt("displacement_max_px", c.displacement_max_px);
  opt("part_box_px", c.part_box_px);
  opt("distractor_jitter_cells", c.distractor_jitter_cells);
  opt("category", c.category);
  opt("part", c.part);
  if (j.contains("layers"))
    for (std::size_t i = 0; i < j.at("layers").size(); ++i)
      c.layers.push_back(layer_geometry_from_json(j.at("layers")[i], "layers[" + std::to_string(i) + "]"));
  if (j.contains("groups")) {
    const Json& g = j.at("groups");
    if (g.contains("low")) c.groups.low = required<std::vector<std::string>>(g, "low", "groups");
    if (g.contains("mid")) c.groups.mid = required<std::vector<std::string>>(g, "mid", "groups");
    if (g.contains("high")) c.groups.high = required<std::vector<std::string>>(g, "high", "groups");
  }
  return c;
}

const SyntheticImageTruth& GroundTruth::image(std::string_view image_id) const {
  for (const auto& i : images)
    if (i.image_id == image_id) return i;
  throw NotFoundError("no ground truth for image '" + std::string(image_id) + "'");
}

bool GroundTruth::is_distractor(std::string_view layer_id, int channel) const {
  return std::any_of(distractors.begin(), distractors.end(),
                     [&](const DistractorChannel& d) { return d.layer_id == layer_id && d.channel == channel; });
}

Json to_json(const GroundTruth& gt) {
  Json planted = Json::array();
  for (const auto& p : gt.planted)
    planted.push_back({{"template_id", p.template_id}, {"layer_id", p.layer_id}, {"channel", p.channel},
                       {"displacement", {{"dx_px", p.displacement.x()}, {"dy_px", p.displacement.y()}}}});
  Json distractors = Json::array();
  for (const auto& d : gt.distractors)
    distractors.push_back({{"layer_id", d.layer_id}, {"channel", d.channel}, {"home", {{"x_cell", d.home.x}, {"y_cell", d.home.y}}}});
  Json images = Json::array();
  for (const auto& i : gt.images) {
    Json placements = Json::array();
    for (const auto& d : i.distractors)
      placements.push_back({{"layer_id", d.layer_id}, {"channel", d.channel}, {"cell", {{"x_cell", d.cell.x}, {"y_cell", d.cell.y}}}});
    images.push_back({{"image_id", i.image_id}, {"template_id", i.template_id}, {"split", i.split},
                      {"part_center", point_to_json(i.part_center)}, {"distractors", placements}});
  }
  return {{"ground_truth_version", 1}, {"seed", gt.seed}, {"planted", planted}, {"distractors", distractors}, {"images", images}};
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config_in) {
  const SyntheticConfig cfg = config_in.resolved();
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  SyntheticDataset out;
  out.config = cfg;
  out.truth.seed = cfg.seed;

  for (int t = 0; t < cfg.templates; ++t)
    for (const auto& g : cfg.layers)
      for (int p = 0; p < cfg.patterns_per_layer; ++p) {
        const bool low = cfg.groups.group_of(g.layer_id) == LayerGroup::Low;
        const double reach = low ? cfg.low_displacement_max_px : cfg.displacement_max_px;
        const double dx = uniform(-reach, reach);
        const double dy = uniform(-reach, reach);
        out.truth.planted.push_back({template_name(t), g.layer_id, t * cfg.patterns_per_layer + p, {dx, dy}});
      }
  for (const auto& g : cfg.layers)
    for (int d = 0; d < cfg.distractors_per_layer; ++d) {
      const Cell home{uniform_int(0, g.grid_w - 1), uniform_int(0, g.grid_h - 1)};
      out.truth.distractors.push_back({g.layer_id, cfg.templates * cfg.patterns_per_layer + d, home});
    }

  DatasetManifest& m = out.manifest;
  m.category = cfg.category;
  m.part = cfg.part;
  m.normalize = cfg.normalize;
  m.layer_geometries = cfg.layers;
  m.layer_groups = cfg.groups;

  auto make_image = [&](const std::string& image_id, int t, const std::string& split) {
    SyntheticImageTruth truth;
    truth.image_id = image_id;
    truth.template_id = template_name(t);
    truth.split = split;
    truth.part_center = {cfg.image_w / 2.0 + uniform(-cfg.part_jitter_px, cfg.part_jitter_px),
                         cfg.image_h / 2.0 + uniform(-cfg.part_jitter_px, cfg.part_jitter_px)};
    const Rect part_box = Rect::centered(truth.part_center, cfg.part_box_px * (1.0 + 0.15 * t), cfg.part_box_px);

    std::vector<FeatureLayer> layers;
    for (const auto& g : cfg.layers) {
      FeatureLayer layer{g, ActivationMatrix(g.grid_h * g.grid_w, g.channels)};
      for (Eigen::Index r = 0; r < layer.values.rows(); ++r)
        for (int c = 0; c < g.channels; ++c) layer.values(r, c) = float(cfg.noise_amplitude > 0 ? uniform(0, cfg.noise_amplitude) : 0.0);

      for (const auto& p : out.truth.planted) {
        if (p.template_id != truth.template_id || p.layer_id != g.layer_id) continue;
        const Vec2 pos = truth.part_center - p.displacement;
        const double gx = (pos.x() - g.offset_px) / g.stride_px;
        const double gy = (pos.y() - g.offset_px) / g.stride_px;
        if (gx < 0 || gy < 0 || gx > g.grid_w - 1 || gy > g.grid_h - 1)
          throw ValidationError("synthetic." + g.layer_id, "planted blob for channel " + std::to_string(p.channel) + " falls outside the grid");
        splat_blob(layer, p.channel, gx, gy, cfg.blob_amplitude, cfg.blob_sigma_cells);
      }

      for (const auto& d : out.truth.distractors) {
        if (d.layer_id != g.layer_id) continue;
        auto off_part = [&](Cell c) { return !part_box.contains(unit_position(g, c.x, c.y)); };
        Cell cell{-1, -1};
        for (int attempt = 0; attempt < 1000 && cell.x < 0; ++attempt) {
          const int j = attempt < 20 ? cfg.distractor_jitter_cells : std::max(g.grid_w, g.grid_h);
          const Cell c{std::clamp(d.home.x + uniform_int(-j, j), 0, g.grid_w - 1), std::clamp(d.home.y + uniform_int(-j, j), 0, g.grid_h - 1)};
          if (off_part(c)) cell = c;
        }
        if (cell.x < 0) throw ValidationError("synthetic." + g.layer_id, "no off-part cell for a distractor");
        splat_blob(layer, d.channel, cell.x, cell.y, cfg.blob_amplitude, cfg.blob_sigma_cells);
        truth.distractors.push_back({g.layer_id, d.channel, cell});
      }
      layers.push_back(std::move(layer));
    }

    ImageRecord rec;
    rec.image_id = image_id;
    rec.width_px = cfg.image_w;
    rec.height_px = cfg.image_h;
    rec.object_box = rec.image_rect();
    rec.part_annotations = {{truth.template_id, part_box}};
    rec.split = split;
    m.records.push_back(rec);
    m.feature_paths[image_id] = "features/" + image_id + ".fmap";
    out.features.emplace_back(image_id, std::move(layers));
    out.truth.images.push_back(std::move(truth));
  };

  for (int t = 0; t < cfg.templates; ++t)
    for (int i = 0; i < cfg.train_per_template; ++i) make_image("train_t" + std::to_string(t) + "_" + padded(i), t, "train");
  for (int i = 0; i < cfg.test_images; ++i) {
    const int t = uniform_int(0, cfg.templates - 1);
    make_image("test_" + padded(i), t, "test");
  }
  m.validate();
  return out;
}

std::shared_ptr<const Dataset> SyntheticDataset::dataset() const { return make_dataset(manifest, features); }

void SyntheticDataset::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "features");
  save_manifest(manifest, dir / "manifest.json");
  for (const auto& fm : features) write_feature_set(fm, dir / manifest.feature_paths.at(fm.image_id()));
  write_text_file(dir / "ground_truth.json", to_json(truth).dump(2) + "\n");
  write_text_file(dir / "synth_config.json", config.to_json().dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Distractor experiment

SemanticPartAOG inject_distractors(const SemanticPartAOG& aog, const Dataset& ds, const GroundTruth& truth, double fraction) {
  if (!(fraction >= 0 && fraction < 1)) throw ValidationError("fraction", "must be in [0, 1)");
  SemanticPartAOG out = aog;
  for (std::size_t t = 0; t < out.templates.size(); ++t) {
    PartTemplate& tpl = out.templates[t];
    const auto instances = instances_of(ds, tpl.template_id);
    const auto wanted = std::size_t(std::lround(fraction * double(tpl.patterns.size()) / (1.0 - fraction)));
    std::size_t added = 0;
    for (std::size_t k = 0; k < truth.distractors.size() && added < wanted; ++k) {
      const DistractorChannel& d = truth.distractors[(k + t) % truth.distractors.size()];
      const bool used = std::any_of(tpl.patterns.begin(), tpl.patterns.end(),
                                    [&](const LatentPattern& p) { return p.layer_id == d.layer_id && p.channel == d.channel; });
      if (used) continue;
      tpl.patterns.push_back(estimate_pattern(ds, instances, ds.manifest.geometry(d.layer_id), d.channel, MinerConfig{},
                                              tpl.template_id + "/" + d.layer_id + "/c" + std::to_string(d.channel) + "/distractor",
                                              MiningScope::ObjectBox));
      ++added;
    }
  }
  out.provenance["injected_distractor_fraction"] = fraction;
  out.validate_against(ds.manifest.layer_geometries);
  return out;
}

std::optional<AnnotatedRegionSet> distractor_annotation(const Dataset& ds, const GroundTruth& truth, const std::string& image_id,
                                                        LayerGroup group) {
  const ImageRecord& rec = ds.manifest.record(image_id);
  AnnotatedRegionSet regions{image_id, {}, group};
  for (const auto& d : truth.image(image_id).distractors) {
    if (ds.manifest.layer_groups.group_of(d.layer_id) != group) continue;
    const LayerGeometry& g = ds.manifest.geometry(d.layer_id);
    const Vec2 c = unit_position(g, d.cell.x, d.cell.y);
    const Rect r = Rect::centered(c, g.rf_size_px, g.rf_size_px).clipped(rec.width_px, rec.height_px);
    if (r.w > 0 && r.h > 0) regions.rectangles.push_back(r);
  }
  if (regions.rectangles.empty()) return std::nullopt;
  return regions;
}

PruneRound prune_with_annotations(const SemanticPartAOG& aog, std::shared_ptr<const Dataset> ds, const GroundTruth& truth) {
  InteractionSession session = InteractionSession::open("distractor-round", ds, aog);
  std::vector<std::string> proposed;
  for (const ImageRecord* rec : ds->split("train")) {
    session = parse_image(std::move(session), rec->image_id);
    for (LayerGroup g : {LayerGroup::Low, LayerGroup::Mid, LayerGroup::High}) {
      const auto regions = distractor_annotation(*ds, truth, rec->image_id, g);
      if (!regions) continue;
      for (const auto& id : propose_prunes(session, *regions).proposed_ids())
        if (std::find(proposed.begin(), proposed.end(), id) == proposed.end()) proposed.push_back(id);
    }
  }
  PruneRound round;
  round.pruned = proposed;
  round.aog = proposed.empty() ? aog : apply_prunes(std::move(session), proposed).current;
  for (const auto& t : aog.templates)
    for (const auto& p : t.patterns)
      if (truth.is_distractor(p.layer_id, p.channel)) {
        ++round.distractors_total;
        if (std::find(proposed.begin(), proposed.end(), p.pattern_id) != proposed.end()) ++round.distractors_pruned;
      }
  return round;
}

}  // namespace aoglab
