#include "testkit.hpp"

#include "aoglab/error.hpp"
#include "aoglab/miner.hpp"
#include "aoglab/synthetic.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace aoglab;

namespace {

LayerGeometry grid4(std::string id) {
  LayerGeometry g;
  g.layer_id = std::move(id);
  g.grid_w = g.grid_h = 4;
  g.channels = 2;
  g.stride_px = 8;
  g.rf_size_px = 16;
  g.offset_px = 4;
  return g;
}

ImageRecord record(std::string id, Rect part_box, std::string tid = "T") {
  ImageRecord r;
  r.image_id = std::move(id);
  r.width_px = r.height_px = 32;
  r.object_box = {0, 0, 32, 32};
  r.part_annotations = {{std::move(tid), part_box}};
  return r;
}

DatasetManifest manifest(std::vector<LayerGeometry> geoms, std::vector<ImageRecord> records, bool low = true) {
  DatasetManifest m;
  m.category = "c";
  m.part = "p";
  m.normalize = false;
  m.layer_geometries = std::move(geoms);
  for (const auto& g : m.layer_geometries) (low ? m.layer_groups.low : m.layer_groups.high).push_back(g.layer_id);
  m.records = std::move(records);
  for (const auto& r : m.records) m.feature_paths[r.image_id] = r.image_id + ".fmap";
  return m;
}

FeatureMapSet zeros(const std::string& id, const LayerGeometry& g) {
  return FeatureMapSet(id, {FeatureLayer{g, ActivationMatrix::Zero(g.grid_h * g.grid_w, g.channels)}});
}

std::shared_ptr<const Dataset> random_dataset_once(testkit::Rng& rng) {
  testkit::InstanceLimits lim;
  lim.max_channels = 8;
  int w = 0, h = 0;
  const auto geoms = testkit::random_geometries(rng, lim, w, h);
  DatasetManifest m;
  m.category = "c";
  m.normalize = rng.coin();
  m.layer_geometries = geoms;
  m.layer_groups.low = {geoms.front().layer_id};
  for (std::size_t i = 1; i < geoms.size(); ++i) m.layer_groups.high.push_back(geoms[i].layer_id);
  std::vector<FeatureMapSet> features;
  const int n = rng.integer(1, 4);
  for (int i = 0; i < n; ++i) {
    ImageRecord r;
    r.image_id = "im" + std::to_string(i);
    r.width_px = w;
    r.height_px = h;
    r.object_box = {0, 0, double(w), double(h)};
    const double bw = rng.integer(w / 2, w), bh = rng.integer(h / 2, h);
    const Rect part{double(rng.integer(0, int(w - bw))), double(rng.integer(0, int(h - bh))), bw, bh};
    r.part_annotations = {{rng.coin() ? "A" : "B", part}};
    m.records.push_back(r);
    m.feature_paths[r.image_id] = r.image_id + ".fmap";
    features.push_back(testkit::random_features(rng, r.image_id, geoms));
  }
  return make_dataset(std::move(m), std::move(features));
}

bool has_unit_center(const LayerGeometry& g, const Rect& box) {
  for (int y = 0; y < g.grid_h; ++y)
    for (int x = 0; x < g.grid_w; ++x)
      if (box.contains(unit_position(g, x, y))) return true;
  return false;
}

/// Random dataset whose part boxes hold at least one unit center on every layer.
std::shared_ptr<const Dataset> random_dataset(testkit::Rng& rng) {
  for (;;) {
    auto ds = random_dataset_once(rng);
    bool ok = true;
    for (const auto& r : ds->manifest.records)
      for (const auto& g : ds->manifest.layer_geometries) ok = ok && has_unit_center(g, r.part_annotations[0].part_box);
    if (ok) return ds;
  }
}

}  // namespace

TEST_CASE("one annotated image: the in-part peak beats a larger out-of-part peak") {
  const LayerGeometry g = grid4("L");
  FeatureMapSet fm = zeros("im", g);
  fm.layers()[0].at(0, 1, 1) = 0.9f;
  fm.layers()[0].at(1, 3, 3) = 1.0f;
  fm.layers()[0].at(1, 1, 1) = 0.1f;
  const auto ds = make_dataset(manifest({g}, {record("im", {8, 8, 8, 8})}), {fm});
  MinerConfig cfg;
  cfg.default_patterns_per_layer = 1;
  const SemanticPartAOG aog = mine(*ds, cfg);
  REQUIRE(aog.templates.size() == 1);
  REQUIRE(aog.templates[0].patterns.size() == 1);
  const LatentPattern& p = aog.templates[0].patterns[0];
  CHECK(p.channel == 0);
  CHECK(p.deform_center == Cell{1, 1});
  CHECK(p.displacement == Vec2(0, 0));
  CHECK(p.deform_half_extent == default_half_extent(g));
  CHECK(aog.templates[0].canonical_box == BoxSize{8, 8});
}

TEST_CASE("deform center is the rounded mean of per-image peak cells") {
  const LayerGeometry g = grid4("L");
  FeatureMapSet a = zeros("a", g), b = zeros("b", g);
  a.layers()[0].at(0, 1, 1) = 1.0f;
  b.layers()[0].at(0, 3, 1) = 1.0f;
  const auto ds = make_dataset(manifest({g}, {record("a", {0, 0, 32, 32}), record("b", {0, 0, 32, 32})}, false), {a, b});
  const auto inst = instances_of(*ds, "T");
  const LatentPattern p = estimate_pattern(*ds, inst, g, 0, {}, "p");
  CHECK(p.deform_center == Cell{2, 1});
  // Part box center (16,16) minus unit positions (12,12) and (28,12), averaged.
  CHECK(p.displacement == Vec2(-4, 4));

  // An exact half rounds toward the lower index.
  CHECK(round_half_down(1.5) == 1);
  CHECK(round_half_down(1.51) == 2);
  CHECK(round_half_down(2.0) == 2);
}

TEST_CASE("channel ties go to the lower channel index") {
  const LayerGeometry g = grid4("L");
  FeatureMapSet fm = zeros("im", g);
  fm.layers()[0].values.setConstant(0.5f);
  const auto ds = make_dataset(manifest({g}, {record("im", {0, 0, 32, 32})}), {fm});
  const auto ranked = rank_channels(*ds, instances_of(*ds, "T"), g);
  CHECK(ranked[0].channel == 0);
  CHECK(ranked[1].channel == 1);
}

TEST_CASE("scope without unit centers is an error naming the layer") {
  const LayerGeometry g = grid4("conv9");
  const auto ds = make_dataset(manifest({g}, {record("im", {0, 0, 3, 3})}), {zeros("im", g)});
  try {
    mine(*ds);
    FAIL("expected a scope error");
  } catch (const ValidationError& e) {
    CHECK(e.field().find("conv9") != std::string::npos);
  }
  MinerConfig bad;
  bad.default_patterns_per_layer = 0;
  const auto ok = make_dataset(manifest({g}, {record("im", {0, 0, 32, 32})}), {zeros("im", g)});
  CHECK_THROWS_AS(mine(*ok, bad), ValidationError);
}

TEST_CASE("rebuild_template_box uses the mean annotated size") {
  const LayerGeometry g = grid4("L");
  SemanticPartAOG aog;
  aog.part_name = "p";
  aog.templates.push_back({"T", {}, {1, 1}});
  DatasetManifest one = manifest({g}, {record("a", {0, 0, 40, 30})});
  CHECK(rebuild_template_box(aog, one).templates[0].canonical_box == BoxSize{40, 30});
  DatasetManifest two = manifest({g}, {record("a", {0, 0, 40, 30}), record("b", {0, 0, 60, 50})});
  CHECK(rebuild_template_box(aog, two).templates[0].canonical_box == BoxSize{50, 40});
  DatasetManifest none = manifest({g}, {record("a", {0, 0, 40, 30}, "other")});
  CHECK_THROWS_AS(rebuild_template_box(aog, none), ValidationError);
}

TEST_CASE("mining is deterministic and top-k monotone") {
  testkit::Rng rng(55);
  for (int trial = 0; trial < 40; ++trial) {
    const auto ds = random_dataset(rng);
    MinerConfig small, large;
    small.default_patterns_per_layer = rng.integer(1, 3);
    large.default_patterns_per_layer = small.default_patterns_per_layer + rng.integer(1, 4);
    const SemanticPartAOG a = mine(*ds, small);
    CHECK(mine(*ds, small) == a);
    const SemanticPartAOG b = mine(*ds, large);
    REQUIRE(a.templates.size() == b.templates.size());
    for (std::size_t t = 0; t < a.templates.size(); ++t)
      for (const auto& p : a.templates[t].patterns) {
        const auto& big = b.templates[t].patterns;
        const auto hit = std::find_if(big.begin(), big.end(), [&](const LatentPattern& q) { return q.pattern_id == p.pattern_id; });
        REQUIRE(hit != big.end());
        CHECK(*hit == p);
      }
  }
}

TEST_CASE("kept channels have the highest mean in-scope peaks") {
  testkit::Rng rng(56);
  for (int trial = 0; trial < 40; ++trial) {
    const auto ds = random_dataset(rng);
    MinerConfig cfg;
    cfg.default_patterns_per_layer = rng.integer(1, 4);
    const SemanticPartAOG aog = mine(*ds, cfg);
    for (const auto& tpl : aog.templates) {
      const auto inst = instances_of(*ds, tpl.template_id);
      for (const auto& g : ds->manifest.layer_geometries) {
        // Independent score: mean over instances of the max over units whose center is in scope.
        std::vector<double> score(std::size_t(g.channels), 0.0);
        for (const auto& in : inst) {
          const Rect scope = ds->manifest.layer_groups.group_of(g.layer_id) == LayerGroup::Low ? in.part_box : in.record->object_box;
          const FeatureLayer& l = ds->features_for(in.record->image_id).layer(g.layer_id);
          for (int c = 0; c < g.channels; ++c) {
            double best = -1e300;
            for (int y = 0; y < g.grid_h; ++y)
              for (int x = 0; x < g.grid_w; ++x) {
                const Vec2 p = unit_position(g, x, y);
                if (p.x() >= scope.x && p.x() < scope.x + scope.w && p.y() >= scope.y && p.y() < scope.y + scope.h)
                  best = std::max(best, double(l.at(c, x, y)));
              }
            score[std::size_t(c)] += best;
          }
        }
        std::vector<int> order(std::size_t(g.channels));
        for (int c = 0; c < g.channels; ++c) order[std::size_t(c)] = c;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score[std::size_t(a)] > score[std::size_t(b)]; });
        std::vector<int> kept;
        for (const auto& p : tpl.patterns)
          if (p.layer_id == g.layer_id) kept.push_back(p.channel);
        order.resize(std::min<std::size_t>(order.size(), std::size_t(cfg.default_patterns_per_layer)));
        CHECK(kept == order);
      }
    }
  }
}

TEST_CASE("mined displacements reproduce planted ones within a stride") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    cfg.distractors_per_layer = 0;
    cfg.test_images = 1;
    const SyntheticDataset syn = generate_synthetic(cfg);
    const auto ds = syn.dataset();
    MinerConfig mc;
    mc.default_patterns_per_layer = syn.config.patterns_per_layer;
    const SemanticPartAOG aog = mine(*ds, mc);
    int compared = 0;
    for (const auto& planted : syn.truth.planted) {
      const PartTemplate& tpl = *std::find_if(aog.templates.begin(), aog.templates.end(),
                                              [&](const PartTemplate& t) { return t.template_id == planted.template_id; });
      for (const auto& p : tpl.patterns)
        if (p.layer_id == planted.layer_id && p.channel == planted.channel) {
          const double stride = ds->manifest.geometry(p.layer_id).stride_px;
          INFO(p.pattern_id);
          CHECK((p.displacement - planted.displacement).norm() <= stride);
          ++compared;
        }
    }
    CHECK(compared == int(syn.truth.planted.size()));
  }
}
