// Acceptance gate: one PASS/FAIL line per primary criterion. Exit status is the number of
// failed criteria.

#include "testkit.hpp"

#include "aoglab/eval.hpp"
#include "aoglab/interaction.hpp"
#include "aoglab/miner.hpp"
#include "aoglab/parser.hpp"
#include "aoglab/serialization.hpp"
#include "aoglab/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace aoglab;

namespace {

// Pinned tolerances.
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 10.0;
constexpr double kRecoveryThreshold = 0.05;
constexpr double kMetricScaleTol = 1e-12;
constexpr double kPruneSumTol = 1e-12;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

Outcome oracle_equivalence() {
  testkit::Rng rng(20240601);
  const auto t0 = std::chrono::steady_clock::now();
  int identical = 0;
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const testkit::Instance in = testkit::random_instance(rng);
    const ParseTree fast = parse(in.features, in.aog, in.frame);
    const ParseTree slow = brute_force_parse(in.features, in.aog, in.frame);
    const double d = std::abs(fast.total_score - slow.total_score);
    worst = std::max(worst, d);
    identical += d <= kOracleTol && fast == slow;
  }
  const double secs = seconds_since(t0);
  return {identical == 200 && secs < kOracleSeconds,
          std::to_string(identical) + "/200 identical trees, max |score delta| " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome scoring_arithmetic() {
  LayerGeometry g;
  g.layer_id = "L";
  g.grid_w = g.grid_h = 8;
  g.channels = 1;
  g.stride_px = 4;
  g.rf_size_px = 12;
  g.offset_px = 2;
  FeatureMapSet fm("img", {FeatureLayer{g, ActivationMatrix::Zero(64, 1)}});
  fm.layers()[0].at(0, 3, 3) = 1.0f;
  fm.layers()[0].at(0, 4, 4) = 1.0f;
  LatentPattern p;
  p.pattern_id = "p";
  p.layer_id = "L";
  p.deform_center = {3, 3};
  p.deform_half_extent = 2;
  const AogConstants k;
  const double deformed = score_unit(fm, p, {4, 4}, unit_position(g, 4, 4), k).contribution;
  const double residual = score_unit(fm, p, {3, 3}, unit_position(g, 3, 3) + Vec2(g.stride_px, 0), k).contribution;
  return {deformed == 1.0 - 2.0 / 3.0 && std::abs(deformed - 0.3333333333333333) < 1e-15 && residual == -4.0,
          "deformed (1,1) cell " + fmt(deformed, 16) + ", one-stride residual " + fmt(residual, 16)};
}

double mean_nd(const SemanticPartAOG& aog, const Dataset& ds) {
  const EvalReport r = evaluate(aog, ds, "test");
  if (!r.failures.empty()) return std::numeric_limits<double>::infinity();
  return r.aggregate.mean;
}

Outcome planted_recovery() {
  std::ostringstream detail;
  bool pass = true;

  // Clean recovery: three annotations, 50 test images, moderate noise.
  SyntheticConfig clean;
  clean.seed = 1;
  clean.distractors_per_layer = 0;
  const SyntheticDataset syn = generate_synthetic(clean);
  const auto ds = syn.dataset();
  MinerConfig mc;
  mc.default_patterns_per_layer = clean.patterns_per_layer;
  const double recovered = mean_nd(mine(*ds, mc), *ds);
  pass = pass && recovered <= kRecoveryThreshold;
  detail << "clean mean " << fmt(recovered) << " (<= " << kRecoveryThreshold << ")";

  // Distractor experiment over ten seeds.
  int wins = 0;
  std::size_t distractors = 0, caught = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SyntheticConfig cfg;
    cfg.seed = seed;
    const SyntheticDataset s = generate_synthetic(cfg);
    const auto d = s.dataset();
    const SemanticPartAOG mixed = inject_distractors(mine(*d, mc), *d, s.truth, 0.3);
    const PruneRound round = prune_with_annotations(mixed, d, s.truth);
    const double before = mean_nd(mixed, *d);
    const double after = mean_nd(round.aog, *d);
    wins += after <= before;
    distractors += round.distractors_total;
    caught += round.distractors_pruned;
    per_seed << (seed > 1 ? " " : "") << fmt(before, 3) << "->" << fmt(after, 3);
  }
  pass = pass && wins == 10 && caught == distractors;
  detail << "; pruned <= unpruned on " << wins << "/10 seeds [" << per_seed.str() << "]; distractors pruned " << caught << "/" << distractors;
  return {pass, detail.str()};
}

Outcome pruning_comparator() {
  testkit::Rng rng(5);
  constexpr int side = 48;
  DatasetManifest m;
  LayerGeometry g;
  g.layer_id = "L";
  g.grid_w = g.grid_h = 6;
  g.stride_px = 8;
  g.rf_size_px = 16;
  g.offset_px = 4;
  m.layer_geometries = {g};
  m.layer_groups.high = {"L"};
  ImageRecord rec;
  rec.image_id = "im";
  rec.width_px = rec.height_px = side;
  rec.object_box = rec.image_rect();
  m.records = {rec};
  m.feature_paths["im"] = "im.fmap";
  SemanticPartAOG aog;
  LatentPattern pat;
  pat.pattern_id = "p";
  pat.layer_id = "L";
  aog.templates.push_back({"T", {pat}, {8, 8}});

  auto covers = [](const Rect& r, int row, int col) {
    const double cx = col + 0.5, cy = row + 0.5;
    return r.x <= cx && cx < r.x + r.w && r.y <= cy && cy < r.y + r.h;
  };
  auto rect = [&] {
    const double x = rng.real(0, side - 1), y = rng.real(0, side - 1);
    return Rect{x, y, rng.real(0.5, side - x), rng.real(0.5, side - y)};
  };

  int disagreements = 0, proposed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Rect region = rect();
    std::vector<Rect> rects;
    for (int k = rng.integer(1, 3); k > 0; --k) rects.push_back(rect());
    SaliencyMap sal{"im", "p", Eigen::ArrayXXf(side, side)};
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) sal.values(i, j) = float(rng.real(0, covers(region, i, j) ? 1.0 : 0.05));
    const bool use_fallback = trial % 4 == 0;

    double in = 0, out = 0;
    const Vec2 c = region.center();
    bool center_in = false;
    for (const Rect& r : rects) center_in = center_in || (r.x <= c.x() && c.x() < r.x + r.w && r.y <= c.y() && c.y() < r.y + r.h);
    long area = 0, overlap = 0;
    for (int i = 0; i < side; ++i)
      for (int j = 0; j < side; ++j) {
        bool hit = false;
        for (const Rect& r : rects) hit = hit || covers(r, i, j);
        (hit ? in : out) += sal.values(i, j);
        if (covers(region, i, j)) {
          ++area;
          overlap += hit;
        }
      }
    const bool want = center_in && (use_fallback ? 2 * overlap > area : in > out);

    ParseTree tree;
    tree.image_id = "im";
    PatternAssignment a;
    a.pattern_id = "p";
    a.layer_id = "L";
    a.unit_region = region;
    tree.assignments = {a};
    SaliencyProvider provider;
    if (!use_fallback) provider = [&](const std::string&, const std::string&) { return std::optional<SaliencyMap>(sal); };
    const bool got = propose_prunes(tree, aog, m, {"im", rects, LayerGroup::High}, provider).evidence.at(0).proposed;
    disagreements += got != want;
    proposed += got;
  }
  return {disagreements == 0, std::to_string(disagreements) + " disagreements on 100 configurations (" + std::to_string(proposed) + " proposed)"};
}

Outcome metric_properties() {
  const double tri = normalized_distance(Vec2(10, 10), Vec2(13, 14), Rect{0, 0, 30, 40});
  const double same = normalized_distance(Vec2(4, 9), Vec2(4, 9), Rect{0, 0, 30, 40});
  testkit::Rng rng(6);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec2 p(rng.real(-100, 100), rng.real(-100, 100)), q(rng.real(-100, 100), rng.real(-100, 100));
    const Rect b{rng.real(-50, 50), rng.real(-50, 50), rng.real(1, 200), rng.real(1, 200)};
    const double s = i == 0 ? 7.0 : rng.real(0.01, 100);
    const double base = normalized_distance(p, q, b);
    worst = std::max(worst, std::abs(normalized_distance(Vec2(p * s), Vec2(q * s), Rect{b.x * s, b.y * s, b.w * s, b.h * s}) - base));
  }
  return {tri == 0.1 && same == 0.0 && worst <= kMetricScaleTol,
          "3-4-5 " + fmt(tri, 17) + ", identity " + fmt(same) + ", max scaling delta " + fmt(worst)};
}

/// Single-layer instance with whole-pixel geometry whose deformation ranges stay interior
/// after a one-cell shift right.
testkit::Instance shiftable(testkit::Rng& rng) {
  testkit::InstanceLimits lim;
  lim.max_layers = 1;
  lim.max_grid = 10;
  lim.max_half_extent = 2;
  for (;;) {
    testkit::Instance in = testkit::random_instance(rng, lim);
    const LayerGeometry& g = in.geometries.front();
    bool ok = g.grid_w >= 4;
    for (auto& t : in.aog.templates)
      for (auto& p : t.patterns) {
        p.displacement = p.displacement.array().round();
        ok = ok && p.deform_center.x - p.deform_half_extent >= 0 && p.deform_center.x + 1 + p.deform_half_extent <= g.grid_w - 1;
      }
    in.frame.object_box.x = std::floor(in.frame.object_box.x);
    in.frame.object_box.w = std::min(in.frame.object_box.w, in.frame.width - g.stride_px - in.frame.object_box.x);
    if (ok && in.frame.object_box.w >= 1) return in;
  }
}

Outcome invariance_suite() {
  testkit::Rng rng(7);
  int translation = 0, scaling = 0, pruning = 0, monotone = 0;

  for (int i = 0; i < 100; ++i) {
    const testkit::Instance in = shiftable(rng);
    const double stride = in.geometries.front().stride_px;
    FeatureMapSet moved_fm = in.features;
    FeatureLayer& l = moved_fm.layers()[0];
    for (int y = 0; y < l.geometry.grid_h; ++y)
      for (int c = 0; c < l.geometry.channels; ++c) {
        for (int x = l.geometry.grid_w - 1; x > 0; --x) l.at(c, x, y) = l.at(c, x - 1, y);
        l.at(c, 0, y) = 0.0f;
      }
    SemanticPartAOG moved = in.aog;
    for (auto& t : moved.templates)
      for (auto& p : t.patterns) p.deform_center.x += 1;
    ImageFrame frame = in.frame;
    frame.object_box.x += stride;
    const ParseTree a = parse(in.features, in.aog, in.frame);
    const ParseTree b = parse(moved_fm, moved, frame);
    bool ok = b.part_center == a.part_center + Vec2(stride, 0) && b.template_index == a.template_index && b.total_score == a.total_score &&
              a.assignments.size() == b.assignments.size();
    for (std::size_t k = 0; ok && k < a.assignments.size(); ++k) ok = b.assignments[k].unit == Cell{a.assignments[k].unit.x + 1, a.assignments[k].unit.y};
    translation += ok;
  }

  const std::vector<double> factors{0.125, 0.25, 0.5, 2, 4, 8, 64};
  for (int i = 0; i < 100; ++i) {
    const testkit::Instance in = testkit::random_instance(rng);
    const double c = rng.pick(factors);
    FeatureMapSet fm = in.features;
    for (auto& l : fm.layers()) l.values *= float(c);
    SemanticPartAOG aog = in.aog;
    aog.constants.lambda_def *= c;
    aog.constants.lambda_geo *= c;
    const ParseTree a = parse(in.features, in.aog, in.frame);
    const ParseTree b = parse(fm, aog, in.frame);
    bool ok = a.template_index == b.template_index && a.part_center == b.part_center && a.assignments.size() == b.assignments.size();
    for (std::size_t k = 0; ok && k < a.assignments.size(); ++k) ok = a.assignments[k].unit == b.assignments[k].unit;
    scaling += ok;
  }

  for (int i = 0; i < 100;) {
    const testkit::Instance in = testkit::random_instance(rng);
    const PartTemplate& tpl = in.aog.templates[std::size_t(rng.integer(0, int(in.aog.templates.size()) - 1))];
    const Vec2 center{rng.real(0, in.frame.width), rng.real(0, in.frame.height)};
    const TemplateScore before = score_template(in.features, tpl, center, in.aog.constants, in.frame.width, in.frame.height);
    if (before.assignments.empty()) continue;
    ++i;
    const std::size_t k = std::size_t(rng.integer(0, int(before.assignments.size()) - 1));
    PartTemplate cut = tpl;
    for (auto& p : cut.patterns)
      if (p.pattern_id == before.assignments[k].pattern_id) p.active = false;
    const TemplateScore after = score_template(in.features, cut, center, in.aog.constants, in.frame.width, in.frame.height);
    std::vector<PatternAssignment> rest = before.assignments;
    rest.erase(rest.begin() + std::ptrdiff_t(k));
    pruning += after.assignments == rest &&
               std::abs(after.score - (before.score - before.assignments[k].contribution)) <= kPruneSumTol * (1 + std::abs(before.score));
  }

  for (int i = 0; i < 100; ++i) {
    const testkit::Instance in = testkit::random_instance(rng);
    SemanticPartAOG bigger = in.aog;
    PartTemplate extra{"extra", {}, {4, 4}};
    for (int k = rng.integer(1, 4); k > 0; --k) extra.patterns.push_back(testkit::random_pattern(rng, in.geometries, "extra/p" + std::to_string(k), 1));
    bigger.templates.insert(rng.coin() ? bigger.templates.end() : bigger.templates.begin(), extra);
    monotone += parse(in.features, bigger, in.frame).total_score >= parse(in.features, in.aog, in.frame).total_score;
  }

  return {translation == 100 && scaling == 100 && pruning == 100 && monotone == 100,
          "translation " + std::to_string(translation) + "/100, rescaling " + std::to_string(scaling) + "/100, pruning " +
              std::to_string(pruning) + "/100, OR monotonicity " + std::to_string(monotone) + "/100"};
}

Outcome format_round_trips() {
  testkit::Rng rng(8);
  testkit::ScratchDir dir("acceptance");
  int fmap_ok = 0, aog_ok = 0;
  for (int i = 0; i < 100; ++i) {
    testkit::InstanceLimits lim;
    lim.max_grid = 12;
    lim.max_channels = 16;
    int w = 0, h = 0;
    const auto geoms = testkit::random_geometries(rng, lim, w, h);
    FeatureMapSet fm = testkit::random_features(rng, "im", geoms);
    // Include extreme finite values.
    fm.layers()[0].values(0, 0) = rng.coin() ? -3.4e38f : 1e-45f;
    write_feature_set(fm, dir.path / "im.fmap");
    const FeatureMapSet back = load_feature_set(dir.path / "im.fmap", geoms, "im");
    bool same = true;
    for (std::size_t l = 0; l < geoms.size(); ++l) {
      const auto& a = fm.layers()[l].values;
      const auto& b = back.layers()[l].values;
      same = same && a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(float) * std::size_t(a.size())) == 0;
    }
    fmap_ok += same;

    SemanticPartAOG aog = testkit::random_aog(rng, geoms, lim);
    aog.provenance = {{"trial", i}};
    save_aog(aog, dir.path / "aog.json");
    const SemanticPartAOG loaded = load_aog(dir.path / "aog.json");
    aog_ok += loaded == aog && aog_hash(loaded) == aog_hash(aog);
  }
  return {fmap_ok == 100 && aog_ok == 100, "FMAP " + std::to_string(fmap_ok) + "/100 bit-exact, AOG JSON " + std::to_string(aog_ok) + "/100 equal"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle-equivalence", oracle_equivalence},     {"scoring-arithmetic", scoring_arithmetic},
      {"planted-recovery", planted_recovery},         {"pruning-comparator", pruning_comparator},
      {"metric-properties", metric_properties},       {"invariance-suite", invariance_suite},
      {"format-round-trips", format_round_trips},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - std::size_t(failed)) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed;
}
