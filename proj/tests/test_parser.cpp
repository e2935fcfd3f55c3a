#include "testkit.hpp"

#include "aoglab/error.hpp"
#include "aoglab/parser.hpp"

#include <doctest.h>

#include <cmath>

using namespace aoglab;

namespace {

LayerGeometry layer(int grid, int channels, double stride = 4, double offset = 2) {
  LayerGeometry g;
  g.layer_id = "L";
  g.grid_w = g.grid_h = grid;
  g.channels = channels;
  g.stride_px = stride;
  g.rf_size_px = stride * 3;
  g.offset_px = offset;
  return g;
}

FeatureMapSet zeros(const LayerGeometry& g) {
  return FeatureMapSet("img", {FeatureLayer{g, ActivationMatrix::Zero(g.grid_h * g.grid_w, g.channels)}});
}

LatentPattern pattern(std::string id, Cell center, int half, Vec2 displacement, int channel = 0) {
  LatentPattern p;
  p.pattern_id = std::move(id);
  p.layer_id = "L";
  p.channel = channel;
  p.deform_center = center;
  p.deform_half_extent = half;
  p.displacement = displacement;
  return p;
}

SemanticPartAOG one_template(std::vector<LatentPattern> patterns) {
  SemanticPartAOG aog;
  aog.part_name = "part";
  aog.templates.push_back({"T0", std::move(patterns), {8, 8}});
  return aog;
}

testkit::Instance bounded_instance(testkit::Rng& rng, std::uint64_t cap) {
  for (;;) {
    testkit::Instance in = testkit::random_instance(rng);
    if (brute_force_size(in.features, in.aog, in.frame) <= cap) return in;
  }
}

}  // namespace

TEST_CASE("score arithmetic for a single unit") {
  const LayerGeometry g = layer(8, 1);
  FeatureMapSet fm = zeros(g);
  fm.layers()[0].at(0, 3, 3) = 1.0f;
  fm.layers()[0].at(0, 4, 4) = 1.0f;
  const LatentPattern p = pattern("p", {3, 3}, 2, {0, 0});
  const AogConstants k;
  const Vec2 at33 = unit_position(g, 3, 3);

  const UnitScore zero = score_unit(fm, p, {3, 3}, at33, k);
  CHECK(zero.contribution == 1.0);

  const UnitScore deformed = score_unit(fm, p, {4, 4}, unit_position(g, 4, 4), k);
  CHECK(deformed.deform_penalty == 2.0 / 3.0);
  CHECK(deformed.geo_penalty == 0.0);
  CHECK(deformed.contribution == 1.0 - 2.0 / 3.0);
  CHECK(deformed.contribution == doctest::Approx(0.3333333333333333).epsilon(1e-15));

  const UnitScore residual = score_unit(fm, p, {3, 3}, at33 + Vec2(g.stride_px, 0), k);
  CHECK(residual.geo_penalty == 5.0);
  CHECK(residual.contribution == -4.0);

  CHECK_THROWS_AS(score_unit(fm, p, {6, 3}, at33, k), ValidationError);
}

TEST_CASE("score_pattern: flat maps pick p(R_V), ties pick the smallest (y, x)") {
  const LayerGeometry g = layer(6, 1);
  FeatureMapSet fm = zeros(g);
  fm.layers()[0].values.setConstant(0.5f);
  const LatentPattern p = pattern("p", {2, 3}, 2, {1, -2});
  const Vec2 center = unit_position(g, 2, 3) + p.displacement;
  const PatternAssignment a = score_pattern(fm, p, center, AogConstants{}, 24, 24);
  CHECK(a.unit == Cell{2, 3});
  CHECK(a.contribution == 0.5);

  // (x=2, y=1) and (x=1, y=2) are equidistant from both p(R_V) and the ideal position.
  const LatentPattern q = pattern("q", {1, 1}, 2, {0, 0});
  FeatureMapSet spikes = zeros(g);
  spikes.layers()[0].at(0, 2, 1) = 1.0f;
  spikes.layers()[0].at(0, 1, 2) = 1.0f;
  const Vec2 mid = unit_position(g, 1, 1) + Vec2(g.stride_px / 2, g.stride_px / 2);
  const PatternAssignment t = score_pattern(spikes, q, mid, AogConstants{}, 24, 24);
  CHECK(t.unit == Cell{2, 1});
}

TEST_CASE("score_template sums contributions; pruning everything gives zero") {
  const LayerGeometry g = layer(6, 2);
  FeatureMapSet fm = zeros(g);
  fm.layers()[0].at(0, 1, 1) = 0.4f;
  fm.layers()[0].at(1, 4, 4) = 0.3f;
  std::vector<LatentPattern> ps{pattern("a", {1, 1}, 0, {0, 0}, 0), pattern("b", {4, 4}, 0, {0, 0}, 1)};
  // Place both ideal positions on the same center so geometry is exact for each.
  ps[1].displacement = unit_position(g, 1, 1) - unit_position(g, 4, 4);
  PartTemplate tpl{"T", ps, {8, 8}};
  const Vec2 c = unit_position(g, 1, 1);
  const TemplateScore s = score_template(fm, tpl, c, AogConstants{}, 24, 24);
  CHECK(s.score == double(0.4f) + double(0.3f));
  CHECK(s.part_region == Rect{2, 2, 8, 8});

  for (auto& p : tpl.patterns) p.active = false;
  CHECK(score_template(fm, tpl, c, AogConstants{}, 24, 24).score == 0.0);
}

TEST_CASE("parse chooses the template with the higher score") {
  const LayerGeometry g = layer(6, 2);
  FeatureMapSet fm = zeros(g);
  fm.layers()[0].at(0, 2, 2) = 0.7f;
  fm.layers()[0].at(1, 2, 2) = 0.3f;
  SemanticPartAOG aog;
  aog.templates.push_back({"B", {pattern("b", {2, 2}, 0, {0, 0}, 1)}, {8, 8}});
  aog.templates.push_back({"A", {pattern("a", {2, 2}, 0, {0, 0}, 0)}, {8, 8}});
  const ParseTree t = parse(fm, aog, {"img", 24, 24, {0, 0, 24, 24}});
  CHECK(t.template_id == "A");
  CHECK(t.template_index == 1);
  CHECK(t.total_score == double(0.7f));
}

TEST_CASE("single spike: the part center is the spike position plus displacement") {
  const LayerGeometry g = layer(8, 1);
  FeatureMapSet fm = zeros(g);
  fm.layers()[0].at(0, 3, 2) = 1.0f;
  const SemanticPartAOG aog = one_template({pattern("p", {3, 2}, 4, {8, 4})});
  const ParseTree t = parse(fm, aog, {"img", 32, 32, {0, 0, 32, 32}});
  CHECK(t.part_center == Vec2(22, 14));
  CHECK(t.assignments.at(0).unit == Cell{3, 2});
  CHECK(t.total_score == 1.0);
}

TEST_CASE("parse rejects an AOG with nothing active") {
  const LayerGeometry g = layer(4, 1);
  SemanticPartAOG aog = one_template({pattern("p", {1, 1}, 1, {0, 0})});
  aog.templates[0].patterns[0].active = false;
  CHECK_THROWS_AS(parse(zeros(g), aog, {"img", 16, 16, {0, 0, 16, 16}}), EmptyAogError);
  CHECK_THROWS_AS(brute_force_parse(zeros(g), aog, {"img", 16, 16, {0, 0, 16, 16}}), EmptyAogError);
}

TEST_CASE("search grid: half-open lattice inside the box, nearest point when empty") {
  const SearchGrid s = SearchGrid::over({3, 0, 10, 1}, 2, 4);
  CHECK(s.xs == std::vector<double>{6, 10});
  CHECK(s.ys == std::vector<double>{2});
  CHECK(SearchGrid::over({0, 0, 8, 8}, 2, 4).xs == std::vector<double>{2, 6});
}

TEST_CASE("brute force refuses instances over the cap") {
  testkit::Rng rng(4);
  const testkit::Instance in = testkit::random_instance(rng);
  const std::uint64_t n = brute_force_size(in.features, in.aog, in.frame);
  CHECK_THROWS_AS(brute_force_parse(in.features, in.aog, in.frame, {n - 1}), Error);
  CHECK_NOTHROW(brute_force_parse(in.features, in.aog, in.frame, {n}));
}

TEST_CASE("parse equals the brute-force oracle on random instances") {
  testkit::Rng rng(1234);
  for (int i = 0; i < 60; ++i) {
    const testkit::Instance in = bounded_instance(rng, 200'000);
    const ParseTree fast = parse(in.features, in.aog, in.frame);
    const ParseTree slow = brute_force_parse(in.features, in.aog, in.frame);
    INFO("instance " << i);
    CHECK(std::abs(fast.total_score - slow.total_score) <= 1e-9);
    CHECK(fast == slow);
  }
}

TEST_CASE("decomposition identity") {
  testkit::Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    const testkit::Instance in = testkit::random_instance(rng);
    const ParseTree t = parse(in.features, in.aog, in.frame);
    double sum = 0;
    for (const auto& a : t.assignments) {
      CHECK(a.contribution == a.response - a.deform_penalty - a.geo_penalty);
      sum += a.contribution;
    }
    CHECK(std::abs(sum - t.total_score) <= 1e-9);
    CHECK(t.assignments.size() == in.aog.templates[std::size_t(t.template_index)].active_count());
  }
}
