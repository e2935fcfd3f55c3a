#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/tensor_store.hpp"

#include <cstdint>
#include <vector>

namespace aoglab {

/// Image the parser works on: its extent and the object box the part must lie in.
struct ImageFrame {
  std::string image_id;
  double width{0};
  double height{0};
  Rect object_box;

  static ImageFrame from(const ImageRecord& r) { return {r.image_id, double(r.width_px), double(r.height_px), r.object_box}; }
};

/// Candidate part centers: the finest layer's unit lattice restricted to the object box.
struct SearchGrid {
  std::vector<double> xs;
  std::vector<double> ys;

  /// Lattice offset + k*step inside [box.x, box.right()) x [box.y, box.bottom()); when an
  /// axis has no lattice point inside, the lattice point nearest the box center is used.
  static SearchGrid over(const Rect& object_box, double offset_px, double step_px);
  static SearchGrid for_features(const FeatureMapSet& fm, const Rect& object_box);
  std::size_t size() const { return xs.size() * ys.size(); }
};

struct UnitScore {
  double response{0};
  double deform_penalty{0};
  double geo_penalty{0};
  double contribution{0};
};

/// Unit score: response minus the deformation penalty (cells from p(R_V)) minus
/// the geometric penalty (pixels / finest stride between p(Lambda_V) + displacement and the part center).
/// Throws ValidationError when the unit is outside the pattern's deformation range.
UnitScore score_unit(const FeatureMapSet& fm, const LatentPattern& pattern, Cell unit, const Vec2& part_center,
                     const AogConstants& constants);

/// Best unit of one pattern for a fixed part center (ties: smallest (y, x)).
PatternAssignment score_pattern(const FeatureMapSet& fm, const LatentPattern& pattern, const Vec2& part_center,
                                const AogConstants& constants, double image_w, double image_h);

struct TemplateScore {
  double score{0};
  Rect part_region;
  std::vector<PatternAssignment> assignments;
};

/// Sum of best-unit contributions over the template's active patterns (empty sum is 0).
TemplateScore score_template(const FeatureMapSet& fm, const PartTemplate& tpl, const Vec2& part_center,
                             const AogConstants& constants, double image_w, double image_h);

/// Best parse over templates x search-grid centers. Ties: higher score, then lower template
/// index, then smallest center (y, x). Throws EmptyAogError when nothing is active.
ParseTree parse(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame);

struct BruteForceOptions {
  std::uint64_t max_evaluations{10'000'000};
};

/// Exhaustive enumeration over every (template, center, unit tuple); the testing oracle for
/// parse. Throws Error when the enumeration would exceed the cap.
ParseTree brute_force_parse(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame,
                            BruteForceOptions options = {});

/// Number of (template, center, tuple) combinations brute_force_parse would visit.
std::uint64_t brute_force_size(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ImageFrame& frame);

}  // namespace aoglab
