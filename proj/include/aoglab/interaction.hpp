#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/parser.hpp"
#include "aoglab/tensor_store.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace aoglab {

/// Human-annotated regions that should not drive localization, aimed at one layer group.
/// "background" targets the high group, "outside_part_box" the low group.
struct AnnotatedRegionSet {
  std::string image_id;
  std::vector<Rect> rectangles;
  LayerGroup scope{LayerGroup::High};

  void validate(const ImageRecord& record) const;
  bool operator==(const AnnotatedRegionSet&) const = default;
};

/// Accepts low/mid/high and the rule aliases background/outside_part_box.
LayerGroup parse_annotation_scope(std::string_view s);

/// Per-pixel score sensitivity magnitudes; rows = image height.
struct SaliencyMap {
  std::string image_id;
  std::string pattern_id;
  Eigen::ArrayXXf values;

  void validate(int width, int height) const;
};

/// Returns a map for (image, pattern) when one was supplied, nullopt to use the fallback.
using SaliencyProvider = std::function<std::optional<SaliencyMap>(const std::string& image_id, const std::string& pattern_id)>;

/// Uniform mass 1/|Lambda_V| over the pixels of the pattern's parsed region, zero elsewhere.
SaliencyMap fallback_saliency(const PatternAssignment& assignment, const std::string& image_id, int width, int height);

struct SaliencyMass {
  double inside{0};
  double outside{0};
};

/// Saliency mass inside / outside the annotated union, accumulated in raster order.
SaliencyMass split_mass(const SaliencyMap& map, const RegionMask& annotated);

struct PruneEvidence {
  std::string pattern_id;
  std::string layer_id;
  LayerGroup group{LayerGroup::Low};
  Vec2 region_center{0, 0};
  bool center_inside{false};  ///< condition 1: center-of-region containment
  double inside_mass{0};
  double outside_mass{0};
  bool saliency_supplied{false};
  bool proposed{false};
};

struct ProposalReport {
  std::string image_id;
  LayerGroup scope{LayerGroup::High};
  std::vector<PruneEvidence> evidence;

  std::vector<std::string> proposed_ids() const;
};

/// Evaluates the pruning inequality for every assigned pattern of the tree in the scoped group.
ProposalReport propose_prunes(const ParseTree& tree, const SemanticPartAOG& aog, const DatasetManifest& manifest,
                              const AnnotatedRegionSet& regions, const SaliencyProvider& saliency = {});

/// Provider reading FMAP saliency files listed in the manifest.
SaliencyProvider manifest_saliency(std::shared_ptr<const Dataset> dataset);
SaliencyMap load_saliency(const std::filesystem::path& path, const std::string& image_id, const std::string& pattern_id);

struct PruneOp {
  std::vector<std::string> pattern_ids;
  std::int64_t timestamp_ms{0};
  std::optional<AnnotatedRegionSet> annotation;
  bool operator==(const PruneOp&) const = default;
};

/// Undoable editing session over one AOG. Replaying `stack` over `base` yields `current`.
struct InteractionSession {
  std::string session_id;
  std::string manifest_ref;
  std::shared_ptr<const Dataset> dataset;
  SemanticPartAOG base;
  std::vector<PruneOp> stack;
  SemanticPartAOG current;
  std::map<std::string, ParseTree> trees;  ///< current parse per working image
  std::optional<std::string> active_image;

  static InteractionSession open(std::string session_id, std::shared_ptr<const Dataset> dataset, SemanticPartAOG base,
                                 std::string manifest_ref = {});
};

/// Replays the operation stack over the base AOG.
SemanticPartAOG replay(const SemanticPartAOG& base, const std::vector<PruneOp>& stack);

/// Parses an image with the session's current AOG and makes it a working image.
InteractionSession parse_image(InteractionSession session, const std::string& image_id);

ProposalReport propose_prunes(const InteractionSession& session, const AnnotatedRegionSet& regions,
                              const SaliencyProvider& saliency = {});

/// Pushes one operation deactivating `pattern_ids` and re-parses every working image.
InteractionSession apply_prunes(InteractionSession session, const std::vector<std::string>& pattern_ids,
                                std::optional<AnnotatedRegionSet> annotation = std::nullopt, std::int64_t timestamp_ms = 0);
/// Pops k operations and re-parses every working image.
InteractionSession undo(InteractionSession session, std::size_t k);

Json to_json(const AnnotatedRegionSet& r);
AnnotatedRegionSet annotated_regions_from_json(const Json& j);
Json to_json(const ProposalReport& r);
Json to_json(const InteractionSession& s);
/// Rebuilds a session from its JSON form; working images are re-parsed.
InteractionSession session_from_json(const Json& j, std::shared_ptr<const Dataset> dataset);

}  // namespace aoglab
