#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/eval.hpp"
#include "aoglab/interaction.hpp"
#include "aoglab/miner.hpp"
#include "aoglab/tensor_store.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace aoglab {

/// Planted-ground-truth dataset generator settings.
struct SyntheticConfig {
  std::uint64_t seed{1};
  int image_w{112};
  int image_h{112};
  std::vector<LayerGeometry> layers;  ///< empty: three-layer default pyramid
  LayerGroups groups;                 ///< empty: one layer per group, in order
  int templates{3};
  int patterns_per_layer{4};  ///< planted channels per template per layer
  /// Responses are left unnormalized by default so that blob strength relative to the
  /// deformation and geometric penalties is a dataset property rather than always 1.
  double blob_amplitude{20.0};
  bool normalize{false};  ///< written to the manifest
  double blob_sigma_cells{0.8};
  double noise_amplitude{4.0};  ///< background noise ~ U[0, noise_amplitude]
  int distractors_per_layer{2};
  int train_per_template{1};
  int test_images{50};
  double part_jitter_px{12};  ///< part centers are drawn uniformly from image center +- jitter
  double displacement_max_px{24};
  double low_displacement_max_px{8};  ///< low-group blobs stay inside the part box
  double part_box_px{24};
  int distractor_jitter_cells{1};
  std::string category{"synthetic"};
  std::string part{"part"};

  /// Fills in default layers/groups and checks counts.
  SyntheticConfig resolved() const;
  Json to_json() const;
  static SyntheticConfig from_json(const Json& j);
};

struct PlantedPattern {
  std::string template_id;
  std::string layer_id;
  int channel;
  Vec2 displacement;  ///< pixels, blob position -> part center
};

struct DistractorChannel {
  std::string layer_id;
  int channel;
  Cell home;
};

struct DistractorPlacement {
  std::string layer_id;
  int channel;
  Cell cell;
};

struct SyntheticImageTruth {
  std::string image_id;
  std::string template_id;
  std::string split;
  Vec2 part_center;
  std::vector<DistractorPlacement> distractors;
};

struct GroundTruth {
  std::uint64_t seed{0};
  std::vector<PlantedPattern> planted;
  std::vector<DistractorChannel> distractors;
  std::vector<SyntheticImageTruth> images;

  const SyntheticImageTruth& image(std::string_view image_id) const;
  bool is_distractor(std::string_view layer_id, int channel) const;
};

Json to_json(const GroundTruth& gt);

struct SyntheticDataset {
  SyntheticConfig config;
  DatasetManifest manifest;
  std::vector<FeatureMapSet> features;  ///< raw, before normalization
  GroundTruth truth;

  std::shared_ptr<const Dataset> dataset() const;
  /// manifest.json, features/<image>.fmap, ground_truth.json
  void write(const std::filesystem::path& dir) const;
};

/// Throws ValidationError when a planted blob falls outside a grid.
SyntheticDataset generate_synthetic(const SyntheticConfig& config);

/// Appends distractor patterns (pattern ids ending in "/distractor") to every template so that
/// about `fraction` of each template's patterns are distractors. Each is estimated like a mined
/// pattern, with the whole object box as scope.
SemanticPartAOG inject_distractors(const SemanticPartAOG& aog, const Dataset& ds, const GroundTruth& truth, double fraction);

/// Ground-truth "irrelevant region" annotation for one image and group: the receptive fields of
/// the planted distractor blobs, clipped to the image. nullopt when the group has none.
std::optional<AnnotatedRegionSet> distractor_annotation(const Dataset& ds, const GroundTruth& truth, const std::string& image_id,
                                                        LayerGroup group);

struct PruneRound {
  SemanticPartAOG aog;
  std::vector<std::string> pruned;
  std::size_t distractors_total{0};
  std::size_t distractors_pruned{0};
};

/// Parses each training image, proposes prunes for the ground-truth annotations of every group
/// (fallback saliency), and applies the union of proposals.
PruneRound prune_with_annotations(const SemanticPartAOG& aog, std::shared_ptr<const Dataset> ds, const GroundTruth& truth);

}  // namespace aoglab
