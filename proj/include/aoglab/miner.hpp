#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/tensor_store.hpp"

#include <map>
#include <optional>
#include <string>

namespace aoglab {

struct MinerConfig {
  int default_patterns_per_layer{8};
  std::map<std::string, int> patterns_per_layer;  ///< per-layer n_k overrides
  std::optional<int> half_extent_override;
  /// Only "greedy_channel" is built in; the slot exists for alternative pattern sources.
  std::string strategy{"greedy_channel"};

  int patterns_for(const std::string& layer_id) const;
  Json to_json() const;
};

/// One annotated part instance used for mining.
struct AnnotatedInstance {
  const ImageRecord* record;
  Rect part_box;
};

/// Training-split annotations of one template, in manifest order.
std::vector<AnnotatedInstance> instances_of(const Dataset& ds, std::string_view template_id);

/// Channel ranking of one layer for one template: mean over instances of the in-scope max.
struct ChannelScore {
  int channel;
  double score;
};
std::vector<ChannelScore> rank_channels(const Dataset& ds, const std::vector<AnnotatedInstance>& instances,
                                        const LayerGeometry& geometry);

/// Where a channel's peak is searched: the layer group's rule (part box for low layers, object
/// box otherwise) or always the object box.
enum class MiningScope { ByLayerGroup, ObjectBox };

/// Builds a latent pattern on a fixed channel from the per-instance argmax units inside the scope.
LatentPattern estimate_pattern(const Dataset& ds, const std::vector<AnnotatedInstance>& instances,
                               const LayerGeometry& geometry, int channel, const MinerConfig& config,
                               std::string pattern_id, MiningScope scope = MiningScope::ByLayerGroup);

/// Greedy per-channel miner: one template per annotated template id, n_k channels per layer.
SemanticPartAOG mine(const Dataset& ds, const MinerConfig& config = {});

/// Recomputes every template's canonical box as the mean annotated part-box size.
SemanticPartAOG rebuild_template_box(SemanticPartAOG aog, const Dataset& ds);
/// Same, from a manifest alone.
SemanticPartAOG rebuild_template_box(SemanticPartAOG aog, const DatasetManifest& manifest);

/// Nearest integer, exact halves rounded toward the lower value.
int round_half_down(double v);

}  // namespace aoglab
