#pragma once

#include "aoglab/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aoglab {

enum class LayerGroup { Low, Mid, High };

std::string_view to_string(LayerGroup g);
/// Accepts "low", "mid", "high".
LayerGroup parse_layer_group(std::string_view s);

/// Grid shape and receptive-field geometry of one (merged) conv-layer.
struct LayerGeometry {
  std::string layer_id;
  int grid_h{1};
  int grid_w{1};
  int channels{1};
  double stride_px{1};
  double rf_size_px{1};
  double offset_px{0};
  int viz_window{1};

  /// 3 for grids with side >= 56, else 1.
  static int default_viz_window(int grid_h, int grid_w);
  void validate(const std::string& field) const;
  bool operator==(const LayerGeometry&) const = default;
};

/// grid_h*grid_w rows (row index y*grid_w + x), one column per channel. Row-major so the
/// memory layout matches the FMAP payload (channel fastest).
using ActivationMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct FeatureLayer {
  LayerGeometry geometry;
  ActivationMatrix values;

  float at(int channel, int x, int y) const { return values(y * geometry.grid_w + x, channel); }
  float& at(int channel, int x, int y) { return values(y * geometry.grid_w + x, channel); }
};

/// Per-image activation tensors, keyed by layer id. Layer order follows the geometry list.
class FeatureMapSet {
 public:
  FeatureMapSet() = default;
  FeatureMapSet(std::string image_id, std::vector<FeatureLayer> layers);

  const std::string& image_id() const { return image_id_; }
  const std::vector<FeatureLayer>& layers() const { return layers_; }
  std::vector<FeatureLayer>& layers() { return layers_; }

  const FeatureLayer& layer(std::string_view layer_id) const;
  bool has_layer(std::string_view layer_id) const;
  /// Smallest stride among the layers; unit of the geometric residual and of the search grid.
  const LayerGeometry& finest() const;

 private:
  std::string image_id_;
  std::vector<FeatureLayer> layers_;
};

/// Stored activation at (layer, channel, x, y). Throws on out-of-range indices.
float unit_response(const FeatureMapSet& fm, std::string_view layer_id, int channel, int x, int y);

struct UnitField {
  Vec2 center;  ///< pre-clip receptive-field center, p(Lambda_T)
  Rect box;     ///< receptive field clipped to the image
};

/// Image-plane receptive field of grid cell (x, y).
UnitField receptive_field(const LayerGeometry& g, int x, int y, double image_w, double image_h);
/// Unclipped center only.
Vec2 unit_position(const LayerGeometry& g, int x, int y);

struct PartAnnotation {
  std::string template_id;
  Rect part_box;
  bool operator==(const PartAnnotation&) const = default;
};

struct ImageRecord {
  std::string image_id;
  int width_px{0};
  int height_px{0};
  Rect object_box;
  std::vector<PartAnnotation> part_annotations;
  std::string split{"train"};  ///< "train" (mining) or "test" (evaluation)

  Rect image_rect() const { return {0, 0, double(width_px), double(height_px)}; }
  void validate(const std::string& field) const;
  bool operator==(const ImageRecord&) const = default;
};

struct LayerGroups {
  std::vector<std::string> low;
  std::vector<std::string> mid;
  std::vector<std::string> high;

  const std::vector<std::string>& members(LayerGroup g) const;
  /// Group containing layer_id; throws NotFoundError.
  LayerGroup group_of(std::string_view layer_id) const;
  bool operator==(const LayerGroups&) const = default;
};

struct SaliencyRef {
  std::string image_id;
  std::string pattern_id;
  std::string path;
  bool operator==(const SaliencyRef&) const = default;
};

struct DatasetManifest {
  std::string category;
  std::string part;
  bool normalize{true};
  std::vector<LayerGeometry> layer_geometries;
  LayerGroups layer_groups;
  std::vector<ImageRecord> records;
  std::map<std::string, std::string> feature_paths;
  std::vector<SaliencyRef> saliency_paths;

  const ImageRecord& record(std::string_view image_id) const;
  const LayerGeometry& geometry(std::string_view layer_id) const;
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// One layer as stored in an FMAP container, before validation against a geometry.
struct RawLayer {
  std::string layer_id;
  int grid_h{0};
  int grid_w{0};
  int channels{0};
  std::vector<float> values;
};

std::vector<RawLayer> read_fmap(const std::filesystem::path& path);
std::vector<RawLayer> decode_fmap(std::string_view bytes);
std::string encode_fmap(std::span<const RawLayer> layers);
void write_fmap(std::span<const RawLayer> layers, const std::filesystem::path& path);

/// Writes a feature set as FMAP (layers in stored order).
void write_feature_set(const FeatureMapSet& fm, const std::filesystem::path& path);

/// Reads and validates one FMAP file. Every geometry must be present with a matching shape.
/// With `normalize`, each channel is divided by its max over this file.
FeatureMapSet load_feature_set(const std::filesystem::path& path, std::span<const LayerGeometry> geometries,
                               std::string image_id = {}, bool normalize = false);

/// Divides every (layer, channel) by its max over all sets; zero-max channels stay zero.
/// Negative activations are clamped to zero.
void normalize_channels(std::span<FeatureMapSet> sets);

/// A manifest with all feature tensors resident. Immutable once built.
struct Dataset {
  DatasetManifest manifest;
  std::filesystem::path root;  ///< directory relative paths in the manifest resolve against
  std::map<std::string, FeatureMapSet> features;

  const FeatureMapSet& features_for(std::string_view image_id) const;
  std::vector<const ImageRecord*> split(std::string_view name) const;
};

/// Loads a manifest and every feature file it names, applying dataset-wide normalization
/// when the manifest enables it.
std::shared_ptr<const Dataset> load_dataset(const std::filesystem::path& manifest_path);
/// Same, from an in-memory manifest and already-loaded (unnormalized) features.
std::shared_ptr<const Dataset> make_dataset(DatasetManifest manifest, std::vector<FeatureMapSet> features,
                                            std::filesystem::path root = {});

}  // namespace aoglab
