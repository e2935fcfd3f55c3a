#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/tensor_store.hpp"

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace aoglab {

/// Image-resolution float raster, rows = height.
using Heatmap = Eigen::ArrayXXf;

/// Splats the responses of every cell within the layer's viz window around the pattern's
/// assigned unit over that cell's receptive field (max-accumulated). Everything else is zero.
Heatmap pattern_heatmap(const FeatureMapSet& fm, const LatentPattern& pattern, const ParseTree& tree, int width, int height);

struct PatternHeatmap {
  std::string pattern_id;
  Heatmap heatmap;
};

struct HeatmapLayer {
  std::string image_id;
  LayerGroup group{LayerGroup::Low};
  std::vector<PatternHeatmap> patterns;
  Heatmap composite;  ///< pointwise max over patterns
};

/// Heatmaps of the tree's assigned patterns whose layer belongs to `group`.
HeatmapLayer group_heatmaps(const FeatureMapSet& fm, const SemanticPartAOG& aog, const ParseTree& tree,
                            const LayerGroups& groups, LayerGroup group, int width, int height);

struct Overlay {
  std::string png;
  Json layout;
};

/// Grayscale PNG of the composite heat (optionally alpha-blended over a base image in [0, 1])
/// with the parsed part box outlined, plus a layout document listing every assigned pattern.
Overlay render_overlay(const std::string& image_id, const std::vector<PatternHeatmap>& heatmaps, const ParseTree& tree,
                       const SemanticPartAOG& aog, const LayerGroups& groups, int width, int height,
                       std::optional<LayerGroup> group = std::nullopt, const Heatmap* base_image = nullptr,
                       float base_alpha = 0.5f);

/// 8-bit grayscale PNG encoder (rows = height).
std::string encode_png_gray(const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& pixels);

}  // namespace aoglab
