#pragma once

#include "aoglab/aog.hpp"
#include "aoglab/error.hpp"
#include "aoglab/geometry.hpp"
#include "aoglab/tensor_store.hpp"

#include <Eigen/Core>

#include <string>
#include <vector>

namespace aoglab {

/// Euclidean distance between predicted and true part centers over the object-box diagonal.
template <typename Scalar>
Scalar normalized_distance(const Eigen::Matrix<Scalar, 2, 1>& pred, const Eigen::Matrix<Scalar, 2, 1>& gt,
                           const BasicRect<Scalar>& object_box) {
  const Scalar diag = object_box.diagonal();
  if (!(object_box.w >= Scalar(0) && object_box.h >= Scalar(0) && diag > Scalar(0)) || !std::isfinite(double(diag))) throw ValidationError("object_box", "degenerate box has no diagonal");
  return (pred - gt).norm() / diag;
}

struct EvalRow {
  std::string image_id;
  Vec2 predicted{0, 0};
  Vec2 ground_truth{0, 0};
  double normalized_distance{0};
};

struct EvalFailure {
  std::string image_id;
  std::string error;
};

struct EvalAggregate {
  double mean{0};
  double median{0};
  std::size_t count{0};
};

struct EvalReport {
  std::string category;
  std::string part;
  std::vector<EvalRow> rows;  ///< sorted by image_id
  std::vector<EvalFailure> failures;
  EvalAggregate aggregate;
  Json config = Json::object();

  /// Columns: category, part, n_images, mean_nd, median_nd.
  std::string to_csv() const;
  std::string rows_csv() const;
  std::string to_markdown() const;
};

EvalAggregate aggregate_rows(const std::vector<EvalRow>& rows);

/// Parses every record of `split` and scores the predicted part center against the center of
/// the record's first part annotation. Per-image parse errors are collected, not skipped silently.
EvalReport evaluate(const SemanticPartAOG& aog, const Dataset& ds, std::string_view split = "test");

Json to_json(const EvalReport& r);

}  // namespace aoglab
