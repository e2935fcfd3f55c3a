#include "aoglab/eval.hpp"

#include "aoglab/parser.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace aoglab {

EvalAggregate aggregate_rows(const std::vector<EvalRow>& rows) {
  EvalAggregate a;
  a.count = rows.size();
  if (rows.empty()) return a;
  std::vector<const EvalRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const EvalRow* x, const EvalRow* y) { return x->image_id < y->image_id; });
  double sum = 0;
  std::vector<double> values;
  for (const EvalRow* r : sorted) {
    sum += r->normalized_distance;
    values.push_back(r->normalized_distance);
  }
  a.mean = sum / double(rows.size());
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  a.median = n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2;
  return a;
}

EvalReport evaluate(const SemanticPartAOG& aog, const Dataset& ds, std::string_view split) {
  EvalReport report;
  report.category = ds.manifest.category;
  report.part = aog.part_name;
  report.config = {{"split", split}, {"aog_hash", aog_hash(aog)}, {"aog_provenance", aog.provenance}};
  std::vector<const ImageRecord*> records = ds.split(split);
  std::sort(records.begin(), records.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });
  for (const ImageRecord* r : records) {
    if (r->part_annotations.empty()) {
      report.failures.push_back({r->image_id, "no ground-truth part annotation"});
      continue;
    }
    try {
      const ParseTree tree = parse(ds.features_for(r->image_id), aog, ImageFrame::from(*r));
      const Vec2 gt = r->part_annotations.front().part_box.center();
      report.rows.push_back({r->image_id, tree.part_center, gt, normalized_distance(tree.part_center, gt, r->object_box)});
    } catch (const Error& e) {
      report.failures.push_back({r->image_id, e.what()});
    }
  }
  report.aggregate = aggregate_rows(report.rows);
  return report;
}

namespace {

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::string EvalReport::to_csv() const {
  std::ostringstream s;
  s << "category,part,n_images,mean_nd,median_nd\n";
  s << category << ',' << part << ',' << aggregate.count << ',' << num(aggregate.mean) << ',' << num(aggregate.median) << '\n';
  return s.str();
}

std::string EvalReport::rows_csv() const {
  std::ostringstream s;
  s << "image_id,pred_x,pred_y,gt_x,gt_y,normalized_distance\n";
  for (const auto& r : rows)
    s << r.image_id << ',' << num(r.predicted.x()) << ',' << num(r.predicted.y()) << ',' << num(r.ground_truth.x()) << ','
      << num(r.ground_truth.y()) << ',' << num(r.normalized_distance) << '\n';
  return s.str();
}

std::string EvalReport::to_markdown() const {
  std::ostringstream s;
  s << "| category | part | n_images | mean_nd | median_nd |\n|---|---|---|---|---|\n";
  s << "| " << category << " | " << part << " | " << aggregate.count << " | " << std::fixed << std::setprecision(4)
    << aggregate.mean << " | " << aggregate.median << " |\n";
  if (!failures.empty()) {
    s << "\n" << failures.size() << " image(s) failed to parse:\n";
    for (const auto& f : failures) s << "- " << f.image_id << ": " << f.error << "\n";
  }
  return s.str();
}

Json to_json(const EvalReport& r) {
  Json rows = Json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"image_id", row.image_id},
                    {"predicted_center", point_to_json(row.predicted)},
                    {"gt_center", point_to_json(row.ground_truth)},
                    {"normalized_distance", row.normalized_distance}});
  Json failures = Json::array();
  for (const auto& f : r.failures) failures.push_back({{"image_id", f.image_id}, {"error", f.error}});
  return {{"report_version", 1},
          {"category", r.category},
          {"part", r.part},
          {"aggregate", {{"mean", r.aggregate.mean}, {"median", r.aggregate.median}, {"count", r.aggregate.count}}},
          {"rows", rows},
          {"failures", failures},
          {"config", r.config}};
}

}  // namespace aoglab
