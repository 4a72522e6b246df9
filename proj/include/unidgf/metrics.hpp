#pragma once

#include <json.hpp>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unidgf/scenegen.hpp"

namespace unidgf {

// Evaluation inputs are plain token indices so the metrics stay independent
// of the model and tree internals.

struct CategoryOutcome {
  std::array<int, 3> predicted;  // per-level category indices (a, b, c)
  std::array<int, 3> expected;
};

// level 1..3: the first k levels must all match; the full path equals level 3
double category_accuracy(const std::vector<CategoryOutcome>& outcomes, int level);

struct AttributeOutcome {
  int scene_id = 0;
  int object_id = 0;
  int predicted_value = -1;  // -1 when decoding reported no attribute
  int expected_value = -1;
};

// fraction of (object, property) pairs with the exact expected value; the
// denominator is every ground-truth attribute triplet
double attribute_accuracy(const std::vector<AttributeOutcome>& outcomes);
// mean over objects of their per-triplet rates (also emitted in reports)
double attribute_accuracy_per_object(const std::vector<AttributeOutcome>& outcomes);

struct ClassedDetection {
  int scene_id = 0;
  Box box;
  int leaf = -1;  // predicted leaf-category index
  double score = 0;
};

struct ClassedGroundTruth {
  int scene_id = 0;
  Box box;
  int leaf = -1;
};

struct ApResult {
  double map = 0;
  std::map<int, double> per_class;  // leaf index -> AP, classes with >= 1 GT
};

// Class-aware matching (same scene, same leaf), greedy by descending score to
// the unmatched GT of highest IoU >= threshold; AP by 101-point interpolation;
// mAP averages classes with at least one GT instance.
ApResult mean_average_precision(const std::vector<ClassedDetection>& dets,
                                const std::vector<ClassedGroundTruth>& gts,
                                double iou_threshold = 0.85);

struct EvalReport {
  std::optional<double> cate_acc_l1;
  std::optional<double> cate_acc_l2;
  std::optional<double> cate_acc_l3;
  std::optional<double> cate_acc_full;
  std::optional<double> attr_acc;
  std::optional<double> attr_acc_per_object;
  std::optional<double> map;
  std::map<std::string, double> per_class_ap;  // leaf name -> AP
  nlohmann::json config = nlohmann::json::object();

  bool operator==(const EvalReport&) const = default;
};

// Deterministic JSON with the frozen field names; absent metrics are nulls.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
void write_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

}  // namespace unidgf
