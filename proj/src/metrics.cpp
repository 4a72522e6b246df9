#include "unidgf/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "unidgf/detect.hpp"

namespace unidgf {

using nlohmann::json;

double category_accuracy(const std::vector<CategoryOutcome>& outcomes, int level) {
  if (level < 1 || level > 3) throw Error("category_accuracy: level must be 1..3");
  if (outcomes.empty()) throw Error("category_accuracy: no outcomes");
  long hits = 0;
  for (const auto& o : outcomes) {
    bool ok = true;
    for (int k = 0; k < level; ++k) ok = ok && o.predicted[k] == o.expected[k];
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double attribute_accuracy(const std::vector<AttributeOutcome>& outcomes) {
  if (outcomes.empty()) throw Error("attribute_accuracy: no outcomes");
  long hits = 0;
  for (const auto& o : outcomes) {
    hits += (o.predicted_value >= 0 && o.predicted_value == o.expected_value) ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(outcomes.size());
}

double attribute_accuracy_per_object(const std::vector<AttributeOutcome>& outcomes) {
  if (outcomes.empty()) throw Error("attribute_accuracy: no outcomes");
  std::map<std::pair<int, int>, std::pair<long, long>> per_obj;  // (hits, total)
  for (const auto& o : outcomes) {
    auto& [hits, total] = per_obj[{o.scene_id, o.object_id}];
    hits += (o.predicted_value >= 0 && o.predicted_value == o.expected_value) ? 1 : 0;
    total += 1;
  }
  double sum = 0;
  for (const auto& [key, ht] : per_obj) {
    sum += static_cast<double>(ht.first) / static_cast<double>(ht.second);
  }
  return sum / static_cast<double>(per_obj.size());
}

// ---------------------------------------------------------------------------
// mAP

ApResult mean_average_precision(const std::vector<ClassedDetection>& dets,
                                const std::vector<ClassedGroundTruth>& gts,
                                double iou_threshold) {
  for (const auto& d : dets) {
    if (d.leaf < 0) throw Error("mean_average_precision: detection without a category");
  }
  std::map<int, std::vector<int>> gt_by_class;
  for (size_t i = 0; i < gts.size(); ++i) gt_by_class[gts[i].leaf].push_back(static_cast<int>(i));
  std::map<int, std::vector<int>> det_by_class;
  for (size_t i = 0; i < dets.size(); ++i) det_by_class[dets[i].leaf].push_back(static_cast<int>(i));

  ApResult out;
  double ap_sum = 0;
  for (const auto& [leaf, gt_idx] : gt_by_class) {
    long n_gt = static_cast<long>(gt_idx.size());
    std::vector<int> order;
    if (auto it = det_by_class.find(leaf); it != det_by_class.end()) order = it->second;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
      if (dets[a].scene_id != dets[b].scene_id) return dets[a].scene_id < dets[b].scene_id;
      return a < b;
    });

    std::vector<char> gt_used(gt_idx.size(), 0);
    std::vector<char> is_tp(order.size(), 0);
    for (size_t k = 0; k < order.size(); ++k) {
      const ClassedDetection& d = dets[order[k]];
      double best_iou = 0;
      int best_g = -1;
      for (size_t g = 0; g < gt_idx.size(); ++g) {
        if (gt_used[g]) continue;
        const ClassedGroundTruth& gt = gts[gt_idx[g]];
        if (gt.scene_id != d.scene_id) continue;
        double v = iou(d.box, gt.box);
        if (v >= iou_threshold && v > best_iou) {
          best_iou = v;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g >= 0) {
        gt_used[best_g] = 1;
        is_tp[k] = 1;
      }
    }

    // precision-recall points, then 101-point interpolated AP
    std::vector<double> precision(order.size()), recall(order.size());
    long tp = 0;
    for (size_t k = 0; k < order.size(); ++k) {
      tp += is_tp[k];
      precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
      recall[k] = static_cast<double>(tp) / static_cast<double>(n_gt);
    }
    // envelope: best precision at recall >= each point, via suffix max
    std::vector<double> env = precision;
    for (int k = static_cast<int>(env.size()) - 2; k >= 0; --k) {
      env[k] = std::max(env[k], env[k + 1]);
    }
    double ap = 0;
    for (int i = 0; i <= 100; ++i) {
      double r = static_cast<double>(i) / 100.0;
      // first PR point with recall >= r
      double p = 0;
      for (size_t k = 0; k < order.size(); ++k) {
        if (recall[k] >= r) {
          p = env[k];
          break;
        }
      }
      ap += p;
    }
    ap /= 101.0;
    out.per_class[leaf] = ap;
    ap_sum += ap;
  }
  out.map = out.per_class.empty() ? 0.0 : ap_sum / static_cast<double>(out.per_class.size());
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (*v < 0.0 || *v > 1.0) throw Error("report: rate outside [0,1]");
  return *v;
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json doc;
  doc["cate_acc_l1"] = opt_to_json(report.cate_acc_l1);
  doc["cate_acc_l2"] = opt_to_json(report.cate_acc_l2);
  doc["cate_acc_l3"] = opt_to_json(report.cate_acc_l3);
  doc["cate_acc_full"] = opt_to_json(report.cate_acc_full);
  doc["attr_acc"] = opt_to_json(report.attr_acc);
  doc["attr_acc_per_object"] = opt_to_json(report.attr_acc_per_object);
  doc["map"] = opt_to_json(report.map);
  json ap = json::object();
  for (const auto& [name, v] : report.per_class_ap) ap[name] = v;
  doc["per_class_ap"] = ap;
  doc["config"] = report.config;
  return doc.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("report parse error: ") + e.what());
  }
  EvalReport r;
  r.cate_acc_l1 = opt_from_json(doc.at("cate_acc_l1"));
  r.cate_acc_l2 = opt_from_json(doc.at("cate_acc_l2"));
  r.cate_acc_l3 = opt_from_json(doc.at("cate_acc_l3"));
  r.cate_acc_full = opt_from_json(doc.at("cate_acc_full"));
  r.attr_acc = opt_from_json(doc.at("attr_acc"));
  r.attr_acc_per_object = opt_from_json(doc.at("attr_acc_per_object"));
  r.map = opt_from_json(doc.at("map"));
  for (auto it = doc.at("per_class_ap").begin(); it != doc.at("per_class_ap").end(); ++it) {
    r.per_class_ap[it.key()] = it.value().get<double>();
  }
  r.config = doc.at("config");
  return r;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report: " + path);
  out << report_to_json(report);
  if (!out) throw IoError("short write: " + path);
}

EvalReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return report_from_json(ss.str());
}

}  // namespace unidgf
