#pragma once

#include <array>
#include <vector>

#include "unidgf/nn.hpp"
#include "unidgf/scenegen.hpp"
#include "unidgf/vision.hpp"

namespace unidgf {

struct Detection {
  Box box;
  double score = 0;  // objectness in [0,1]
};

double iou(const Box& a, const Box& b);

// Greedy class-agnostic suppression: keep the highest score, drop boxes with
// IoU > threshold against it, repeat. Ties break toward the lower index.
// Returns indices into dets of the kept boxes, in keep order.
std::vector<int> nms(const std::vector<Detection>& dets, double iou_threshold);

struct DetectorConfig {
  int backbone_dim = 64;
  int stride = 8;
  int hidden = 96;
  double prior = 24.0;  // box side at zero w/h offsets, in pixels
};

// Single-stage head over the frozen backbone grid. Each cell sees its 3x3
// feature neighborhood and emits [objectness, tx, ty, tw, th]; offsets are
// sigmoid in-cell center shifts and log-scale extents around the prior.
class DetectorHead {
 public:
  DetectorHead(const DetectorConfig& cfg, ParamStore& store, Rng& rng,
               bool requires_grad = true);

  // [cells, 9*backbone_dim] constant input rows for one map
  Tensor neighborhood_tokens(const FeatureMap& fmap) const;
  // rows [N, 9*dim] -> [N, 5] raw predictions on the tape
  Tensor forward_cells(const Tensor& cells) const;

  // decoded detections above the objectness floor
  std::vector<Detection> forward(const FeatureMap& fmap, double obj_floor) const;

  const DetectorConfig& config() const { return cfg_; }

  static std::array<Scalar, 4> encode_box(const Box& box, int cell_x, int cell_y,
                                          int stride, double prior);
  static Box decode_box(Scalar tx, Scalar ty, Scalar tw, Scalar th, int cell_x,
                        int cell_y, int stride, double prior);

 private:
  DetectorConfig cfg_;
  LinearParams fc1_, fc2_;
};

// Per-scene training targets: objectness per cell plus offsets at positives.
// The positive cell is the one containing the box center; when two objects
// share a cell the larger area wins.
struct DetectorTargets {
  std::vector<Scalar> objectness;       // [cells]
  std::vector<int> positive_cells;      // row indices
  std::vector<Scalar> positive_offsets; // [npos * 4]
};

DetectorTargets build_detector_targets(const SceneRecord& scene, int fmap_h,
                                       int fmap_w, int stride, double prior);

// BCE on objectness (positives upweighted) + L1 on offsets at positive cells.
Tensor detector_loss(const Tensor& raw, const DetectorTargets& targets,
                     Scalar pos_weight = 8.0f, Scalar offset_weight = 2.0f);

struct JitterParams {
  double sigma = 0;
  double drop_rate = 0;
  double dup_rate = 0;
  uint64_t seed = 0;
};

struct ProposalSource {
  enum class Mode { GroundTruth, Jitter, Model };
  Mode mode = Mode::GroundTruth;
  JitterParams jitter;
  const DetectorHead* head = nullptr;  // Model mode
  double nms_thresh = 0.5;
  double obj_floor = 0.3;
};

// Ground-truth mode returns manifest boxes with score 1; jitter perturbs,
// drops and duplicates them deterministically from (seed, scene index);
// model mode runs the detector head plus NMS. fmap may be null except in
// model mode.
std::vector<Detection> propose(const ProposalSource& source, const SceneRecord& scene,
                               const FeatureMap* fmap);

}  // namespace unidgf
