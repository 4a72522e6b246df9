#include "unidgf/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace unidgf {

double iou(const Box& a, const Box& b) {
  if (a.w <= 0 || a.h <= 0 || b.w <= 0 || b.h <= 0) {
    throw Error("iou: nonpositive box extent");
  }
  double x0 = std::max(a.x, b.x);
  double y0 = std::max(a.y, b.y);
  double x1 = std::min(a.x + a.w, b.x + b.w);
  double y1 = std::min(a.y + a.h, b.y + b.h);
  double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  double uni = a.area() + b.area() - inter;
  return inter / uni;
}

std::vector<int> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold > 1.0) {
    throw Error("nms: threshold must lie in (0,1]");
  }
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<int> kept;
  std::vector<char> removed(dets.size(), 0);
  for (int i : order) {
    if (removed[i]) continue;
    kept.push_back(i);
    for (int j : order) {
      if (j == i || removed[j]) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) removed[j] = 1;
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Detector head

DetectorHead::DetectorHead(const DetectorConfig& cfg, ParamStore& store, Rng& rng,
                           bool requires_grad)
    : cfg_(cfg) {
  fc1_ = make_linear(store, "detector.fc1", 9 * cfg.backbone_dim, cfg.hidden, rng,
                     requires_grad);
  fc2_ = make_linear(store, "detector.fc2", cfg.hidden, 5, rng, requires_grad);
}

Tensor DetectorHead::neighborhood_tokens(const FeatureMap& fmap) const {
  const int h = fmap.height, w = fmap.width, d = fmap.channels;
  if (d != cfg_.backbone_dim) throw Error("detector: feature dim mismatch");
  std::vector<Scalar> rows(static_cast<size_t>(h) * w * 9 * d, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Scalar* row = rows.data() + (static_cast<size_t>(y) * w + x) * 9 * d;
      for (int ky = -1; ky <= 1; ++ky) {
        for (int kx = -1; kx <= 1; ++kx) {
          int yy = y + ky, xx = x + kx;
          Scalar* dst = row + ((ky + 1) * 3 + (kx + 1)) * d;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero padding
          std::memcpy(dst, fmap.data.data() + (static_cast<size_t>(yy) * w + xx) * d,
                      sizeof(Scalar) * d);
        }
      }
    }
  }
  return Tensor::from_data({h * w, 9 * d}, std::move(rows));
}

Tensor DetectorHead::forward_cells(const Tensor& cells) const {
  return linear(gelu(linear(cells, fc1_)), fc2_);
}

std::array<Scalar, 4> DetectorHead::encode_box(const Box& box, int cell_x, int cell_y,
                                               int stride, double prior) {
  double fx = box.cx() / stride - cell_x;
  double fy = box.cy() / stride - cell_y;
  fx = std::clamp(fx, 1e-4, 1.0 - 1e-4);
  fy = std::clamp(fy, 1e-4, 1.0 - 1e-4);
  return {static_cast<Scalar>(std::log(fx / (1.0 - fx))),
          static_cast<Scalar>(std::log(fy / (1.0 - fy))),
          static_cast<Scalar>(std::log(box.w / prior)),
          static_cast<Scalar>(std::log(box.h / prior))};
}

Box DetectorHead::decode_box(Scalar tx, Scalar ty, Scalar tw, Scalar th, int cell_x,
                             int cell_y, int stride, double prior) {
  double cx = (cell_x + 1.0 / (1.0 + std::exp(-static_cast<double>(tx)))) * stride;
  double cy = (cell_y + 1.0 / (1.0 + std::exp(-static_cast<double>(ty)))) * stride;
  double w = prior * std::exp(static_cast<double>(tw));
  double h = prior * std::exp(static_cast<double>(th));
  return Box{cx - w / 2, cy - h / 2, w, h};
}

std::vector<Detection> DetectorHead::forward(const FeatureMap& fmap,
                                             double obj_floor) const {
  Tensor raw = forward_cells(neighborhood_tokens(fmap));
  const int w = fmap.width;
  std::vector<Detection> out;
  for (long cell = 0; cell < raw.dim(0); ++cell) {
    const Scalar* r = raw.values().data() + cell * 5;
    double score = 1.0 / (1.0 + std::exp(-static_cast<double>(r[0])));
    if (score < obj_floor) continue;
    int cy = static_cast<int>(cell) / w, cx = static_cast<int>(cell) % w;
    Box b = decode_box(r[1], r[2], r[3], r[4], cx, cy, fmap.stride, cfg_.prior);
    // clip to the image extent implied by the map
    double iw = static_cast<double>(w) * fmap.stride;
    double ih = static_cast<double>(fmap.height) * fmap.stride;
    double x0 = std::clamp(b.x, 0.0, iw - 1);
    double y0 = std::clamp(b.y, 0.0, ih - 1);
    double x1 = std::clamp(b.x + b.w, x0 + 1e-3, iw);
    double y1 = std::clamp(b.y + b.h, y0 + 1e-3, ih);
    out.push_back({Box{x0, y0, x1 - x0, y1 - y0}, score});
  }
  return out;
}

DetectorTargets build_detector_targets(const SceneRecord& scene, int fmap_h,
                                       int fmap_w, int stride, double prior) {
  DetectorTargets t;
  t.objectness.assign(static_cast<size_t>(fmap_h) * fmap_w, 0.0f);
  std::vector<double> area(t.objectness.size(), -1.0);
  std::vector<std::array<Scalar, 4>> offsets(t.objectness.size());
  for (const auto& obj : scene.objects) {
    int cx = std::clamp(static_cast<int>(obj.box.cx() / stride), 0, fmap_w - 1);
    int cy = std::clamp(static_cast<int>(obj.box.cy() / stride), 0, fmap_h - 1);
    size_t cell = static_cast<size_t>(cy) * fmap_w + cx;
    if (obj.box.area() <= area[cell]) continue;  // larger object wins the cell
    area[cell] = obj.box.area();
    t.objectness[cell] = 1.0f;
    offsets[cell] = DetectorHead::encode_box(obj.box, cx, cy, stride, prior);
  }
  for (size_t cell = 0; cell < t.objectness.size(); ++cell) {
    if (t.objectness[cell] > 0) {
      t.positive_cells.push_back(static_cast<int>(cell));
      for (Scalar v : offsets[cell]) t.positive_offsets.push_back(v);
    }
  }
  return t;
}

Tensor detector_loss(const Tensor& raw, const DetectorTargets& targets,
                     Scalar pos_weight, Scalar offset_weight) {
  if (raw.dim(0) != static_cast<int>(targets.objectness.size())) {
    throw Error("detector_loss: cell count mismatch");
  }
  Tensor obj_logits = reshape(slice(raw, 1, 0, 1), {raw.dim(0)});
  Tensor loss = bce_with_logits(obj_logits, targets.objectness, pos_weight);
  if (!targets.positive_cells.empty()) {
    Tensor pos = index_select0(raw, targets.positive_cells);
    Tensor offsets = slice(pos, 1, 1, 4);
    loss = add(loss, scale(l1_loss(offsets, targets.positive_offsets), offset_weight));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Proposal sources

std::vector<Detection> propose(const ProposalSource& source, const SceneRecord& scene,
                               const FeatureMap* fmap) {
  switch (source.mode) {
    case ProposalSource::Mode::GroundTruth: {
      std::vector<Detection> out;
      for (const auto& obj : scene.objects) out.push_back({obj.box, 1.0});
      return out;
    }
    case ProposalSource::Mode::Jitter: {
      const JitterParams& jp = source.jitter;
      if (jp.sigma < 0 || jp.drop_rate < 0 || jp.drop_rate > 1 || jp.dup_rate < 0 ||
          jp.dup_rate > 1) {
        throw Error("propose: invalid jitter parameters");
      }
      Rng rng(mix_seed(jp.seed, static_cast<uint64_t>(scene.index < 0 ? 0 : scene.index)));
      auto jitter_box = [&](const Box& b) {
        double x = b.x + rng.normal(0.0f, 1.0f) * jp.sigma * b.w;
        double y = b.y + rng.normal(0.0f, 1.0f) * jp.sigma * b.h;
        double w = b.w * std::exp(rng.normal(0.0f, 1.0f) * jp.sigma);
        double h = b.h * std::exp(rng.normal(0.0f, 1.0f) * jp.sigma);
        x = std::clamp(x, 0.0, scene.width - 1.0);
        y = std::clamp(y, 0.0, scene.height - 1.0);
        w = std::clamp(w, 1.0, scene.width - x);
        h = std::clamp(h, 1.0, scene.height - y);
        return Box{x, y, w, h};
      };
      std::vector<Detection> out;
      for (const auto& obj : scene.objects) {
        bool drop = rng.uniform() < jp.drop_rate;
        Box jb = jitter_box(obj.box);
        bool dup = rng.uniform() < jp.dup_rate;
        Box db = jitter_box(obj.box);
        if (!drop) out.push_back({jb, 1.0});
        if (dup) out.push_back({db, 1.0});
      }
      return out;
    }
    case ProposalSource::Mode::Model: {
      if (!source.head || !fmap) throw Error("propose: model mode needs a head and features");
      std::vector<Detection> dets = source.head->forward(*fmap, source.obj_floor);
      std::vector<int> kept = nms(dets, source.nms_thresh);
      std::vector<Detection> out;
      for (int i : kept) out.push_back(dets[i]);
      return out;
    }
  }
  throw Error("propose: unknown mode");
}

}  // namespace unidgf
