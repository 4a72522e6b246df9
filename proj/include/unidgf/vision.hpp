#pragma once

#include <cstdint>
#include <vector>

#include "unidgf/nn.hpp"
#include "unidgf/scenegen.hpp"
#include "unidgf/tensor.hpp"

namespace unidgf {

// Spatial feature grid produced by the frozen backbone; stride is image
// pixels per feature cell.
struct FeatureMap {
  int height = 0, width = 0, channels = 0;
  int stride = 8;
  std::vector<Scalar> data;  // [height, width, channels]

  Scalar at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// R x R x C grid pooled from a box region.
struct RoiFeature {
  int size = 0;
  int channels = 0;
  std::vector<Scalar> data;  // [size, size, channels]
};

struct BackboneConfig {
  int dim = 64;    // output channels
  int stride = 8;  // fixed by the three stride-2 stages
};

// Three stride-2 conv stages, seeded-random then frozen; per-cell channel
// standardization keeps feature magnitudes O(1). Parameters live in the
// store under "backbone." with requires_grad = false.
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, ParamStore& store, Rng& rng);

  FeatureMap forward(const Image& img) const;
  const BackboneConfig& config() const { return cfg_; }
  // FNV-1a over the raw parameter bytes; constant across training by contract
  uint64_t param_checksum() const;

 private:
  BackboneConfig cfg_;
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Exact ROI Align: the box maps to feature coordinates by dividing by the
// stride (no rounding); each output bin averages sampling^2 bilinear samples
// taken at regularly spaced points inside the bin, with cell centers at
// half-pixel positions and border clamping.
RoiFeature roi_align(const FeatureMap& fmap, const Box& box, int output_size,
                     int sampling = 2);

struct QFormerConfig {
  int queries = 128;
  int dim = 128;
  int layers = 2;
  int heads = 4;
  int ffn = 256;
  int input_dim = 64;  // backbone channels
};

// Learnable queries cross-attending to flattened ROI tokens; emits a
// fixed-length (queries x dim) embedding regardless of the ROI size.
class QFormer {
 public:
  QFormer(const QFormerConfig& cfg, ParamStore& store, Rng& rng,
          bool requires_grad = true);

  // rois: one RoiFeature per object (equal geometry) -> [B, queries, dim]
  Tensor forward(const std::vector<RoiFeature>& rois) const;
  // tokens: [B, N, input_dim]
  Tensor forward_tokens(const Tensor& tokens) const;

  const QFormerConfig& config() const { return cfg_; }

 private:
  struct Block {
    AttentionParams attn;
    LayerNormParams ln1;
    FfnParams ff;
    LayerNormParams ln2;
  };
  QFormerConfig cfg_;
  Tensor queries_;
  LinearParams input_proj_;
  std::vector<Block> blocks_;
};

}  // namespace unidgf
