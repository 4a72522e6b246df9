#include "unidgf/vision.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>

namespace unidgf {

namespace {

using MatRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 3x3 / stride-2 / pad-1 convolution via im2col GEMM on plain buffers; the
// backbone is frozen so none of this is on the autodiff tape.
void conv3x3_s2(const std::vector<Scalar>& src, int h, int w, int cin,
                std::span<const Scalar> weight, std::span<const Scalar> bias,
                int cout, bool relu, std::vector<Scalar>& dst, int& oh, int& ow) {
  oh = (h + 1) / 2;
  ow = (w + 1) / 2;
  MatRM cols(static_cast<long>(oh) * ow, 9 * cin);
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      long row = static_cast<long>(oy) * ow + ox;
      int iy0 = oy * 2 - 1, ix0 = ox * 2 - 1;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          int iy = iy0 + ky, ix = ix0 + kx;
          Scalar* out = cols.data() + row * 9 * cin + (ky * 3 + kx) * cin;
          if (iy < 0 || iy >= h || ix < 0 || ix >= w) {
            std::memset(out, 0, sizeof(Scalar) * cin);
          } else {
            std::memcpy(out, src.data() + (static_cast<size_t>(iy) * w + ix) * cin,
                        sizeof(Scalar) * cin);
          }
        }
      }
    }
  }
  Eigen::Map<const MatRM> wmat(weight.data(), 9 * cin, cout);
  MatRM out = cols * wmat;
  dst.resize(static_cast<size_t>(oh) * ow * cout);
  for (long r = 0; r < out.rows(); ++r) {
    for (int c = 0; c < cout; ++c) {
      Scalar v = out(r, c) + bias[c];
      if (relu && v < 0) v = 0;
      dst[r * cout + c] = v;
    }
  }
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg, ParamStore& store, Rng& rng)
    : cfg_(cfg) {
  const int c1 = 16, c2 = 32;
  w1_ = store.get_or_create("backbone.stage0.w", {9 * 3, c1}, rng, 0.02f, false);
  b1_ = store.get_or_create("backbone.stage0.b", {c1}, rng, 0.0f, false);
  w2_ = store.get_or_create("backbone.stage1.w", {9 * c1, c2}, rng, 0.02f, false);
  b2_ = store.get_or_create("backbone.stage1.b", {c2}, rng, 0.0f, false);
  w3_ = store.get_or_create("backbone.stage2.w", {9 * c2, cfg.dim}, rng, 0.02f, false);
  b3_ = store.get_or_create("backbone.stage2.b", {cfg.dim}, rng, 0.0f, false);
}

FeatureMap Backbone::forward(const Image& img) const {
  if (img.width < cfg_.stride || img.height < cfg_.stride) {
    throw Error("backbone: image smaller than one stride cell");
  }
  std::vector<Scalar> x(static_cast<size_t>(img.width) * img.height * 3);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<Scalar>(img.pixels[i]) / 255.0f - 0.5f;
  }
  std::vector<Scalar> y;
  int h = img.height, w = img.width, oh = 0, ow = 0;
  conv3x3_s2(x, h, w, 3, w1_.values(), b1_.values(), 16, true, y, oh, ow);
  std::vector<Scalar> z;
  conv3x3_s2(y, oh, ow, 16, w2_.values(), b2_.values(), 32, true, z, oh, ow);
  std::vector<Scalar> f;
  conv3x3_s2(z, oh, ow, 32, w3_.values(), b3_.values(), cfg_.dim, false, f, oh, ow);

  // per-cell channel standardization
  FeatureMap fmap;
  fmap.height = oh;
  fmap.width = ow;
  fmap.channels = cfg_.dim;
  fmap.stride = cfg_.stride;
  fmap.data.resize(f.size());
  const int d = cfg_.dim;
  for (long cell = 0; cell < static_cast<long>(oh) * ow; ++cell) {
    const Scalar* src = f.data() + cell * d;
    Scalar* dst = fmap.data.data() + cell * d;
    double mu = 0;
    for (int c = 0; c < d; ++c) mu += src[c];
    mu /= d;
    double var = 0;
    for (int c = 0; c < d; ++c) var += (src[c] - mu) * (src[c] - mu);
    var /= d;
    Scalar inv = static_cast<Scalar>(1.0 / std::sqrt(var + 1e-5));
    for (int c = 0; c < d; ++c) dst[c] = static_cast<Scalar>((src[c] - mu) * inv);
  }
  return fmap;
}

uint64_t Backbone::param_checksum() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::span<const Scalar> v) {
    const uint8_t* bytes = reinterpret_cast<const uint8_t*>(v.data());
    for (size_t i = 0; i < v.size() * sizeof(Scalar); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const Tensor* t : {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_}) mix(t->values());
  return h;
}

// ---------------------------------------------------------------------------
// ROI Align

RoiFeature roi_align(const FeatureMap& fmap, const Box& box, int output_size,
                     int sampling) {
  if (box.w <= 0 || box.h <= 0) throw Error("roi_align: nonpositive box extent");
  if (output_size < 1 || sampling < 1) throw Error("roi_align: bad configuration");
  const int R = output_size, n = sampling, d = fmap.channels;
  const int W = fmap.width, H = fmap.height;
  RoiFeature out;
  out.size = R;
  out.channels = d;
  out.data.assign(static_cast<size_t>(R) * R * d, 0.0f);

  const double bx = box.x / fmap.stride;
  const double by = box.y / fmap.stride;
  const double bw = box.w / fmap.stride;
  const double bh = box.h / fmap.stride;
  const double bin_w = bw / R, bin_h = bh / R;
  const Scalar inv_count = 1.0f / static_cast<Scalar>(n * n);

  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < R; ++j) {
      Scalar* acc = out.data.data() + (static_cast<size_t>(i) * R + j) * d;
      for (int sy = 0; sy < n; ++sy) {
        double y = by + (i + (sy + 0.5) / n) * bin_h;
        double gy = std::clamp(y - 0.5, 0.0, static_cast<double>(H - 1));
        int y0 = static_cast<int>(std::floor(gy));
        int y1 = std::min(y0 + 1, H - 1);
        Scalar fy = static_cast<Scalar>(gy - y0);
        for (int sx = 0; sx < n; ++sx) {
          double x = bx + (j + (sx + 0.5) / n) * bin_w;
          double gx = std::clamp(x - 0.5, 0.0, static_cast<double>(W - 1));
          int x0 = static_cast<int>(std::floor(gx));
          int x1 = std::min(x0 + 1, W - 1);
          Scalar fx = static_cast<Scalar>(gx - x0);
          const Scalar* p00 = fmap.data.data() + (static_cast<size_t>(y0) * W + x0) * d;
          const Scalar* p01 = fmap.data.data() + (static_cast<size_t>(y0) * W + x1) * d;
          const Scalar* p10 = fmap.data.data() + (static_cast<size_t>(y1) * W + x0) * d;
          const Scalar* p11 = fmap.data.data() + (static_cast<size_t>(y1) * W + x1) * d;
          Scalar w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
          Scalar w10 = fy * (1 - fx), w11 = fy * fx;
          for (int c = 0; c < d; ++c) {
            acc[c] += w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
          }
        }
      }
      for (int c = 0; c < d; ++c) acc[c] *= inv_count;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Q-Former

QFormer::QFormer(const QFormerConfig& cfg, ParamStore& store, Rng& rng,
                 bool requires_grad)
    : cfg_(cfg) {
  queries_ = store.get_or_create("qformer.queries", {cfg.queries, cfg.dim}, rng,
                                 0.02f, requires_grad);
  input_proj_ = make_linear(store, "qformer.input_proj", cfg.input_dim, cfg.dim,
                            rng, requires_grad);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string base = "qformer.block" + std::to_string(l);
    Block blk;
    blk.attn = make_attention(store, base + ".attn", cfg.dim, cfg.heads, rng, requires_grad);
    blk.ln1 = make_layer_norm(store, base + ".ln1", cfg.dim, rng, requires_grad);
    blk.ff = make_ffn(store, base + ".ff", cfg.dim, cfg.ffn, rng, requires_grad);
    blk.ln2 = make_layer_norm(store, base + ".ln2", cfg.dim, rng, requires_grad);
    blocks_.push_back(std::move(blk));
  }
}

Tensor QFormer::forward(const std::vector<RoiFeature>& rois) const {
  if (rois.empty()) throw Error("qformer: empty batch");
  int n = rois[0].size * rois[0].size;
  int c = rois[0].channels;
  if (c != cfg_.input_dim) {
    throw Error("qformer: ROI channel count does not match configuration");
  }
  std::vector<Scalar> data;
  data.reserve(rois.size() * n * c);
  for (const RoiFeature& r : rois) {
    if (r.size != rois[0].size || r.channels != c) {
      throw Error("qformer: mixed ROI geometries in one batch");
    }
    data.insert(data.end(), r.data.begin(), r.data.end());
  }
  Tensor tokens = Tensor::from_data({static_cast<int>(rois.size()), n, c},
                                    std::move(data));
  return forward_tokens(tokens);
}

Tensor QFormer::forward_tokens(const Tensor& tokens) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg_.input_dim) {
    throw Error("qformer: tokens must be [B, N, input_dim]");
  }
  int b = tokens.dim(0);
  Tensor kv = linear(tokens, input_proj_);
  Tensor x = index_select0(reshape(queries_, {1, cfg_.queries, cfg_.dim}),
                           std::vector<int>(b, 0));
  for (const Block& blk : blocks_) {
    x = apply_layer_norm(add(x, attention(x, kv, blk.attn)), blk.ln1);
    x = apply_layer_norm(add(x, ffn(x, blk.ff)), blk.ln2);
  }
  return x;
}

}  // namespace unidgf
