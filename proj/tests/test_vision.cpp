#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "unidgf/vision.hpp"

using namespace unidgf;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

FeatureMap random_fmap(Rng& rng, int h, int w, int d, int stride = 8) {
  FeatureMap f;
  f.height = h;
  f.width = w;
  f.channels = d;
  f.stride = stride;
  f.data.resize(static_cast<size_t>(h) * w * d);
  for (Scalar& v : f.data) v = static_cast<Scalar>(rng.uniform(-1, 1));
  return f;
}

// independent dense bilinear oracle: integer-clamped neighbor gather in
// double precision
double oracle_sample(const FeatureMap& f, double sx, double sy, int c) {
  double gx = sx - 0.5, gy = sy - 0.5;
  int x0 = static_cast<int>(std::floor(gx));
  int y0 = static_cast<int>(std::floor(gy));
  double fx = gx - x0, fy = gy - y0;
  auto v = [&](int yy, int xx) {
    yy = std::clamp(yy, 0, f.height - 1);
    xx = std::clamp(xx, 0, f.width - 1);
    return static_cast<double>(f.at(yy, xx, c));
  };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) +
         fy * ((1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1));
}

std::vector<double> oracle_roi_align(const FeatureMap& f, const Box& box, int R, int n) {
  std::vector<double> out(static_cast<size_t>(R) * R * f.channels, 0.0);
  double bx = box.x / f.stride, by = box.y / f.stride;
  double bw = box.w / f.stride, bh = box.h / f.stride;
  for (int i = 0; i < R; ++i) {
    for (int j = 0; j < R; ++j) {
      for (int c = 0; c < f.channels; ++c) {
        double acc = 0;
        for (int sy = 0; sy < n; ++sy) {
          for (int sx = 0; sx < n; ++sx) {
            double x = bx + (j + (sx + 0.5) / n) * (bw / R);
            double y = by + (i + (sy + 0.5) / n) * (bh / R);
            acc += oracle_sample(f, x, y, c);
          }
        }
        out[(static_cast<size_t>(i) * R + j) * f.channels + c] = acc / (n * n);
      }
    }
  }
  return out;
}

Image random_image(Rng& rng, int w, int h) {
  Image img(w, h);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return img;
}

}  // namespace

TEST_CASE("backbone shape, determinism and frozenness") {
  ParamStore store;
  Rng rng(5);
  Backbone bb({64, 8}, store, rng);
  Rng img_rng(9);
  Image img = random_image(img_rng, 96, 96);

  FeatureMap f1 = bb.forward(img);
  CHECK(f1.height == 12);
  CHECK(f1.width == 12);
  CHECK(f1.channels == 64);

  uint64_t sum_before = bb.param_checksum();
  FeatureMap f2 = bb.forward(img);
  CHECK(f1.data == f2.data);
  CHECK(bb.param_checksum() == sum_before);

  for (const auto& [name, t] : store.entries()) {
    CHECK(!t.requires_grad());
  }

  // odd sizes round up: ceil(H/stride)
  Image odd = random_image(img_rng, 41, 33);
  FeatureMap f3 = bb.forward(odd);
  CHECK(f3.height == 5);
  CHECK(f3.width == 6);

  Image tiny = random_image(img_rng, 4, 4);
  CHECK_THROWS_AS(bb.forward(tiny), Error);
}

TEST_CASE("roi_align preserves constants") {
  FeatureMap f;
  f.height = 6;
  f.width = 7;
  f.channels = 2;
  f.stride = 8;
  f.data.assign(static_cast<size_t>(6) * 7 * 2, 0.0f);
  for (size_t i = 0; i < f.data.size(); i += 2) {
    f.data[i] = 3.25f;
    f.data[i + 1] = -1.5f;
  }
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Box b{rng.uniform(-5, 40), rng.uniform(-5, 30), rng.uniform(1, 60), rng.uniform(1, 50)};
    RoiFeature r = roi_align(f, b, 3, 2);
    for (size_t i = 0; i < r.data.size(); i += 2) {
      CHECK(r.data[i] == doctest::Approx(3.25).epsilon(1e-6));
      CHECK(r.data[i + 1] == doctest::Approx(-1.5).epsilon(1e-6));
    }
  }
}

TEST_CASE("roi_align whole-map crop equals cell values") {
  Rng rng(3);
  FeatureMap f = random_fmap(rng, 5, 5, 3);
  Box whole{0, 0, 5.0 * f.stride, 5.0 * f.stride};
  RoiFeature r = roi_align(f, whole, 5, 1);
  for (int y = 0; y < 5; ++y) {
    for (int x = 0; x < 5; ++x) {
      for (int c = 0; c < 3; ++c) {
        CHECK(r.data[(static_cast<size_t>(y) * 5 + x) * 3 + c] ==
              doctest::Approx(f.at(y, x, c)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("roi_align vs independent bilinear oracle") {
  Rng rng(17);
  double worst = 0;
  for (int trial = 0; trial < 300; ++trial) {
    int h = rng.uniform_int(2, 10), w = rng.uniform_int(2, 10);
    int d = rng.uniform_int(1, 4);
    FeatureMap f = random_fmap(rng, h, w, d);
    int R = rng.uniform_int(1, 7);
    int n = rng.uniform_int(1, 3);
    Box b{rng.uniform(-10, w * 8.0 - 1), rng.uniform(-10, h * 8.0 - 1),
          rng.uniform(0.5, w * 9.0), rng.uniform(0.5, h * 9.0)};
    RoiFeature got = roi_align(f, b, R, n);
    auto expect = oracle_roi_align(f, b, R, n);
    for (size_t i = 0; i < expect.size(); ++i) {
      worst = std::max(worst, std::abs(expect[i] - got.data[i]));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("roi_align rejects nonpositive extents") {
  Rng rng(1);
  FeatureMap f = random_fmap(rng, 4, 4, 1);
  CHECK_THROWS_AS(roi_align(f, Box{1, 1, 0, 5}, 3), Error);
  CHECK_THROWS_AS(roi_align(f, Box{1, 1, 5, -2}, 3), Error);
}

TEST_CASE("roi_align translation consistency across one stride cell") {
  Rng rng(23);
  FeatureMap a = random_fmap(rng, 8, 8, 2);
  FeatureMap b = a;
  // content shifted one cell right
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      for (int c = 0; c < 2; ++c) {
        b.data[(static_cast<size_t>(y) * 8 + x) * 2 + c] =
            a.at(y, (x + 7) % 8, c);
      }
    }
  }
  // interior box with >= 1 cell of margin in both maps
  Box box{2.0 * 8, 2.0 * 8, 3.0 * 8, 4.0 * 8};
  Box shifted{box.x + 8, box.y, box.w, box.h};
  RoiFeature ra = roi_align(a, box, 4, 2);
  RoiFeature rb = roi_align(b, shifted, 4, 2);
  for (size_t i = 0; i < ra.data.size(); ++i) {
    CHECK(ra.data[i] == doctest::Approx(rb.data[i]).epsilon(1e-6));
  }
}

TEST_CASE("qformer emits fixed-length embeddings for every ROI size") {
  ParamStore store;
  Rng rng(7);
  QFormerConfig cfg;
  cfg.queries = 16;
  cfg.dim = 32;
  cfg.layers = 2;
  cfg.heads = 4;
  cfg.ffn = 48;
  cfg.input_dim = 8;
  QFormer qf(cfg, store, rng);

  for (int R : {1, 5, 7, 9, 15}) {
    RoiFeature roi;
    roi.size = R;
    roi.channels = cfg.input_dim;
    roi.data.resize(static_cast<size_t>(R) * R * cfg.input_dim);
    Rng r2(R);
    for (Scalar& v : roi.data) v = static_cast<Scalar>(r2.uniform(-1, 1));
    Tensor e = qf.forward({roi, roi});
    CHECK(e.shape() == Shape{2, cfg.queries, cfg.dim});
  }
}

TEST_CASE("zeroed value/output projections make the output ROI-independent") {
  ParamStore store;
  Rng rng(11);
  QFormerConfig cfg;
  cfg.queries = 4;
  cfg.dim = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn = 8;
  cfg.input_dim = 3;
  QFormer qf(cfg, store, rng);
  for (const auto& [name, t] : store.entries()) {
    if (name.find(".attn.v.w") != std::string::npos ||
        name.find(".attn.o.w") != std::string::npos) {
      Tensor mutable_t = t;
      std::fill(mutable_t.values().begin(), mutable_t.values().end(), 0.0f);
    }
  }
  Rng r1(1), r2(2);
  Tensor t1 = testutil::random_tensor({1, 9, 3}, r1, false);
  Tensor t2 = testutil::random_tensor({1, 9, 3}, r2, false);
  Tensor e1 = qf.forward_tokens(t1);
  Tensor e2 = qf.forward_tokens(t2);
  for (long i = 0; i < e1.numel(); ++i) {
    CHECK(e1.values()[i] == doctest::Approx(e2.values()[i]).epsilon(1e-5));
  }
}

TEST_CASE("qformer gradients match finite differences on a tiny config") {
  ParamStore store;
  Rng rng(13);
  QFormerConfig cfg;
  cfg.queries = 2;
  cfg.dim = 4;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.ffn = 6;
  cfg.input_dim = 3;
  QFormer qf(cfg, store, rng);
  Tensor tokens = random_tensor({2, 4, 3}, rng, false);  // R=2 -> 4 tokens
  Tensor weights = random_tensor({2, cfg.queries, cfg.dim}, rng, false);

  auto loss_fn = [&] { return mean_all(mul(qf.forward_tokens(tokens), weights)); };
  CHECK(gradcheck(store.trainable(), loss_fn) < 1e-3);
}
