#include "unidgf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace unidgf {

namespace {

using MatRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;
using ArrX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using MapA = Eigen::Map<ArrX>;
using MapCA = Eigen::Map<const ArrX>;

bool all_finite(std::span<const Scalar> v) {
  for (Scalar x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::shared_ptr<TensorImpl> make_impl(Shape shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value.assign(shape_numel(impl->shape), 0.0f);
  impl->requires_grad = requires_grad;
  return impl;
}

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Creates the result node; records parents/backward only when needed.
Tensor make_result(Shape shape, std::vector<Tensor> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
  bool rg = false;
  for (const Tensor& p : parents) rg = rg || p.requires_grad();
  auto impl = make_impl(std::move(shape), rg);
  if (rg) {
    impl->parents = std::move(parents);
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

void accumulate(TensorImpl* dst, const Scalar* src, long n) {
  if (dst->grad.empty()) dst->grad.assign(dst->value.size(), 0.0f);
  MapA(dst->grad.data(), n) += MapCA(src, n);
}

long leading_product(const Shape& s, int upto) {
  long p = 1;
  for (int i = 0; i < upto; ++i) p *= s[i];
  return p;
}

bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  size_t off = full.size() - suffix.size();
  for (size_t i = 0; i < suffix.size(); ++i) {
    if (suffix[i] != full[off + i]) return false;
  }
  return true;
}

std::vector<long> row_strides(const Shape& s) {
  std::vector<long> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
    st[i] = st[i + 1] * s[i + 1];
  }
  return st;
}

}  // namespace

long shape_numel(const Shape& shape) {
  long n = 1;
  for (int d : shape) {
    if (d <= 0) throw Error("tensor shape has nonpositive dimension");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return Tensor(make_impl(shape, requires_grad));
}

Tensor Tensor::full(const Shape& shape, Scalar value, bool requires_grad) {
  auto impl = make_impl(shape, requires_grad);
  std::fill(impl->value.begin(), impl->value.end(), value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<Scalar> data,
                         bool requires_grad) {
  if (static_cast<long>(data.size()) != shape_numel(shape)) {
    throw Error("from_data: element count does not match shape " + shape_str(shape));
  }
  if (!all_finite(data)) throw Error("from_data: non-finite values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->value.assign(data.begin(), data.end());  // re-home into aligned storage
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, Scalar stddev,
                     bool requires_grad) {
  auto impl = make_impl(shape, requires_grad);
  for (Scalar& x : impl->value) x = rng.normal(0.0f, stddev);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::dim(int axis) const { return impl_->shape.at(axis); }
long Tensor::numel() const { return static_cast<long>(impl_->value.size()); }

std::span<Scalar> Tensor::values() { return impl_->value; }
std::span<const Scalar> Tensor::values() const { return impl_->value; }
bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<Scalar> Tensor::grad() {
  ensure_grad();
  return impl_->grad;
}

std::span<const Scalar> Tensor::grad() const {
  if (impl_->grad.empty()) throw Error("grad accessed before allocation");
  return impl_->grad;
}

void Tensor::ensure_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0f);
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->value.size(), 0.0f);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }

Scalar Tensor::item() const {
  if (numel() != 1) throw Error("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->value[0];
}

// ---------------------------------------------------------------------------
// Graph traversal

ComputeGraph build_graph(const Tensor& root) {
  ComputeGraph g;
  std::unordered_set<TensorImpl*> seen;
  // iterative post-order DFS; parents precede consumers in g.order
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  seen.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next].impl();
      ++next;
      if (p && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      g.order.push_back(node);
      stack.pop_back();
    }
  }
  return g;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error("backward: loss must be a defined scalar tensor");
  }
  if (!std::isfinite(loss.impl()->value[0])) {
    throw Error("backward: loss is not finite");
  }
  ComputeGraph g = build_graph(loss);
  loss.impl()->grad.assign(1, 1.0f);
  for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn && !node->grad.empty()) {
      node->backward_fn(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw Error("matmul: operands must have rank >= 2");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != kb) {
    throw Error("matmul: inner dimensions disagree " + shape_str(sa) + " x " + shape_str(sb));
  }

  if (b.rank() == 2) {
    // [..., m, k] x [k, n]: one flattened GEMM; weight grad is one GEMM too.
    long rows = leading_product(sa, static_cast<int>(sa.size()) - 1);
    Shape out_shape(sa.begin(), sa.end() - 1);
    out_shape.push_back(n);
    Tensor out = make_result(
        out_shape, {a, b}, [rows, k, n](TensorImpl& self) {
          TensorImpl* pa = self.parents[0].impl();
          TensorImpl* pb = self.parents[1].impl();
          MapCM dc(self.grad.data(), rows, n);
          if (pa->requires_grad) {
            if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0f);
            MapM(pa->grad.data(), rows, k).noalias() +=
                dc * MapCM(pb->value.data(), k, n).transpose();
          }
          if (pb->requires_grad) {
            if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0f);
            MapM(pb->grad.data(), k, n).noalias() +=
                MapCM(pa->value.data(), rows, k).transpose() * dc;
          }
        });
    MapM(out.values().data(), rows, n).noalias() =
        MapCM(a.values().data(), rows, k) * MapCM(b.values().data(), k, n);
    return out;
  }

  // [L..., m, k] x [L..., k, n] with identical leading dims: per-batch GEMMs.
  Shape la(sa.begin(), sa.end() - 2), lb(sb.begin(), sb.end() - 2);
  if (la != lb) {
    throw Error("matmul: leading dimensions disagree " + shape_str(sa) + " x " + shape_str(sb));
  }
  long batch = leading_product(sa, static_cast<int>(la.size()));
  Shape out_shape = la;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = make_result(
      out_shape, {a, b}, [batch, m, k, n](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].impl();
        TensorImpl* pb = self.parents[1].impl();
        if (pa->requires_grad && pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0f);
        if (pb->requires_grad && pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0f);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < batch; ++i) {
          MapCM dc(self.grad.data() + i * m * n, m, n);
          if (pa->requires_grad) {
            MapM(pa->grad.data() + i * m * k, m, k).noalias() +=
                dc * MapCM(pb->value.data() + i * k * n, k, n).transpose();
          }
          if (pb->requires_grad) {
            MapM(pb->grad.data() + i * k * n, k, n).noalias() +=
                MapCM(pa->value.data() + i * m * k, m, k).transpose() * dc;
          }
        }
      });
  {
    Scalar* dst = out.values().data();
    const Scalar* pa = a.values().data();
    const Scalar* pb = b.values().data();
#pragma omp parallel for schedule(static)
    for (long i = 0; i < batch; ++i) {
      MapM(dst + i * m * n, m, n).noalias() =
          MapCM(pa + i * m * k, m, k) * MapCM(pb + i * k * n, k, n);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise with suffix broadcasting

namespace {

Tensor broadcast_binary(const Tensor& a, const Tensor& b, bool is_add) {
  if (!is_suffix(b.shape(), a.shape())) {
    throw Error("broadcast: b shape " + shape_str(b.shape()) +
                " is not a suffix of a shape " + shape_str(a.shape()));
  }
  long nb = b.numel();
  long repeat = a.numel() / nb;
  Tensor out = make_result(
      a.shape(), {a, b}, [nb, repeat, is_add](TensorImpl& self) {
        TensorImpl* pa = self.parents[0].impl();
        TensorImpl* pb = self.parents[1].impl();
        if (pa->requires_grad) {
          if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0f);
          if (is_add) {
            MapA(pa->grad.data(), pa->grad.size()) +=
                MapCA(self.grad.data(), self.grad.size());
          } else {
            for (long r = 0; r < repeat; ++r) {
              MapA(pa->grad.data() + r * nb, nb) +=
                  MapCA(self.grad.data() + r * nb, nb) *
                  MapCA(pb->value.data(), nb);
            }
          }
        }
        if (pb->requires_grad) {
          if (pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0f);
          for (long r = 0; r < repeat; ++r) {
            if (is_add) {
              MapA(pb->grad.data(), nb) += MapCA(self.grad.data() + r * nb, nb);
            } else {
              MapA(pb->grad.data(), nb) +=
                  MapCA(self.grad.data() + r * nb, nb) *
                  MapCA(pa->value.data() + r * nb, nb);
            }
          }
        }
      });
  for (long r = 0; r < repeat; ++r) {
    if (is_add) {
      MapA(out.values().data() + r * nb, nb) =
          MapCA(a.values().data() + r * nb, nb) + MapCA(b.values().data(), nb);
    } else {
      MapA(out.values().data() + r * nb, nb) =
          MapCA(a.values().data() + r * nb, nb) * MapCA(b.values().data(), nb);
    }
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, true); }
Tensor mul(const Tensor& a, const Tensor& b) { return broadcast_binary(a, b, false); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0f)); }

Tensor scale(const Tensor& a, Scalar c) {
  Tensor out = make_result(a.shape(), {a}, [c](TensorImpl& self) {
    TensorImpl* pa = self.parents[0].impl();
    if (!pa->requires_grad) return;
    if (pa->grad.empty()) pa->grad.assign(pa->value.size(), 0.0f);
    MapA(pa->grad.data(), pa->grad.size()) +=
        c * MapCA(self.grad.data(), self.grad.size());
  });
  MapA(out.values().data(), out.numel()) = c * MapCA(a.values().data(), a.numel());
  return out;
}

Tensor gelu(const Tensor& x) {
  // exact form: 0.5 x (1 + erf(x / sqrt(2)))
  Tensor out = make_result(x.shape(), {x}, [](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    constexpr Scalar inv_sqrt2 = 0.70710678118654752f;
    constexpr Scalar inv_sqrt2pi = 0.39894228040143268f;
    for (size_t i = 0; i < px->value.size(); ++i) {
      Scalar v = px->value[i];
      Scalar cdf = 0.5f * (1.0f + std::erf(v * inv_sqrt2));
      Scalar pdf = inv_sqrt2pi * std::exp(-0.5f * v * v);
      px->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
  constexpr Scalar inv_sqrt2 = 0.70710678118654752f;
  const Scalar* src = x.values().data();
  Scalar* dst = out.values().data();
  for (long i = 0; i < x.numel(); ++i) {
    dst[i] = 0.5f * src[i] * (1.0f + std::erf(src[i] * inv_sqrt2));
  }
  return out;
}

namespace {
inline Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) {
    return 1.0f / (1.0f + std::exp(-x));
  }
  Scalar e = std::exp(x);
  return e / (1.0f + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_result(x.shape(), {x}, [](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    for (size_t i = 0; i < px->value.size(); ++i) {
      Scalar y = self.value[i];
      px->grad[i] += self.grad[i] * y * (1.0f - y);
    }
  });
  const Scalar* src = x.values().data();
  Scalar* dst = out.values().data();
  for (long i = 0; i < x.numel(); ++i) dst[i] = stable_sigmoid(src[i]);
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  int d = x.dim(x.rank() - 1);
  long rows = x.numel() / d;
  Tensor out = make_result(x.shape(), {x}, [d, rows](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    for (long r = 0; r < rows; ++r) {
      MapCA y(self.value.data() + r * d, d);
      MapCA dy(self.grad.data() + r * d, d);
      Scalar dot = (y * dy).sum();
      MapA(px->grad.data() + r * d, d) += y * (dy - dot);
    }
  });
  for (long r = 0; r < rows; ++r) {
    MapCA src(x.values().data() + r * d, d);
    MapA dst(out.values().data() + r * d, d);
    Scalar mx = src.maxCoeff();
    dst = (src - mx).exp();
    dst /= dst.sum();
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Scalar eps) {
  int d = x.dim(x.rank() - 1);
  if (gain.numel() != d || bias.numel() != d) {
    throw Error("layer_norm: gain/bias must have the normalized width");
  }
  long rows = x.numel() / d;
  Tensor out = make_result(
      x.shape(), {x, gain, bias}, [d, rows, eps](TensorImpl& self) {
        TensorImpl* px = self.parents[0].impl();
        TensorImpl* pg = self.parents[1].impl();
        TensorImpl* pb = self.parents[2].impl();
        if (px->requires_grad && px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
        if (pg->requires_grad && pg->grad.empty()) pg->grad.assign(pg->value.size(), 0.0f);
        if (pb->requires_grad && pb->grad.empty()) pb->grad.assign(pb->value.size(), 0.0f);
        ArrX xhat(d), dxhat(d);
        for (long r = 0; r < rows; ++r) {
          MapCA xr(px->value.data() + r * d, d);
          MapCA dy(self.grad.data() + r * d, d);
          Scalar mu = xr.mean();
          Scalar var = (xr - mu).square().mean();
          Scalar inv = 1.0f / std::sqrt(var + eps);
          xhat = (xr - mu) * inv;
          if (pg->requires_grad) MapA(pg->grad.data(), d) += dy * xhat;
          if (pb->requires_grad) MapA(pb->grad.data(), d) += dy;
          if (px->requires_grad) {
            dxhat = dy * MapCA(pg->value.data(), d);
            Scalar m1 = dxhat.mean();
            Scalar m2 = (dxhat * xhat).mean();
            MapA(px->grad.data() + r * d, d) += inv * (dxhat - m1 - xhat * m2);
          }
        }
      });
  for (long r = 0; r < rows; ++r) {
    MapCA xr(x.values().data() + r * d, d);
    MapA dst(out.values().data() + r * d, d);
    Scalar mu = xr.mean();
    Scalar var = (xr - mu).square().mean();
    Scalar inv = 1.0f / std::sqrt(var + eps);
    dst = ((xr - mu) * inv) * MapCA(gain.values().data(), d) +
          MapCA(bias.values().data(), d);
  }
  return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 const Shape& out_leading) {
  if (table.rank() != 2) throw Error("embedding: table must be [V,D]");
  int v = table.dim(0), d = table.dim(1);
  if (static_cast<long>(ids.size()) != shape_numel(out_leading)) {
    throw Error("embedding: id count does not match layout");
  }
  for (int id : ids) {
    if (id < 0 || id >= v) throw Error("embedding: id out of range");
  }
  Shape out_shape = out_leading;
  out_shape.push_back(d);
  Tensor out = make_result(out_shape, {table}, [ids, d](TensorImpl& self) {
    TensorImpl* pt = self.parents[0].impl();
    if (!pt->requires_grad) return;
    if (pt->grad.empty()) pt->grad.assign(pt->value.size(), 0.0f);
    for (size_t i = 0; i < ids.size(); ++i) {
      MapA(pt->grad.data() + static_cast<long>(ids[i]) * d, d) +=
          MapCA(self.grad.data() + static_cast<long>(i) * d, d);
    }
  });
  for (size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out.values().data() + static_cast<long>(i) * d,
                table.values().data() + static_cast<long>(ids[i]) * d,
                sizeof(Scalar) * d);
  }
  return out;
}

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  int r = x.rank();
  if (axis_a < 0 || axis_b < 0 || axis_a >= r || axis_b >= r) {
    throw Error("transpose: axis out of range");
  }
  if (axis_a == axis_b) throw Error("transpose: axes must differ");
  Shape out_shape = x.shape();
  std::swap(out_shape[axis_a], out_shape[axis_b]);
  auto in_strides = row_strides(x.shape());
  auto out_strides = row_strides(out_shape);
  // per output element: source index with axes swapped
  long n = x.numel();
  auto copy_permuted = [n, in_strides, out_strides, out_shape, axis_a, axis_b](
                           const Scalar* src, Scalar* dst, bool accumulate_dst) {
    int rr = static_cast<int>(out_shape.size());
    for (long o = 0; o < n; ++o) {
      long rem = o;
      long src_off = 0;
      for (int ax = 0; ax < rr; ++ax) {
        int iv = static_cast<int>(rem / out_strides[ax]);
        rem %= out_strides[ax];
        int src_ax = ax == axis_a ? axis_b : (ax == axis_b ? axis_a : ax);
        src_off += static_cast<long>(iv) * in_strides[src_ax];
      }
      if (accumulate_dst) {
        dst[src_off] += src[o];
      } else {
        dst[o] = src[src_off];
      }
    }
  };
  Tensor out = make_result(out_shape, {x}, [copy_permuted](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    copy_permuted(self.grad.data(), px->grad.data(), true);
  });
  copy_permuted(x.values().data(), out.values().data(), false);
  return out;
}

Tensor reshape(const Tensor& x, const Shape& new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw Error("reshape: element count mismatch " + shape_str(x.shape()) +
                " -> " + shape_str(new_shape));
  }
  Tensor out = make_result(new_shape, {x}, [](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    MapA(px->grad.data(), px->grad.size()) +=
        MapCA(self.grad.data(), self.grad.size());
  });
  std::memcpy(out.values().data(), x.values().data(), sizeof(Scalar) * x.numel());
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw Error("concat: no inputs");
  int r = xs[0].rank();
  if (axis < 0 || axis >= r) throw Error("concat: axis out of range");
  Shape out_shape = xs[0].shape();
  long axis_total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r) throw Error("concat: rank mismatch");
    for (int ax = 0; ax < r; ++ax) {
      if (ax != axis && t.dim(ax) != out_shape[ax]) {
        throw Error("concat: shape mismatch off the concat axis");
      }
    }
    axis_total += t.dim(axis);
  }
  out_shape[axis] = static_cast<int>(axis_total);
  long outer = leading_product(out_shape, axis);
  long inner = shape_numel(out_shape) / (outer * axis_total);
  std::vector<long> chunk(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) chunk[i] = xs[i].dim(axis) * inner;
  std::vector<Tensor> parents = xs;
  Tensor out = make_result(
      out_shape, std::move(parents), [outer, chunk, axis_total, inner](TensorImpl& self) {
        long row = axis_total * inner;
        for (long o = 0; o < outer; ++o) {
          long off = o * row;
          for (size_t i = 0; i < self.parents.size(); ++i) {
            TensorImpl* p = self.parents[i].impl();
            if (p->requires_grad) {
              if (p->grad.empty()) p->grad.assign(p->value.size(), 0.0f);
              MapA(p->grad.data() + o * chunk[i], chunk[i]) +=
                  MapCA(self.grad.data() + off, chunk[i]);
            }
            off += chunk[i];
          }
        }
      });
  {
    long row = axis_total * inner;
    for (long o = 0; o < outer; ++o) {
      long off = o * row;
      for (size_t i = 0; i < xs.size(); ++i) {
        std::memcpy(out.values().data() + off,
                    xs[i].values().data() + o * chunk[i], sizeof(Scalar) * chunk[i]);
        off += chunk[i];
      }
    }
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int length) {
  int r = x.rank();
  if (axis < 0 || axis >= r) throw Error("slice: axis out of range");
  if (start < 0 || length <= 0 || start + length > x.dim(axis)) {
    throw Error("slice: range out of bounds");
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  long outer = leading_product(x.shape(), axis);
  long inner = x.numel() / (outer * x.dim(axis));
  long in_row = static_cast<long>(x.dim(axis)) * inner;
  long out_row = static_cast<long>(length) * inner;
  long off0 = static_cast<long>(start) * inner;
  Tensor out = make_result(
      out_shape, {x}, [outer, in_row, out_row, off0](TensorImpl& self) {
        TensorImpl* px = self.parents[0].impl();
        if (!px->requires_grad) return;
        if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
        for (long o = 0; o < outer; ++o) {
          MapA(px->grad.data() + o * in_row + off0, out_row) +=
              MapCA(self.grad.data() + o * out_row, out_row);
        }
      });
  for (long o = 0; o < outer; ++o) {
    std::memcpy(out.values().data() + o * out_row,
                x.values().data() + o * in_row + off0, sizeof(Scalar) * out_row);
  }
  return out;
}

Tensor index_select0(const Tensor& x, std::vector<int> idx) {
  if (x.rank() < 1) throw Error("index_select0: rank must be >= 1");
  long tail = x.numel() / x.dim(0);
  for (int i : idx) {
    if (i < 0 || i >= x.dim(0)) throw Error("index_select0: index out of range");
  }
  Shape out_shape = x.shape();
  out_shape[0] = static_cast<int>(idx.size());
  Tensor out = make_result(out_shape, {x}, [idx, tail](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    for (size_t i = 0; i < idx.size(); ++i) {
      MapA(px->grad.data() + static_cast<long>(idx[i]) * tail, tail) +=
          MapCA(self.grad.data() + static_cast<long>(i) * tail, tail);
    }
  });
  for (size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.values().data() + static_cast<long>(i) * tail,
                x.values().data() + static_cast<long>(idx[i]) * tail,
                sizeof(Scalar) * tail);
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out = make_result({1}, {x}, [](TensorImpl& self) {
    TensorImpl* px = self.parents[0].impl();
    if (!px->requires_grad) return;
    if (px->grad.empty()) px->grad.assign(px->value.size(), 0.0f);
    MapA(px->grad.data(), px->grad.size()) += self.grad[0];
  });
  out.values()[0] = MapCA(x.values().data(), x.numel()).sum();
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0f / static_cast<Scalar>(x.numel()));
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  if (logits.rank() != 2) throw Error("softmax_cross_entropy: logits must be [B,V]");
  int b = logits.dim(0), v = logits.dim(1);
  if (static_cast<int>(targets.size()) != b) {
    throw Error("softmax_cross_entropy: batch size mismatch");
  }
  for (int t : targets) {
    if (t < 0 || t >= v) throw Error("softmax_cross_entropy: target index out of range");
  }
  Tensor out = make_result({1}, {logits}, [targets, b, v](TensorImpl& self) {
    TensorImpl* pl = self.parents[0].impl();
    if (!pl->requires_grad) return;
    if (pl->grad.empty()) pl->grad.assign(pl->value.size(), 0.0f);
    Scalar g = self.grad[0] / static_cast<Scalar>(b);
    ArrX p(v);
    for (int r = 0; r < b; ++r) {
      MapCA row(pl->value.data() + static_cast<long>(r) * v, v);
      p = (row - row.maxCoeff()).exp();
      p /= p.sum();
      MapA dst(pl->grad.data() + static_cast<long>(r) * v, v);
      dst += g * p;
      dst[targets[r]] -= g;
    }
  });
  double total = 0.0;
  for (int r = 0; r < b; ++r) {
    MapCA row(logits.values().data() + static_cast<long>(r) * v, v);
    Scalar mx = row.maxCoeff();
    double lse = static_cast<double>(mx) +
                 std::log(static_cast<double>((row - mx).exp().sum()));
    total += lse - static_cast<double>(row[targets[r]]);
  }
  out.values()[0] = static_cast<Scalar>(total / b);
  return out;
}

namespace {
inline Scalar softplus(Scalar x) {
  // log(1 + exp(x)) without overflow
  if (x > 20.0f) return x;
  if (x < -20.0f) return std::exp(x);
  return std::log1p(std::exp(x));
}
}  // namespace

Tensor bce_with_logits(const Tensor& logits, std::vector<Scalar> targets,
                       Scalar pos_weight) {
  if (static_cast<long>(targets.size()) != logits.numel()) {
    throw Error("bce_with_logits: target count mismatch");
  }
  long n = logits.numel();
  double total = 0.0;
  {
    const Scalar* z = logits.values().data();
    for (long i = 0; i < n; ++i) {
      // -[pw*y*log s(z) + (1-y)*log(1-s(z))] in softplus form
      total += pos_weight * targets[i] * softplus(-z[i]) +
               (1.0f - targets[i]) * softplus(z[i]);
    }
  }
  Tensor out = make_result(
      {1}, {logits}, [targets = std::move(targets), pos_weight, n](TensorImpl& self) {
        TensorImpl* pl = self.parents[0].impl();
        if (!pl->requires_grad) return;
        if (pl->grad.empty()) pl->grad.assign(pl->value.size(), 0.0f);
        Scalar g = self.grad[0] / static_cast<Scalar>(n);
        for (long i = 0; i < n; ++i) {
          Scalar z = pl->value[i], y = targets[i];
          pl->grad[i] += g * (-pos_weight * y * stable_sigmoid(-z) +
                              (1.0f - y) * stable_sigmoid(z));
        }
      });
  out.values()[0] = static_cast<Scalar>(total / n);
  return out;
}

Tensor l1_loss(const Tensor& pred, std::vector<Scalar> target) {
  if (static_cast<long>(target.size()) != pred.numel()) {
    throw Error("l1_loss: target count mismatch");
  }
  long n = pred.numel();
  double total = 0.0;
  for (long i = 0; i < n; ++i) {
    total += std::abs(static_cast<double>(pred.values()[i]) - target[i]);
  }
  Tensor out = make_result(
      {1}, {pred}, [target = std::move(target), n](TensorImpl& self) {
        TensorImpl* pp = self.parents[0].impl();
        if (!pp->requires_grad) return;
        if (pp->grad.empty()) pp->grad.assign(pp->value.size(), 0.0f);
        Scalar g = self.grad[0] / static_cast<Scalar>(n);
        for (long i = 0; i < n; ++i) {
          Scalar d = pp->value[i] - target[i];
          pp->grad[i] += g * (d > 0 ? 1.0f : (d < 0 ? -1.0f : 0.0f));
        }
      });
  out.values()[0] = static_cast<Scalar>(total / n);
  return out;
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(Tensor& param, AdamState& state) {
  if (!param.has_grad()) throw Error("adam_step: parameter has no gradient");
  long n = param.numel();
  if (state.m.empty()) state.m.assign(n, 0.0f);
  if (state.v.empty()) state.v.assign(n, 0.0f);
  if (static_cast<long>(state.m.size()) != n) {
    throw Error("adam_step: state shape mismatch");
  }
  const AdamConfig& c = state.cfg;
  if (c.lr <= 0) throw Error("adam_step: lr must be positive");
  state.t += 1;
  Scalar bc1 = 1.0f - std::pow(c.beta1, static_cast<Scalar>(state.t));
  Scalar bc2 = 1.0f - std::pow(c.beta2, static_cast<Scalar>(state.t));
  Scalar* p = param.values().data();
  const Scalar* g = param.grad().data();
  for (long i = 0; i < n; ++i) {
    state.m[i] = c.beta1 * state.m[i] + (1.0f - c.beta1) * g[i];
    state.v[i] = c.beta2 * state.v[i] + (1.0f - c.beta2) * g[i] * g[i];
    Scalar mhat = state.m[i] / bc1;
    Scalar vhat = state.v[i] / bc2;
    p[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[i]);
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, const AdamConfig& cfg) {
  for (Tensor& p : params) {
    AdamState st;
    st.cfg = cfg;
    slots_.emplace_back(std::move(p), std::move(st));
  }
}

void AdamOptimizer::step() {
  for (auto& [param, state] : slots_) adam_step(param, state);
}

void AdamOptimizer::zero_grad() {
  for (auto& [param, state] : slots_) param.zero_grad();
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor ParamStore::get_or_create(const std::string& name, const Shape& shape,
                                 Rng& rng, Scalar stddev, bool requires_grad,
                                 Scalar fill) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      if (t.shape() != shape) {
        throw ConfigError("parameter " + name + " has shape " + shape_str(t.shape()) +
                          ", expected " + shape_str(shape));
      }
      t.set_requires_grad(requires_grad);
      return t;
    }
  }
  Tensor t = stddev > 0 ? Tensor::randn(shape, rng, stddev, requires_grad)
                        : Tensor::full(shape, fill, requires_grad);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("parameter not found: " + name);
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return true;
  }
  return false;
}

void ParamStore::put(const std::string& name, Tensor t) {
  for (auto& [n, existing] : entries_) {
    if (n == name) {
      existing = std::move(t);
      return;
    }
  }
  entries_.emplace_back(name, std::move(t));
}

std::vector<Tensor> ParamStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [n, t] : entries_) {
    if (t.requires_grad()) out.push_back(t);
  }
  return out;
}

bool ParamStore::any_with_prefix(const std::string& prefix) const {
  for (const auto& [n, t] : entries_) {
    if (n.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

}  // namespace unidgf
