#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "unidgf/common.hpp"

namespace unidgf {

// 32-bit reals everywhere; tolerances elsewhere assume this.
using Scalar = float;
using Shape = std::vector<int>;

// Tensor storage is 64-byte aligned so Eigen's vectorized kernels peel loops
// identically on every run; heap-dependent alignment would otherwise make
// reductions round differently between otherwise identical executions.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using AlignedVec = std::vector<Scalar, AlignedAllocator<Scalar>>;

long shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
// handle; ops are free functions that record a backward rule on the result
// when any input requires gradients. The implicit DAG of parent handles is
// the compute graph; backward() walks it in reverse topological order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, Scalar value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<Scalar> data,
                          bool requires_grad = false);
  static Tensor randn(const Shape& shape, Rng& rng, Scalar stddev,
                      bool requires_grad = false);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  int rank() const;
  int dim(int axis) const;
  long numel() const;

  std::span<Scalar> values();
  std::span<const Scalar> values() const;
  bool has_grad() const;
  std::span<Scalar> grad();
  std::span<const Scalar> grad() const;
  void ensure_grad();
  void zero_grad();

  bool requires_grad() const;
  void set_requires_grad(bool rg);

  Scalar item() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  AlignedVec value;
  AlignedVec grad;  // empty until needed
  bool requires_grad = false;
  std::vector<Tensor> parents;
  // Accumulates into parents' grads, reading this node's value/grad.
  std::function<void(TensorImpl&)> backward_fn;
};

// Reverse topological order of every node reachable from root.
struct ComputeGraph {
  std::vector<TensorImpl*> order;  // inputs precede consumers
};

ComputeGraph build_graph(const Tensor& root);

// Populates grads of every requires_grad tensor reachable from loss.
// loss must be scalar and finite.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Primitives. Elementwise binary ops broadcast b over a's leading axes when
// b.shape is a strict suffix of a.shape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Scalar eps = 1e-5f);
// table [V,D]; ids laid out as out_leading; result [out_leading..., D]
Tensor embedding(const Tensor& table, const std::vector<int>& ids,
                 const Shape& out_leading);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);
Tensor reshape(const Tensor& x, const Shape& new_shape);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int start, int length);
// gather rows along axis 0; backward scatter-adds
Tensor index_select0(const Tensor& x, std::vector<int> idx);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// mean over batch of -log softmax(logits)[target]; logits [B,V]
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// mean over elements; positive targets weighted by pos_weight
Tensor bce_with_logits(const Tensor& logits, std::vector<Scalar> targets,
                       Scalar pos_weight = 1.0f);
// mean absolute error against a constant target
Tensor l1_loss(const Tensor& pred, std::vector<Scalar> target);

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay.

struct AdamConfig {
  Scalar lr = 1e-4f;
  Scalar beta1 = 0.9f;
  Scalar beta2 = 0.999f;
  Scalar eps = 1e-8f;
  Scalar weight_decay = 0.01f;
};

struct AdamState {
  std::vector<Scalar> m;
  std::vector<Scalar> v;
  long t = 0;
  AdamConfig cfg;
};

// p <- p - lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p)
void adam_step(Tensor& param, AdamState& state);

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(std::vector<Tensor> params, const AdamConfig& cfg);

  void step();
  void zero_grad();

  std::vector<std::pair<Tensor, AdamState>>& slots() { return slots_; }

 private:
  std::vector<std::pair<Tensor, AdamState>> slots_;
};

// ---------------------------------------------------------------------------
// Named parameter registry. Creation order is the checkpoint payload order,
// so model construction must be deterministic.

class ParamStore {
 public:
  // Creates a N(0, stddev) tensor on first use (stddev 0 -> constant fill),
  // returns the existing entry (shape-checked) afterwards.
  Tensor get_or_create(const std::string& name, const Shape& shape, Rng& rng,
                       Scalar stddev, bool requires_grad = true,
                       Scalar fill = 0.0f);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void put(const std::string& name, Tensor t);

  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }
  std::vector<Tensor> trainable() const;
  bool any_with_prefix(const std::string& prefix) const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace unidgf
