#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace icm {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Float storage with a fixed 64-byte base alignment. Vectorised reductions
// peel a prefix up to the first aligned element, so a varying base address
// would make sums (and therefore training) differ between runs.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using FloatVec = std::vector<float, AlignedAllocator<float>>;

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

// One vertex of the autograd graph. Leaves (parameters, inputs) have no
// backward function; intermediate results keep their parents alive.
struct Node {
  Shape shape;
  FloatVec data;
  FloatVec grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward_fn;

  float* grad_ptr() {
    if (grad.empty()) grad.assign(data.size(), 0.0f);
    return grad.data();
  }
};

/// Shared handle to a float array with optional gradient tracking.
/// Copies alias the same storage; use clone() for an independent leaf.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f, bool requires_grad = false);
  Tensor(Shape shape, FloatVec values, bool requires_grad = false);
  Tensor(Shape shape, std::span<const float> values, bool requires_grad = false);

  static Tensor scalar(float v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<float> data() { return node_->data; }
  std::span<const float> data() const { return node_->data; }
  float* ptr() { return node_->data.data(); }
  const float* ptr() const { return node_->data.data(); }
  float item() const;
  float at(std::int64_t i) const { return node_->data[static_cast<size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad() { return {node_->grad_ptr(), node_->data.size()}; }
  void zero_grad() { node_->grad.clear(); }

  /// Independent leaf with the same values; the graph is not copied.
  Tensor clone() const;
  /// Leaf sharing nothing with the graph; alias of clone() without grad.
  Tensor detach() const;
  /// Same storage, new shape. Differentiable.
  Tensor reshape(Shape shape) const;

  /// Runs reverse-mode accumulation from this scalar.
  void backward();

  Node* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;

  friend Tensor make_result(Shape, FloatVec, std::initializer_list<Tensor>, BackwardFn);
  friend Tensor make_result(Shape, FloatVec, const std::vector<Tensor>&, BackwardFn);
};

/// Creates an op output. The backward function is kept only when grad mode is
/// on and some parent requires grad.
Tensor make_result(Shape shape, FloatVec data, std::initializer_list<Tensor> parents,
                   BackwardFn fn);
Tensor make_result(Shape shape, FloatVec data, const std::vector<Tensor>& parents,
                   BackwardFn fn);

bool grad_enabled();

/// Disables graph construction for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// FNV-1a over the raw bytes of the given arrays, in order.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_tensors(const std::vector<Tensor>& tensors);

}  // namespace icm
