#include "icm/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "icm/errors.hpp"

namespace icm {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, FloatVec values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::span<const float> values, bool requires_grad)
    : Tensor(std::move(shape), FloatVec(values.begin(), values.end()), requires_grad) {}

Tensor Tensor::scalar(float v, bool requires_grad) { return Tensor(Shape{1}, FloatVec{v}, requires_grad); }

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + shape_str(shape()));
  return node_->shape[static_cast<size_t>(i)];
}

float Tensor::item() const {
  if (node_->data.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return node_->data[0];
}

Tensor Tensor::clone() const {
  Tensor t(node_->shape, node_->data, node_->requires_grad);
  return t;
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(node_->shape) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), node_->data, {*this}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    float* g = p.grad_ptr();
    for (size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

void Tensor::backward() {
  if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p && p->requires_grad && p->backward_fn && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }
  node_->grad_ptr()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Intermediate grads are no longer needed once propagated.
  for (Node* n : order) {
    if (n->backward_fn) FloatVec().swap(n->grad);
  }
}

namespace {
Tensor finish_result(Tensor t, Node& node, bool needs, BackwardFn fn) {
  if (needs) {
    node.requires_grad = true;
    node.backward_fn = std::move(fn);
  } else {
    node.parents.clear();
  }
  return t;
}
}  // namespace

Tensor make_result(Shape shape, FloatVec data, std::initializer_list<Tensor> parents,
                   BackwardFn fn) {
  return make_result(std::move(shape), std::move(data), std::vector<Tensor>(parents), std::move(fn));
}

Tensor make_result(Shape shape, FloatVec data, const std::vector<Tensor>& parents,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.defined() && p.requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.node_ptr());
  }
  Node& ref = *node;
  return finish_result(Tensor(std::move(node)), ref, needs, std::move(fn));
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_tensors(const std::vector<Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.ptr());
    h = fnv1a({p, static_cast<size_t>(t.numel()) * sizeof(float)}, h);
  }
  return h;
}

}  // namespace icm
