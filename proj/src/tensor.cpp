#include "mstream/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mstream {

namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool grad_mode_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, DType dtype) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->data = detail::Buffer(dtype, shape_numel(shape));
  node->shape = std::move(shape);
  return node;
}

}  // namespace

std::string to_string(DType dtype) { return dtype == DType::f64 ? "float64" : "float32"; }

DType dtype_from_string(const std::string& name) {
  if (name == "float64" || name == "f64" || name == "double") return DType::f64;
  if (name == "float32" || name == "f32" || name == "float") return DType::f32;
  throw ConfigError("unknown precision '" + name + "' (expected float64 or float32)");
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, DType dtype, bool requires_grad) {
  auto node = make_node(std::move(shape), dtype);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, DType dtype, bool requires_grad) {
  Tensor t = zeros(std::move(shape), dtype, requires_grad);
  for (std::size_t i = 0; i < t.numel(); ++i) t.node_->data.set(i, value);
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_to_string(shape) + " needs " + std::to_string(shape_numel(shape)) +
                         " values, got " + std::to_string(values.size()));
  }
  Tensor t = zeros(std::move(shape), dtype, requires_grad);
  t.assign(values);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype, bool requires_grad) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype, requires_grad);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

std::shared_ptr<detail::Node> Tensor::node() const {
  if (!node_) throw StateError("use of an undefined tensor");
  return node_;
}

std::uint64_t Tensor::id() const { return node()->id; }
const Shape& Tensor::shape() const { return node()->shape; }

std::size_t Tensor::size(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_to_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node()->data.size(); }
DType Tensor::dtype() const { return node()->data.dtype(); }
bool Tensor::requires_grad() const { return node()->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return !node()->backward && node_->parents.empty(); }
const char* Tensor::op_name() const { return node()->op; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_to_string(shape()));
  return node_->data.get(0);
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("flat index out of range");
  return node_->data.get(i);
}

std::vector<double> Tensor::values() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->data.get(i);
  return out;
}

void Tensor::set(std::size_t i, double value) {
  if (i >= numel()) throw DimensionError("flat index out of range");
  node_->data.set(i, value);
}

void Tensor::assign(std::span<const double> values) {
  if (values.size() != numel()) throw DimensionError("assign: value count does not match " + shape_to_string(shape()));
  for (std::size_t i = 0; i < values.size(); ++i) node_->data.set(i, values[i]);
}

bool Tensor::has_grad() const { return !node()->grad.empty(); }

Tensor Tensor::grad() const {
  Tensor g = zeros(shape(), dtype());
  if (has_grad()) g.node_->data = node_->grad;
  return g;
}

std::vector<double> Tensor::grad_values() const {
  std::vector<double> out(numel(), 0.0);
  if (!has_grad()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = node_->grad.get(i);
  return out;
}

void Tensor::zero_grad() { node()->grad = detail::Buffer(); }

Tensor Tensor::detach() const {
  auto node = make_node(shape(), dtype());
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  Tensor out = zeros(shape(), target);
  for (std::size_t i = 0; i < numel(); ++i) out.node_->data.set(i, node_->data.get(i));
  return out;
}

bool Tensor::all_finite() const {
  return visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : data<T>()) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  });
}

void Tensor::check_finite(const std::string& where) const {
  if (!all_finite()) throw NumericError("non-finite value in " + where + " (shape " + shape_to_string(shape()) + ")");
}

NoGradGuard::NoGradGuard() : previous_(grad_mode_enabled) { grad_mode_enabled = false; }
NoGradGuard::~NoGradGuard() { grad_mode_enabled = previous_; }
bool grad_enabled() { return grad_mode_enabled; }

Graph::Graph(const Tensor& loss) : loss_(loss) {
  auto root = loss.node();
  // Iterative post-order DFS gives a topological order of the tracked nodes.
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  if (root->requires_grad) {
    stack.emplace_back(root, 0);
    visited.insert(root.get());
  }
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      auto parent = node->parents[next++];
      if (parent->requires_grad && visited.insert(parent.get()).second) stack.emplace_back(parent, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
  entries_.reserve(order_.size());
  for (const auto& node : order_) {
    Entry e{node->id, node->op, {}};
    for (const auto& p : node->parents) e.input_ids.push_back(p->id);
    entries_.push_back(std::move(e));
  }
}

void Graph::backward() {
  auto root = loss_.node();
  if (root->data.size() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " + shape_to_string(root->shape));
  }
  if (done_ || root->consumed) throw ContractError("backward already ran on this graph");
  done_ = true;
  if (!root->requires_grad) return;
  root->grad = detail::Buffer(root->data.dtype(), 1);
  root->grad.set(0, 1.0);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
    if (node.backward || !node.parents.empty()) {
      // Interior nodes release their closures and inputs once used.
      node.backward = nullptr;
      node.parents.clear();
      node.consumed = true;
    }
  }
}

void backward(const Tensor& loss) { Graph(loss).backward(); }

}  // namespace mstream
