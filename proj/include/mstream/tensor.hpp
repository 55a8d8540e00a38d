#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs while gradient recording is enabled
// and at least one input requires a gradient. backward() walks the recorded
// graph once in reverse topological order, accumulating into grad buffers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mstream/errors.hpp"

namespace mstream {

enum class DType { f64, f32 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& name);

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Calls fn with a value of the scalar type selected by dtype.
template <class Fn>
decltype(auto) visit_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

namespace detail {

class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t n) : dtype_(dtype) { resize(n); }

  DType dtype() const { return dtype_; }
  std::size_t size() const { return dtype_ == DType::f64 ? f64_.size() : f32_.size(); }
  bool empty() const { return size() == 0; }
  void resize(std::size_t n) {
    if (dtype_ == DType::f64) f64_.assign(n, 0.0);
    else f32_.assign(n, 0.0f);
  }

  template <class T>
  std::vector<T>& vec() {
    if constexpr (std::is_same_v<T, double>) return f64_;
    else return f32_;
  }
  template <class T>
  const std::vector<T>& vec() const {
    if constexpr (std::is_same_v<T, double>) return f64_;
    else return f32_;
  }

  double get(std::size_t i) const { return dtype_ == DType::f64 ? f64_[i] : f32_[i]; }
  void set(std::size_t i, double v) {
    if (dtype_ == DType::f64) f64_[i] = v;
    else f32_[i] = static_cast<float>(v);
  }

 private:
  DType dtype_ = DType::f64;
  std::vector<double> f64_;
  std::vector<float> f32_;
};

struct Node {
  std::uint64_t id = 0;
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;
  bool consumed = false;

  template <class T>
  std::vector<T>& grad_vec() {
    if (grad.empty()) grad = Buffer(data.dtype(), data.size());
    return grad.vec<T>();
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, DType dtype = DType::f64, bool requires_grad = false);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const double> values, DType dtype = DType::f64,
                     bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<double> values, DType dtype = DType::f64,
                     bool requires_grad = false);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return node_ != nullptr; }
  std::uint64_t id() const;
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  bool requires_grad() const;
  // Only valid on leaves; intermediate nodes inherit the flag from their inputs.
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  const char* op_name() const;

  double item() const;
  double at(std::size_t flat_index) const;
  std::vector<double> values() const;
  void set(std::size_t flat_index, double value);
  void assign(std::span<const double> values);

  template <class T>
  std::span<const T> data() const {
    return node()->data.template vec<T>();
  }
  template <class T>
  std::span<T> mutable_data() {
    return node()->data.template vec<T>();
  }

  bool has_grad() const;
  // Gradient as a detached tensor (zeros when nothing accumulated yet).
  Tensor grad() const;
  std::vector<double> grad_values() const;
  void zero_grad();

  // Copy of the data that records no history.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  bool all_finite() const;
  // Throws NumericError naming where when any value is NaN or infinite.
  void check_finite(const std::string& where) const;

  std::shared_ptr<detail::Node> node() const;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Reverse topological record of the operations reachable from a scalar loss.
class Graph {
 public:
  struct Entry {
    std::uint64_t output_id;
    std::string op;
    std::vector<std::uint64_t> input_ids;
  };

  explicit Graph(const Tensor& loss);

  // Entries in forward (topological) order: inputs precede consumers.
  const std::vector<Entry>& entries() const { return entries_; }

  // Runs the backward pass once; a second call throws ContractError.
  void backward();

 private:
  Tensor loss_;
  std::vector<std::shared_ptr<detail::Node>> order_;
  std::vector<Entry> entries_;
  bool done_ = false;
};

// Shorthand for Graph(loss).backward().
void backward(const Tensor& loss);

}  // namespace mstream
