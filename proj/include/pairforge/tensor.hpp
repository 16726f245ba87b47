#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pf {

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a caller violates a documented precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor;
struct TensorImpl;

// One recorded operation. The backward closure reads the output gradient and
// accumulates into the gradients of `inputs`.
struct Node {
  const char* name = "";
  std::vector<Tensor> inputs;
  std::function<void(TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

/// Dense row-major float64 array with optional reverse-mode gradient tracking.
///
/// Copies share storage. Operations build a define-by-run graph whenever any
/// input requires grad and gradient recording is enabled (see NoGradGuard).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
  /// intermediate gradients are reset at the start of every sweep.
  void backward() const;

  /// New leaf holding a copy of the data, detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool is_leaf() const;
  TensorImpl* impl() const { return impl_.get(); }
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>, const char*,
                            std::function<void(TensorImpl&)>);
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, const char*,
                            std::function<void(TensorImpl&)>);
};

/// Builds an op output and records its node when gradient tracking applies.
Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   const char* name, std::function<void(TensorImpl&)> backward);
Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   const char* name, std::function<void(TensorImpl&)> backward);

/// Gradient buffer of `t`, allocated to zeros on first use.
std::vector<double>& grad_buffer(const Tensor& t);

bool grad_enabled();

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace pf
