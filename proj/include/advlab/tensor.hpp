#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

// Reverse-mode automatic differentiation over dense row-major f64 tensors.
//
// A Tensor is a cheap handle onto an immutable node. Ops build a graph edge
// whenever any input requires a gradient; backward() walks that graph once in
// reverse topological order and accumulates into the grad slot of every leaf
// that requires a gradient. Only scalar (rank-0) operands broadcast.
namespace advlab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  std::span<const double> data() const;
  std::vector<double> to_vector() const;
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad() const;
  std::uint64_t id() const;
  const char* op_name() const;

  // Same values, no graph history, no gradient.
  Tensor detach() const;

  // Internal: ops construct results through this.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Leaf id -> accumulated gradient snapshot.
using GradientMap = std::unordered_map<std::uint64_t, Tensor>;

// Runs reverse-mode differentiation from a scalar loss. Every leaf reachable
// from the loss that requires a gradient receives dLoss/dLeaf in its grad slot
// (accumulating on top of what was there); the returned map holds a snapshot
// per leaf. Throws ShapeError for a non-scalar loss.
GradientMap backward(const Tensor& loss);

// Elementwise; operands share a shape or one side is rank 0.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sqrt(const Tensor& a);
// Gradient passes only strictly inside (lo, hi).
Tensor clamp(const Tensor& a, double lo, double hi);

// Rank-2 (m x k) * (k x n).
Tensor matmul(const Tensor& a, const Tensor& b);
// x: in x length, w: out x in x kernel, bias: out. "Same" zero padding.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t dilation = 1);

Tensor sum(const Tensor& a);
// Rank-2 reductions; result has rank 1.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);
// Population standard deviation, variance floored at kStdVarianceFloor.
Tensor std_axis(const Tensor& a, std::size_t axis);
inline constexpr double kStdVarianceFloor = 1e-8;

Tensor concat(std::span<const Tensor> parts, std::size_t axis = 0);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis = 0);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
// Rank-2 only: repeats size-1 axes up to the requested extents.
Tensor expand(const Tensor& a, Shape shape);
// Rank-1 signal -> (frames x size) overlapping windows with the given hop.
Tensor unfold(const Tensor& a, std::size_t size, std::size_t hop);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// Finite-difference verification of backward().
struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because a relu/clamp changes branch within 2h.
  std::vector<std::size_t> excluded;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// max over coordinates of |autodiff - central difference| / max(1, |central difference|).
// `coords` restricts the check to a subset (all coordinates when empty).
// Throws std::domain_error on non-finite values.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5,
                           std::span<const std::size_t> coords = {});

}  // namespace advlab
