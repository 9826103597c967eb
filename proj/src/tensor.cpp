#include "advlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "advlab/kernels.hpp"

namespace advlab {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::atomic<std::uint64_t> g_next_id{1};

// Branch pattern of relu/clamp/std-floor decisions, recorded during grad_check.
thread_local std::vector<std::uint8_t>* g_branch_log = nullptr;

inline void log_branch(std::uint8_t b) {
  if (g_branch_log) g_branch_log->push_back(b);
}

NodePtr new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Builds an op result; the graph edge is kept only when some input needs it.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  const bool needs =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  auto n = new_node(std::move(shape), std::move(data), needs);
  n->op = op;
  n->is_leaf = false;
  if (needs) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

inline std::vector<double>& grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

const NodePtr& require(const Tensor& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor operand");
  return t.node();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t r) {
  if (t.rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
}

// Elementwise binary op with rank-0 broadcasting. `da`/`db` give the partial
// derivative of the output w.r.t. each operand at (x, y, out).
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const NodePtr& na = require(a, op);
  const NodePtr& nb = require(b, op);
  const bool a_scalar = na->shape.empty();
  const bool b_scalar = nb->shape.empty();
  if (!a_scalar && !b_scalar && na->shape != nb->shape) shape_fail(op, na->shape, nb->shape);
  const Shape out_shape = a_scalar ? nb->shape : na->shape;
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  const double* av = na->data.data();
  const double* bv = nb->data.data();
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * sa], bv[i * sb]);
  return make_result(op, out_shape, std::move(out), {na, nb}, [sa, sb, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.data.size();
    if (pa.requires_grad) {
      auto& ga = grad_of(pa);
      for (std::size_t i = 0; i < n; ++i)
        ga[i * sa] += self.grad[i] * da(pa.data[i * sa], pb.data[i * sb], self.data[i]);
    }
    if (pb.requires_grad) {
      auto& gb = grad_of(pb);
      for (std::size_t i = 0; i < n; ++i)
        gb[i * sb] += self.grad[i] * db(pa.data[i * sa], pb.data[i * sb], self.data[i]);
    }
  });
}

// Elementwise unary op; `d` is the derivative at (x, out).
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  const NodePtr& na = require(a, op);
  std::vector<double> out(na->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(na->data[i]);
  return make_result(op, na->shape, std::move(out), {na}, [d](Node& self) {
    Node& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (self.grad[i] == 0.0) continue;
      g[i] += self.grad[i] * d(p.data[i], self.data[i]);
    }
  });
}

// outer x extent x inner decomposition around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  node_ = new_node(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return node_ ? node_->shape : kEmpty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->data;
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() const {
  if (node_) node_->grad.clear();
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, false);
}

GradientMap backward(const Tensor& loss) {
  const NodePtr& root = require(loss, "backward");
  if (root->data.size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(root->shape));
  GradientMap out;
  if (!root->requires_grad) return out;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf) n->grad.clear();
  grad_of(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf || n->grad.empty()) continue;
    n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->is_leaf) {
      if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
      out.emplace(n->id, Tensor(n->shape, n->grad));
    } else {
      std::vector<double>().swap(n->grad);
    }
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a,
      [](double x) {
        log_branch(x > 0.0 ? 1 : 0);
        return x > 0.0 ? x : 0.0;
      },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double out) { return out; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double out) { return 0.5 / out; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      "clamp", a,
      [lo, hi](double x) {
        log_branch(x <= lo ? 0 : (x >= hi ? 2 : 1));
        return std::clamp(x, lo, hi);
      },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const NodePtr& na = require(a, "matmul");
  const NodePtr& nb = require(b, "matmul");
  if (na->shape.size() != 2 || nb->shape.size() != 2 || na->shape[1] != nb->shape[0])
    shape_fail("matmul", na->shape, nb->shape);
  const std::size_t m = na->shape[0], k = na->shape[1], n = nb->shape[1];
  std::vector<double> out(m * n);
  kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, m, n, k, na->data, nb->data, out, false);
  return make_result("matmul", {m, n}, std::move(out), {na, nb}, [m, n, k](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      kernels::gemm(kernels::Trans::kNo, kernels::Trans::kYes, m, k, n, self.grad, pb.data,
                    grad_of(pa), true);
    if (pb.requires_grad)
      kernels::gemm(kernels::Trans::kYes, kernels::Trans::kNo, k, n, m, pa.data, self.grad,
                    grad_of(pb), true);
  });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t dilation) {
  const NodePtr& nx = require(x, "conv1d");
  const NodePtr& nw = require(w, "conv1d");
  if (nx->shape.size() != 2 || nw->shape.size() != 3 || nw->shape[1] != nx->shape[0])
    shape_fail("conv1d", nx->shape, nw->shape);
  if (nw->shape[2] % 2 == 0 || dilation == 0)
    throw ShapeError("conv1d: kernel must be odd and dilation positive, got kernel " +
                     shape_str(nw->shape));
  const kernels::Conv1dDims d{nx->shape[0], nw->shape[0], nx->shape[1], nw->shape[2], dilation};
  std::vector<NodePtr> parents{nx, nw};
  std::span<const double> bias_data;
  if (bias.defined()) {
    if (bias.shape() != Shape{d.out_channels}) shape_fail("conv1d(bias)", bias.shape(), nw->shape);
    parents.push_back(bias.node());
    bias_data = bias.node()->data;
  }
  std::vector<double> out(d.out_channels * d.length);
  kernels::conv1d_forward(d, nx->data, nw->data, bias_data, out);
  return make_result("conv1d", {d.out_channels, d.length}, std::move(out), std::move(parents),
                     [d](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pw = *self.parents[1];
                       Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
                       if (px.requires_grad)
                         kernels::conv1d_backward_input(d, self.grad, pw.data, grad_of(px));
                       const bool wb = pw.requires_grad || (pb && pb->requires_grad);
                       if (!wb) return;
                       // Weight and bias gradients come out of one pass; discard
                       // whichever side does not need one.
                       std::vector<double> scratch_w;
                       std::vector<double> scratch_b;
                       std::span<double> gw;
                       if (pw.requires_grad) {
                         gw = grad_of(pw);
                       } else {
                         scratch_w.assign(pw.data.size(), 0.0);
                         gw = scratch_w;
                       }
                       std::span<double> gb;
                       if (pb && pb->requires_grad) gb = grad_of(*pb);
                       kernels::conv1d_backward_weight(d, self.grad, px.data, gw, gb);
                     });
}

Tensor sum(const Tensor& a) {
  const NodePtr& na = require(a, "sum");
  double s = 0.0;
  for (double v : na->data) s += v;
  return make_result("sum", {}, {s}, {na}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = grad_of(p);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require(a, "sum_axis");
  require_rank("sum_axis", a, 2);
  if (axis > 1) throw ShapeError("sum_axis: axis out of range");
  const NodePtr& na = a.node();
  const std::size_t rows = na->shape[0], cols = na->shape[1];
  const std::size_t out_n = axis == 0 ? cols : rows;
  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[axis == 0 ? j : i] += na->data[i * cols + j];
  return make_result("sum_axis", {out_n}, std::move(out), {na}, [axis, rows, cols](Node& self) {
    Node& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += self.grad[axis == 0 ? j : i];
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  require(a, "mean_axis");
  require_rank("mean_axis", a, 2);
  if (axis > 1) throw ShapeError("mean_axis: axis out of range");
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.shape()[axis]));
}

Tensor std_axis(const Tensor& a, std::size_t axis) {
  require(a, "std_axis");
  require_rank("std_axis", a, 2);
  if (axis > 1) throw ShapeError("std_axis: axis out of range");
  const NodePtr& na = a.node();
  const std::size_t rows = na->shape[0], cols = na->shape[1];
  const std::size_t groups = axis == 0 ? cols : rows;
  const std::size_t count = axis == 0 ? rows : cols;
  auto at = [cols, axis](std::size_t g, std::size_t e) {
    return axis == 0 ? e * cols + g : g * cols + e;
  };
  std::vector<double> mean(groups, 0.0), out(groups, 0.0);
  std::vector<std::uint8_t> floored(groups, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0.0;
    for (std::size_t e = 0; e < count; ++e) s += na->data[at(g, e)];
    mean[g] = s / static_cast<double>(count);
    double v = 0.0;
    for (std::size_t e = 0; e < count; ++e) {
      const double dlt = na->data[at(g, e)] - mean[g];
      v += dlt * dlt;
    }
    v /= static_cast<double>(count);
    floored[g] = v <= kStdVarianceFloor;
    log_branch(floored[g]);
    out[g] = std::sqrt(std::max(v, kStdVarianceFloor));
  }
  return make_result(
      "std_axis", {groups}, std::move(out), {na},
      [mean = std::move(mean), floored = std::move(floored), count, at](Node& self) {
        Node& p = *self.parents[0];
        auto& g = grad_of(p);
        for (std::size_t k = 0; k < mean.size(); ++k) {
          if (floored[k]) continue;
          const double c = self.grad[k] / (static_cast<double>(count) * self.data[k]);
          for (std::size_t e = 0; e < count; ++e) g[at(k, e)] += c * (p.data[at(k, e)] - mean[k]);
        }
      });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = require(parts[0], "concat")->shape;
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> extents;
  for (const auto& t : parts) {
    const NodePtr& n = require(t, "concat");
    Shape probe = n->shape;
    if (probe.size() != first.size()) shape_fail("concat", first, probe);
    probe[axis] = first[axis];
    if (probe != first) shape_fail("concat", first, n->shape);
    out_shape[axis] += n->shape[axis];
    extents.push_back(n->shape[axis]);
    nodes.push_back(n);
  }
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < nodes.size(); ++p) {
    const std::size_t ext = extents[p];
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(nodes[p]->data.begin() + static_cast<std::ptrdiff_t>(o * ext * sp.inner),
                  ext * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + offset) * sp.inner));
    offset += ext;
  }
  return make_result("concat", out_shape, std::move(out), nodes,
                     [sp, extents](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         const std::size_t ext = extents[p];
                         Node& pn = *self.parents[p];
                         if (pn.requires_grad) {
                           auto& g = grad_of(pn);
                           for (std::size_t o = 0; o < sp.outer; ++o)
                             for (std::size_t i = 0; i < ext * sp.inner; ++i)
                               g[o * ext * sp.inner + i] +=
                                   self.grad[(o * sp.extent + offset) * sp.inner + i];
                         }
                         offset += ext;
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const NodePtr& na = require(a, "slice");
  if (axis >= na->shape.size() || begin > end || end > na->shape[axis])
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " invalid for " +
                     shape_str(na->shape));
  const AxisSplit sp = split_at(na->shape, axis);
  Shape out_shape = na->shape;
  out_shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(na->data.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + begin) * sp.inner),
                ext * sp.inner, out.begin() + static_cast<std::ptrdiff_t>(o * ext * sp.inner));
  return make_result("slice", out_shape, std::move(out), {na}, [sp, begin, ext](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < ext * sp.inner; ++i)
        g[(o * sp.extent + begin) * sp.inner + i] += self.grad[o * ext * sp.inner + i];
  });
}

Tensor transpose(const Tensor& a) {
  require(a, "transpose");
  require_rank("transpose", a, 2);
  const NodePtr& na = a.node();
  const std::size_t r = na->shape[0], c = na->shape[1];
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = na->data[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {na}, [r, c](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  const NodePtr& na = require(a, "reshape");
  if (shape_numel(shape) != na->data.size()) shape_fail("reshape", na->shape, shape);
  return make_result("reshape", std::move(shape), na->data, {na}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor expand(const Tensor& a, Shape shape) {
  const NodePtr& na = require(a, "expand");
  if (na->shape.size() != 2 || shape.size() != 2) shape_fail("expand", na->shape, shape);
  for (int ax = 0; ax < 2; ++ax)
    if (na->shape[ax] != shape[ax] && na->shape[ax] != 1) shape_fail("expand", na->shape, shape);
  const std::size_t sr = na->shape[0], sc = na->shape[1];
  const std::size_t r = shape[0], c = shape[1];
  auto src = [sr, sc](std::size_t i, std::size_t j) {
    return (sr == 1 ? 0 : i) * sc + (sc == 1 ? 0 : j);
  };
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = na->data[src(i, j)];
  return make_result("expand", std::move(shape), std::move(out), {na}, [r, c, src](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[src(i, j)] += self.grad[i * c + j];
  });
}

Tensor unfold(const Tensor& a, std::size_t size, std::size_t hop) {
  const NodePtr& na = require(a, "unfold");
  if (na->shape.size() != 1) throw ShapeError("unfold: expected rank 1, got " + shape_str(na->shape));
  if (size == 0 || hop == 0) throw ShapeError("unfold: size and hop must be positive");
  const std::size_t len = na->shape[0];
  if (len < size)
    throw ShapeError("unfold: signal of " + std::to_string(len) + " samples shorter than window " +
                     std::to_string(size));
  const std::size_t frames = (len - size) / hop + 1;
  std::vector<double> out(frames * size);
  for (std::size_t f = 0; f < frames; ++f)
    std::copy_n(na->data.begin() + static_cast<std::ptrdiff_t>(f * hop), size,
                out.begin() + static_cast<std::ptrdiff_t>(f * size));
  return make_result("unfold", {frames, size}, std::move(out), {na}, [frames, size, hop](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t i = 0; i < size; ++i) g[f * hop + i] += self.grad[f * size + i];
  });
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h,
                           std::span<const std::size_t> coords) {
  if (!x.defined()) throw ShapeError("grad_check: undefined input");
  const Shape shape = x.shape();
  const std::vector<double> base = x.to_vector();

  auto finite_or_throw = [](double v, const char* what) {
    if (!std::isfinite(v)) throw std::domain_error(std::string("grad_check: non-finite ") + what);
    return v;
  };

  std::vector<std::uint8_t> base_pattern;
  Tensor leaf(shape, base, true);
  g_branch_log = &base_pattern;
  Tensor y;
  try {
    y = f(leaf);
  } catch (...) {
    g_branch_log = nullptr;
    throw;
  }
  g_branch_log = nullptr;
  finite_or_throw(y.item(), "function value");
  backward(y);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

  auto eval_at = [&](std::size_t i, double offset, std::vector<std::uint8_t>* pattern) {
    std::vector<double> v = base;
    v[i] += offset;
    g_branch_log = pattern;
    double r = 0.0;
    try {
      r = f(Tensor(shape, std::move(v))).item();
    } catch (...) {
      g_branch_log = nullptr;
      throw;
    }
    g_branch_log = nullptr;
    return finite_or_throw(r, "function value");
  };

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(base.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    coords = all;
  }

  GradCheckResult res;
  std::vector<std::uint8_t> pattern;
  for (std::size_t i : coords) {
    if (i >= base.size()) throw ShapeError("grad_check: coordinate out of range");
    bool kink = false;
    for (double off : {2.0 * h, -2.0 * h}) {
      pattern.clear();
      eval_at(i, off, &pattern);
      if (pattern != base_pattern) kink = true;
    }
    if (kink) {
      res.excluded.push_back(i);
      continue;
    }
    const double cd = (eval_at(i, h, nullptr) - eval_at(i, -h, nullptr)) / (2.0 * h);
    const double ad = finite_or_throw(analytic[i], "gradient");
    const double err = std::abs(ad - cd) / std::max(1.0, std::abs(cd));
    res.max_rel_error = std::max(res.max_rel_error, err);
    ++res.checked;
  }
  return res;
}

}  // namespace advlab
