#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A BasicTensor is a handle onto a graph node. Operations on tensors that
// require gradients record their inputs and an adjoint rule; backward()
// collects the reachable nodes into a ComputationTape in topological order
// and replays the adjoints in reverse. Leaf gradients accumulate across calls
// until zero_grad().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace misa {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

[[noreturn]] inline void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a,
                                    const Shape& b) {
  shape_fail(op, "incompatible shapes " + to_string(a) + " and " +
                     to_string(b));
}

}  // namespace detail

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first touched
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  BasicTensor() = default;
  explicit BasicTensor(NodePtr node) : node_(std::move(node)) {}

  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (numel(shape) != values.size()) {
      detail::shape_fail("tensor", "shape " + to_string(shape) + " holds " +
                                       std::to_string(numel(shape)) +
                                       " values, got " +
                                       std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, T(0)),
                       requires_grad);
  }
  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value),
                       requires_grad);
  }
  static BasicTensor scalar(T value, bool requires_grad = false) {
    return BasicTensor(Shape{}, std::vector<T>{value}, requires_grad);
  }
  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows,
                            bool requires_grad = false) {
    std::vector<T> values;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) detail::shape_fail("matrix", "ragged rows");
      values.insert(values.end(), r.begin(), r.end());
    }
    return BasicTensor(Shape{rows.size(), cols}, std::move(values),
                       requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  T item() const {
    if (size() != 1) {
      detail::shape_fail("item", "tensor of shape " + to_string(shape()) +
                                     " is not a scalar");
    }
    return node_->data[0];
  }
  T at(std::size_t row, std::size_t col) const {
    return node_->data[row * node_->shape.back() + col];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }

  // Same values, no history.
  BasicTensor detach() const {
    return BasicTensor(node_->shape, node_->data, false);
  }

  const char* op() const { return node_->op; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

using Tensor = BasicTensor<float>;

// Topologically ordered record of the nodes that lead to a loss.
template <typename T>
class ComputationTape {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  static ComputationTape record(const BasicTensor<T>& root) {
    ComputationTape tape;
    if (!root.node()->requires_grad) return tape;
    // iterative post-order DFS; post-order gives inputs before consumers
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    std::unordered_set<Node<T>*> visited;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        Node<T>* child = node->inputs[next++].get();
        if (child->requires_grad && visited.insert(child).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::size_t size() const { return order_.size(); }
  std::span<Node<T>* const> nodes() const { return order_; }

  void replay(Node<T>& root) const {
    for (Node<T>* n : order_) {
      if (!n->is_leaf()) n->grad.assign(n->data.size(), T(0));
    }
    root.ensure_grad();
    root.grad[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

 private:
  std::vector<Node<T>*> order_;
};

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    detail::shape_fail("backward", "loss must be scalar, got shape " +
                                       to_string(loss.shape()));
  }
  auto tape = ComputationTape<T>::record(loss);
  if (tape.size() == 0) return;
  tape.replay(*loss.node());
}

namespace detail {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* op,
                           std::vector<NodePtr<T>> inputs,
                           std::function<void(Node<T>&)> adjoint) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool any = std::any_of(inputs.begin(), inputs.end(),
                         [](const auto& n) { return n->requires_grad; });
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(adjoint);
  }
  return BasicTensor<T>(std::move(node));
}

// gradient sink for input i, or nullptr when it does not track gradients
template <typename T>
T* grad_of(Node<T>& out, std::size_t i) {
  auto& in = *out.inputs[i];
  if (!in.requires_grad) return nullptr;
  in.ensure_grad();
  return in.grad.data();
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
    out[i] = std::max(da, db);
  }
  return out;
}

// For every linear index of `out`, the matching linear index into `src`.
inline std::vector<std::size_t> broadcast_map(const Shape& src,
                                              const Shape& out) {
  const std::size_t rank = out.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = src.size(); i-- > 0;) {
    const std::size_t oi = i + (rank - src.size());
    stride[oi] = src[i] == 1 ? 0 : s;
    s *= src[i];
  }
  std::vector<std::size_t> map(numel(out));
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < map.size(); ++k) {
    map[k] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offset += stride[d];
      if (counter[d] < out[d]) break;
      offset -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * m + i] : a[i * k + p];
      if (av == T(0)) continue;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      } else {
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
struct AxisSplit {
  std::size_t outer, extent, inner;
};

template <typename T>
AxisSplit<T> split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for " +
                       to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  return {outer, shape[axis], inner};
}

template <typename T, typename Fwd, typename Deriv>
BasicTensor<T> unary(const BasicTensor<T>& x, const char* op, Fwd fwd,
                     Deriv deriv) {
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(x.shape(), std::move(out), op, {x.node()},
                        [deriv](Node<T>& o) {
                          T* g = grad_of(o, 0);
                          const auto& xin = o.inputs[0]->data;
                          for (std::size_t i = 0; i < o.data.size(); ++i) {
                            g[i] += o.grad[i] * deriv(xin[i], o.data[i]);
                          }
                        });
}

enum class Binary { add, sub, mul };

template <typename T>
BasicTensor<T> binary(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      Binary kind, const char* op) {
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case Binary::add: return x + y;
      case Binary::sub: return x - y;
      default: return x * y;
    }
  };
  if (a.shape() == b.shape()) {
    std::vector<T> out(a.size());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(ad[i], bd[i]);
    return make_result<T>(
        a.shape(), std::move(out), op, {a.node(), b.node()},
        [kind](Node<T>& o) {
          const auto& x = o.inputs[0]->data;
          const auto& y = o.inputs[1]->data;
          if (T* ga = grad_of(o, 0)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
              ga[i] += kind == Binary::mul ? o.grad[i] * y[i] : o.grad[i];
            }
          }
          if (T* gb = grad_of(o, 1)) {
            for (std::size_t i = 0; i < o.grad.size(); ++i) {
              gb[i] += kind == Binary::mul   ? o.grad[i] * x[i]
                       : kind == Binary::sub ? -o.grad[i]
                                             : o.grad[i];
            }
          }
        });
  }
  Shape shape = broadcast_shape(op, a.shape(), b.shape());
  auto amap = std::make_shared<std::vector<std::size_t>>(
      broadcast_map(a.shape(), shape));
  auto bmap = std::make_shared<std::vector<std::size_t>>(
      broadcast_map(b.shape(), shape));
  std::vector<T> out(numel(shape));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = apply(ad[(*amap)[i]], bd[(*bmap)[i]]);
  }
  return make_result<T>(
      std::move(shape), std::move(out), op, {a.node(), b.node()},
      [kind, amap, bmap](Node<T>& o) {
        const auto& x = o.inputs[0]->data;
        const auto& y = o.inputs[1]->data;
        if (T* ga = grad_of(o, 0)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) {
            ga[(*amap)[i]] +=
                kind == Binary::mul ? o.grad[i] * y[(*bmap)[i]] : o.grad[i];
          }
        }
        if (T* gb = grad_of(o, 1)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) {
            gb[(*bmap)[i]] += kind == Binary::mul ? o.grad[i] * x[(*amap)[i]]
                              : kind == Binary::sub ? -o.grad[i]
                                                    : o.grad[i];
          }
        }
      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(a, b, detail::Binary::add, "add");
}
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(a, b, detail::Binary::sub, "sub");
}
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return detail::binary(a, b, detail::Binary::mul, "mul");
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  return detail::unary(
      x, "scale", [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return add(a, b);
}
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return sub(a, b);
}
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return mul(a, b);
}

// Integer power, elementwise.
template <typename T>
BasicTensor<T> power(const BasicTensor<T>& x, int exponent) {
  if (exponent < 0) detail::shape_fail("power", "negative exponent");
  auto ipow = [](T v, int e) {
    T r = T(1);
    for (int i = 0; i < e; ++i) r *= v;
    return r;
  };
  return detail::unary(
      x, "power", [=](T v) { return ipow(v, exponent); },
      [=](T v, T) {
        return exponent == 0 ? T(0) : T(exponent) * ipow(v, exponent - 1);
      });
}

// ---------------------------------------------------------------------------
// Activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  // subgradient at 0 is 0
  return detail::unary(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& x, T slope = T(0.01)) {
  return detail::unary(
      x, "leaky_relu", [slope](T v) { return v > T(0) ? v : v * slope; },
      [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& x) {
  return detail::unary(
      x, "tanh", [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  return detail::unary(
      x, "sigmoid",
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

// Inverted dropout: scales kept units by 1/(1-p) while training, identity
// otherwise.
template <typename T, typename Rng>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Rng& rng,
                       bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) detail::shape_fail("dropout", "probability must be < 1");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const T keep_scale = T(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.size());
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = uniform(rng) >= p ? keep_scale : T(0);
    out[i] = in[i] * (*mask)[i];
  }
  return detail::make_result<T>(x.shape(), std::move(out), "dropout",
                                {x.node()}, [mask](Node<T>& o) {
                                  T* g = detail::grad_of(o, 0);
                                  for (std::size_t i = 0; i < o.grad.size();
                                       ++i) {
                                    g[i] += o.grad[i] * (*mask)[i];
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

// [m,k]x[k,n] -> [m,n], or batched [b,m,k]x[b,k,n] -> [b,m,n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  std::size_t batch = 1, m, k, n;
  if (sa.size() == 2 && sb.size() == 2) {
    m = sa[0], k = sa[1], n = sb[1];
    if (sb[0] != k) detail::shape_fail("matmul", sa, sb);
  } else if (sa.size() == 3 && sb.size() == 3) {
    batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    if (sb[0] != batch || sb[1] != k) detail::shape_fail("matmul", sa, sb);
  } else {
    detail::shape_fail("matmul", sa, sb);
  }
  Shape shape = sa.size() == 2 ? Shape{m, n} : Shape{batch, m, n};
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(a.data().data() + i * m * k, b.data().data() + i * k * n,
                 out.data() + i * m * n, m, k, n, false, false, false);
  }
  return detail::make_result<T>(
      std::move(shape), std::move(out), "matmul", {a.node(), b.node()},
      [batch, m, k, n](Node<T>& o) {
        const auto& x = o.inputs[0]->data;
        const auto& y = o.inputs[1]->data;
        T* ga = detail::grad_of(o, 0);
        T* gb = detail::grad_of(o, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          const T* go = o.grad.data() + i * m * n;
          if (ga) {
            detail::gemm(go, y.data() + i * k * n, ga + i * m * k, m, n, k,
                         false, true, true);
          }
          if (gb) {
            detail::gemm(x.data() + i * m * k, go, gb + i * k * n, k, m, n,
                         true, false, true);
          }
        }
      });
}

// Swaps the last two axes (plain transpose for matrices).
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& x) {
  const auto& s = x.shape();
  if (s.size() != 2 && s.size() != 3) {
    detail::shape_fail("transpose", "expects rank 2 or 3, got " + to_string(s));
  }
  const std::size_t batch = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s.back();
  Shape shape = s;
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        out[b * r * c + j * r + i] = in[b * r * c + i * c + j];
      }
    }
  }
  return detail::make_result<T>(
      std::move(shape), std::move(out), "transpose", {x.node()},
      [batch, r, c](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
              g[b * r * c + i * c + j] += o.grad[b * r * c + j * r + i];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    detail::shape_fail("reshape", x.shape(), shape);
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(std::move(shape), std::move(out), "reshape",
                                {x.node()}, [](Node<T>& o) {
                                  T* g = detail::grad_of(o, 0);
                                  for (std::size_t i = 0; i < o.grad.size();
                                       ++i) {
                                    g[i] += o.grad[i];
                                  }
                                });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts,
                      std::size_t axis) {
  if (parts.empty()) detail::shape_fail("concat", "no inputs");
  Shape shape = parts.front().shape();
  if (axis >= shape.size()) detail::shape_fail("concat", "axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    bool ok = ps.size() == shape.size();
    for (std::size_t i = 0; ok && i < ps.size(); ++i) {
      ok = i == axis || ps[i] == shape[i];
    }
    if (!ok) detail::shape_fail("concat", parts.front().shape(), ps);
    total += ps[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_axis<T>(shape, axis, "concat");
  std::vector<T> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::vector<detail::NodePtr<T>> inputs;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t width = p.shape()[axis] * split.inner;
    auto in = p.data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(in.data() + o * width, width,
                  out.data() + o * total * split.inner + offset);
    }
    offsets.push_back(offset);
    offset += width;
    inputs.push_back(p.node());
  }
  const std::size_t row = total * split.inner;
  const std::size_t outer = split.outer;
  return detail::make_result<T>(
      std::move(shape), std::move(out), "concat", std::move(inputs),
      [offsets, row, outer](Node<T>& o) {
        for (std::size_t i = 0; i < o.inputs.size(); ++i) {
          T* g = detail::grad_of(o, i);
          if (!g) continue;
          const std::size_t width = o.inputs[i]->data.size() / outer;
          for (std::size_t r = 0; r < outer; ++r) {
            const T* src = o.grad.data() + r * row + offsets[i];
            for (std::size_t j = 0; j < width; ++j) g[r * width + j] += src[j];
          }
        }
      });
}

// Sub-range [start, start+length) along `axis`.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis,
                     std::size_t start, std::size_t length) {
  const auto split = detail::split_axis<T>(x.shape(), axis, "slice");
  if (start + length > split.extent) {
    detail::shape_fail("slice", "range [" + std::to_string(start) + ", " +
                                    std::to_string(start + length) +
                                    ") exceeds " + to_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t src_row = split.extent * split.inner;
  const std::size_t dst_row = length * split.inner;
  const std::size_t off = start * split.inner;
  std::vector<T> out(split.outer * dst_row);
  auto in = x.data();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(in.data() + o * src_row + off, dst_row,
                out.data() + o * dst_row);
  }
  return detail::make_result<T>(
      std::move(shape), std::move(out), "slice", {x.node()},
      [outer = split.outer, src_row, dst_row, off](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < dst_row; ++j) {
            g[r * src_row + off + j] += o.grad[r * dst_row + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions (64-bit accumulation)

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, "sum",
                                {x.node()}, [](Node<T>& o) {
                                  T* g = detail::grad_of(o, 0);
                                  const std::size_t n = o.inputs[0]->data.size();
                                  for (std::size_t i = 0; i < n; ++i) {
                                    g[i] += o.grad[0];
                                  }
                                });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  if (x.size() == 0) detail::shape_fail("mean", "empty tensor");
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(x.size());
  return detail::make_result<T>(
      Shape{}, {static_cast<T>(acc / n)}, "mean", {x.node()}, [](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        const std::size_t n = o.inputs[0]->data.size();
        const T share = o.grad[0] / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) g[i] += share;
      });
}

namespace detail {

template <typename T>
BasicTensor<T> reduce_axis(const BasicTensor<T>& x, std::size_t axis,
                           bool average, const char* op) {
  const auto s = split_axis<T>(x.shape(), axis, op);
  Shape shape = x.shape();
  shape[axis] = 1;
  std::vector<T> out(s.outer * s.inner);
  auto in = x.data();
  const double denom = average ? static_cast<double>(s.extent) : 1.0;
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        acc += static_cast<double>(in[(o * s.extent + e) * s.inner + i]);
      }
      out[o * s.inner + i] = static_cast<T>(acc / denom);
    }
  }
  return make_result<T>(std::move(shape), std::move(out), op, {x.node()},
                        [s, denom](Node<T>& o) {
                          T* g = grad_of(o, 0);
                          for (std::size_t a = 0; a < s.outer; ++a) {
                            for (std::size_t i = 0; i < s.inner; ++i) {
                              const T share = o.grad[a * s.inner + i] /
                                              static_cast<T>(denom);
                              for (std::size_t e = 0; e < s.extent; ++e) {
                                g[(a * s.extent + e) * s.inner + i] += share;
                              }
                            }
                          }
                        });
}

}  // namespace detail

// Reductions along one axis keep it with extent 1.
template <typename T>
BasicTensor<T> sum_axis(const BasicTensor<T>& x, std::size_t axis) {
  return detail::reduce_axis(x, axis, false, "sum_axis");
}
template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis) {
  return detail::reduce_axis(x, axis, true, "mean_axis");
}

template <typename T>
BasicTensor<T> frobenius_sq(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return detail::make_result<T>(Shape{}, {static_cast<T>(acc)}, "frobenius_sq",
                                {x.node()}, [](Node<T>& o) {
                                  T* g = detail::grad_of(o, 0);
                                  const auto& xin = o.inputs[0]->data;
                                  for (std::size_t i = 0; i < xin.size(); ++i) {
                                    g[i] += T(2) * xin[i] * o.grad[0];
                                  }
                                });
}

// Euclidean norm of all entries. Gradient at the origin is taken as 0.
template <typename T>
BasicTensor<T> l2_norm(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v) * static_cast<double>(v);
  return detail::make_result<T>(
      Shape{}, {static_cast<T>(std::sqrt(acc))}, "l2_norm", {x.node()},
      [](Node<T>& o) {
        if (o.data[0] == T(0)) return;
        T* g = detail::grad_of(o, 0);
        const auto& xin = o.inputs[0]->data;
        const T factor = o.grad[0] / o.data[0];
        for (std::size_t i = 0; i < xin.size(); ++i) g[i] += xin[i] * factor;
      });
}

// Scales each row of a matrix to unit l2 norm; all-zero rows stay zero.
template <typename T>
BasicTensor<T> normalize_rows(const BasicTensor<T>& x) {
  if (x.rank() != 2) {
    detail::shape_fail("normalize_rows",
                       "expects a matrix, got " + to_string(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  auto norms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = in[r * cols + c];
      acc += v * v;
    }
    (*norms)[r] = static_cast<T>(std::sqrt(acc));
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] =
          (*norms)[r] > T(0) ? in[r * cols + c] / (*norms)[r] : T(0);
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "normalize_rows", {x.node()},
      [norms, rows, cols](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          const T norm = (*norms)[r];
          if (norm == T(0)) continue;
          const T* y = o.data.data() + r * cols;
          const T* gy = o.grad.data() + r * cols;
          double dot = 0.0;
          for (std::size_t c = 0; c < cols; ++c) dot += double(y[c]) * gy[c];
          for (std::size_t c = 0; c < cols; ++c) {
            g[r * cols + c] += (gy[c] - static_cast<T>(dot) * y[c]) / norm;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Softmax family

namespace detail {

template <typename T>
void require_finite(const BasicTensor<T>& x, const char* op) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) + ": non-finite input");
    }
  }
}

}  // namespace detail

// Max-subtracted softmax along `axis`.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, std::size_t axis) {
  detail::require_finite(x, "softmax");
  const auto s = detail::split_axis<T>(x.shape(), axis, "softmax");
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      T peak = in[at(0)];
      for (std::size_t e = 1; e < s.extent; ++e) peak = std::max(peak, in[at(e)]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[at(e)] = std::exp(in[at(e)] - peak);
        total += out[at(e)];
      }
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[at(e)] = static_cast<T>(out[at(e)] / total);
      }
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "softmax", {x.node()}, [s](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        for (std::size_t a = 0; a < s.outer; ++a) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            auto at = [&](std::size_t e) {
              return (a * s.extent + e) * s.inner + i;
            };
            double dot = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) {
              dot += double(o.grad[at(e)]) * o.data[at(e)];
            }
            for (std::size_t e = 0; e < s.extent; ++e) {
              g[at(e)] += o.data[at(e)] * (o.grad[at(e)] - static_cast<T>(dot));
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& x, std::size_t axis) {
  detail::require_finite(x, "log_softmax");
  const auto s = detail::split_axis<T>(x.shape(), axis, "log_softmax");
  std::vector<T> out(x.size());
  auto in = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto at = [&](std::size_t e) { return (o * s.extent + e) * s.inner + i; };
      T peak = in[at(0)];
      for (std::size_t e = 1; e < s.extent; ++e) peak = std::max(peak, in[at(e)]);
      double total = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        total += std::exp(static_cast<double>(in[at(e)] - peak));
      }
      const T log_total = static_cast<T>(std::log(total));
      for (std::size_t e = 0; e < s.extent; ++e) {
        out[at(e)] = in[at(e)] - peak - log_total;
      }
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), "log_softmax", {x.node()}, [s](Node<T>& o) {
        T* g = detail::grad_of(o, 0);
        for (std::size_t a = 0; a < s.outer; ++a) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            auto at = [&](std::size_t e) {
              return (a * s.extent + e) * s.inner + i;
            };
            double total = 0.0;
            for (std::size_t e = 0; e < s.extent; ++e) total += o.grad[at(e)];
            for (std::size_t e = 0; e < s.extent; ++e) {
              g[at(e)] += o.grad[at(e)] -
                          std::exp(o.data[at(e)]) * static_cast<T>(total);
            }
          }
        }
      });
}

// Converts between scalar instantiations (no history).
template <typename To, typename From>
BasicTensor<To> cast(const BasicTensor<From>& x) {
  std::vector<To> values(x.data().begin(), x.data().end());
  return BasicTensor<To>(x.shape(), std::move(values));
}

}  // namespace misa
