#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lgfa/error.hpp"
#include "lgfa/rng.hpp"

namespace lgfa {

template <typename T>
class Tensor;

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

// One recorded value in the computation graph. Holds the forward value, the
// gradient buffer, the producing op name, its input nodes, and the local
// gradient rule that scatters this node's grad into its inputs.
template <typename T>
struct Node {
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized lazily; valid only after a backward pass
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward_fn;

  std::size_t numel() const { return value.size(); }

  void reset_grad() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), T(0));
    } else {
      std::fill(grad.begin(), grad.end(), T(0));
    }
  }

  void accumulate_grad(std::size_t index, T g) {
    if (!requires_grad) return;
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    grad[index] += g;
  }
};

}  // namespace detail

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

// Dense row-major tensor handle. Copies are shallow: they alias the same
// node, which is what lets parameters persist across graph builds.
template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape) {
    return filled(std::move(shape), T(0));
  }

  static Tensor filled(std::vector<int> shape, T v) {
    auto node = std::make_shared<Node>();
    node->value.assign(shape_numel(shape), v);
    node->shape = std::move(shape);
    return Tensor(std::move(node));
  }

  static Tensor from(std::vector<int> shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  // Learnable tensor drawn uniformly from (-bound, bound).
  static Tensor param_uniform(std::vector<int> shape, Rng& rng, double bound) {
    std::vector<T> data(shape_numel(shape));
    for (auto& x : data) x = static_cast<T>(rng.uniform(-bound, bound));
    Tensor t = from(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
  }

  static Tensor param_zeros(std::vector<int> shape) {
    Tensor t = zeros(std::move(shape));
    t.set_requires_grad(true);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return node_->value.size(); }
  int rows() const { return dim(0); }
  int cols() const { return dim(1); }

  // Spans alias the underlying node; calling on a temporary would dangle.
  std::span<const T> values() const& { return node_->value; }
  std::span<T> values() & { return node_->value; }
  std::span<const T> values() && = delete;
  T at(int i, int j) const { return node_->value[static_cast<std::size_t>(i) * cols() + j]; }
  T& at(int i, int j) { return node_->value[static_cast<std::size_t>(i) * cols() + j]; }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const& { return node_->grad; }
  std::span<T> grad() & { return node_->grad; }
  std::span<const T> grad() && = delete;
  void zero_grad() { node_->reset_grad(); }

  const char* op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op(const char* op, std::vector<int> shape, std::vector<T> value,
                  std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->inputs.reserve(inputs.size());
  bool rg = false;
  for (const auto& in : inputs) {
    rg = rg || in.requires_grad();
    node->inputs.push_back(in.node());
  }
  node->requires_grad = rg;
  if (rg) node->backward_fn = std::move(backward_fn);
  return Tensor<T>(std::move(node));
}

// Row-major matrix products used by forward and gradient rules.
// c(m x n) = a(m x k) * b(k x n); accumulate adds into c.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * n;
    if (!acc) std::fill(crow, crow + n, T(0));
    const T* arow = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const T aip = arow[p];
      if (aip == T(0)) continue;
      const T* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c(m x n) = a(m x k) * b(n x k)^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::size_t>(i) * k;
    T* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::size_t>(j) * k;
      T dot = T(0);
      for (int p = 0; p < k; ++p) dot += arow[p] * brow[p];
      crow[j] = acc ? crow[j] + dot : dot;
    }
  }
}

// c(m x n) = a(k x m)^T * b(k x n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n, bool acc) {
  if (!acc) std::fill(c, c + static_cast<std::size_t>(m) * n, T(0));
  for (int p = 0; p < k; ++p) {
    const T* arow = a + static_cast<std::size_t>(p) * m;
    const T* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const T api = arow[i];
      if (api == T(0)) continue;
      T* crow = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template <typename T>
void require_2d(const char* op, const Tensor<T>& t) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

// The ordered list of executed ops reachable from a root, each entry after
// every entry producing one of its inputs. backward() replays it in reverse.
template <typename T>
class ComputationRecord {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  static ComputationRecord trace(const Tensor<T>& root) {
    ComputationRecord rec;
    if (!root.defined()) return rec;
    // Iterative post-order DFS; children (inputs) are visited in their
    // recorded order so the result is deterministic.
    std::unordered_set<const detail::Node<T>*> seen;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next_input] = stack.back();
      if (next_input < node->inputs.size()) {
        NodePtr child = node->inputs[next_input++];
        if (seen.insert(child.get()).second) {
          stack.emplace_back(std::move(child), 0);
        }
      } else {
        rec.order_.push_back(node);
        stack.pop_back();
      }
    }
    return rec;
  }

  const std::vector<NodePtr>& ops() const { return order_; }
  std::size_t size() const { return order_.size(); }

 private:
  std::vector<NodePtr> order_;
};

// Reverse-mode gradient of a scalar loss. Gradients of every reachable
// requires_grad tensor are recomputed from scratch, so repeated calls on the
// same graph state give identical results.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  auto record = ComputationRecord<T>::trace(loss);
  for (const auto& node : record.ops()) {
    if (node->requires_grad) node->reset_grad();
  }
  if (!loss.requires_grad()) return;
  loss.node()->grad[0] = T(1);
  const auto& order = record.ops();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto& node = **it;
    if (node.backward_fn && node.requires_grad) node.backward_fn(node);
  }
}

// ---- elementwise ops -------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_op<T>("add", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              auto& ga = *n.inputs[0];
                              auto& gb = *n.inputs[1];
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                ga.accumulate_grad(i, n.grad[i]);
                                gb.accumulate_grad(i, n.grad[i]);
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return detail::make_op<T>("mul", a.shape(), std::move(out), {a, b},
                            [](detail::Node<T>& n) {
                              auto& na = *n.inputs[0];
                              auto& nb = *n.inputs[1];
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                na.accumulate_grad(i, n.grad[i] * nb.value[i]);
                                nb.accumulate_grad(i, n.grad[i] * na.value[i]);
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  return detail::make_op<T>("scale", a.shape(), std::move(out), {a},
                            [c](detail::Node<T>& n) {
                              auto& na = *n.inputs[0];
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                na.accumulate_grad(i, n.grad[i] * c);
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

// GELU with the exact erf form; derivative is Phi(x) + x*phi(x).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(xv[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * 0.7071067811865476)));
  }
  return detail::make_op<T>("gelu", x.shape(), std::move(out), {x},
                            [](detail::Node<T>& n) {
                              auto& nx = *n.inputs[0];
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                const double v = static_cast<double>(nx.value[i]);
                                const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
                                const double pdf = 0.3989422804014327 * std::exp(-0.5 * v * v);
                                nx.accumulate_grad(i, n.grad[i] * static_cast<T>(cdf + v * pdf));
                              }
                            });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return detail::make_op<T>("sum", {1}, {total}, {a},
                            [](detail::Node<T>& n) {
                              auto& na = *n.inputs[0];
                              const T g = n.grad[0];
                              for (std::size_t i = 0; i < na.value.size(); ++i) {
                                na.accumulate_grad(i, g);
                              }
                            });
}

// ---- structural ops --------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  std::vector<T> out(a.values().begin(), a.values().end());
  return detail::make_op<T>("reshape", std::move(shape), std::move(out), {a},
                            [](detail::Node<T>& n) {
                              auto& na = *n.inputs[0];
                              for (std::size_t i = 0; i < n.grad.size(); ++i) {
                                na.accumulate_grad(i, n.grad[i]);
                              }
                            });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_2d("transpose", a);
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(a.numel());
  auto av = a.values();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(j) * m + i] = av[static_cast<std::size_t>(i) * n + j];
    }
  }
  return detail::make_op<T>("transpose", {n, m}, std::move(out), {a},
                            [m, n](detail::Node<T>& n_) {
                              auto& na = *n_.inputs[0];
                              for (int i = 0; i < m; ++i) {
                                for (int j = 0; j < n; ++j) {
                                  na.accumulate_grad(
                                      static_cast<std::size_t>(i) * n + j,
                                      n_.grad[static_cast<std::size_t>(j) * m + i]);
                                }
                              }
                            });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, int row0, int count) {
  detail::require_2d("slice_rows", a);
  if (row0 < 0 || count < 1 || row0 + count > a.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(row0) + ", " +
                     std::to_string(row0 + count) + ") out of " + shape_str(a.shape()));
  }
  const int n = a.cols();
  auto av = a.values();
  std::vector<T> out(av.begin() + static_cast<std::size_t>(row0) * n,
                     av.begin() + static_cast<std::size_t>(row0 + count) * n);
  return detail::make_op<T>("slice_rows", {count, n}, std::move(out), {a},
                            [row0, n](detail::Node<T>& node) {
                              auto& na = *node.inputs[0];
                              const std::size_t base = static_cast<std::size_t>(row0) * n;
                              for (std::size_t i = 0; i < node.grad.size(); ++i) {
                                na.accumulate_grad(base + i, node.grad[i]);
                              }
                            });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int col0, int count) {
  detail::require_2d("slice_cols", a);
  if (col0 < 0 || count < 1 || col0 + count > a.cols()) {
    throw ShapeError("slice_cols: cols [" + std::to_string(col0) + ", " +
                     std::to_string(col0 + count) + ") out of " + shape_str(a.shape()));
  }
  const int m = a.rows(), n = a.cols();
  std::vector<T> out(static_cast<std::size_t>(m) * count);
  auto av = a.values();
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < count; ++j) {
      out[static_cast<std::size_t>(i) * count + j] =
          av[static_cast<std::size_t>(i) * n + col0 + j];
    }
  }
  return detail::make_op<T>("slice_cols", {m, count}, std::move(out), {a},
                            [col0, m, n, count](detail::Node<T>& node) {
                              auto& na = *node.inputs[0];
                              for (int i = 0; i < m; ++i) {
                                for (int j = 0; j < count; ++j) {
                                  na.accumulate_grad(
                                      static_cast<std::size_t>(i) * n + col0 + j,
                                      node.grad[static_cast<std::size_t>(i) * count + j]);
                                }
                              }
                            });
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const int n = parts[0].cols();
  int m = 0;
  for (const auto& p : parts) {
    detail::require_2d("concat_rows", p);
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column counts disagree: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    m += p.rows();
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(m) * n);
  for (const auto& p : parts) {
    auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  return detail::make_op<T>("concat_rows", {m, n}, std::move(out), parts,
                            [](detail::Node<T>& node) {
                              std::size_t offset = 0;
                              for (auto& in : node.inputs) {
                                for (std::size_t i = 0; i < in->value.size(); ++i) {
                                  in->accumulate_grad(i, node.grad[offset + i]);
                                }
                                offset += in->value.size();
                              }
                            });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const int m = parts[0].rows();
  int n = 0;
  for (const auto& p : parts) {
    detail::require_2d("concat_cols", p);
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row counts disagree: " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    n += p.cols();
  }
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  int col0 = 0;
  for (const auto& p : parts) {
    auto pv = p.values();
    const int pc = p.cols();
    for (int i = 0; i < m; ++i) {
      std::copy(pv.begin() + static_cast<std::size_t>(i) * pc,
                pv.begin() + static_cast<std::size_t>(i + 1) * pc,
                out.begin() + static_cast<std::size_t>(i) * n + col0);
    }
    col0 += pc;
  }
  return detail::make_op<T>("concat_cols", {m, n}, std::move(out), parts,
                            [m, n](detail::Node<T>& node) {
                              int col0 = 0;
                              for (auto& in : node.inputs) {
                                const int pc = in->shape[1];
                                for (int i = 0; i < m; ++i) {
                                  for (int j = 0; j < pc; ++j) {
                                    in->accumulate_grad(
                                        static_cast<std::size_t>(i) * pc + j,
                                        node.grad[static_cast<std::size_t>(i) * n + col0 + j]);
                                  }
                                }
                                col0 += pc;
                              }
                            });
}

// ---- matrix ops ------------------------------------------------------------

// Gradients: d(a) = g * b^T, d(b) = a^T * g.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d("matmul", a);
  detail::require_2d("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  detail::gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n, false);
  return detail::make_op<T>(
      "matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node<T>& node) {
        auto& na = *node.inputs[0];
        auto& nb = *node.inputs[1];
        if (na.requires_grad) {
          if (na.grad.size() != na.value.size()) na.grad.assign(na.value.size(), T(0));
          detail::gemm_nt(node.grad.data(), nb.value.data(), na.grad.data(), m, n, k, true);
        }
        if (nb.requires_grad) {
          if (nb.grad.size() != nb.value.size()) nb.grad.assign(nb.value.size(), T(0));
          detail::gemm_tn(na.value.data(), node.grad.data(), nb.grad.data(), k, m, n, true);
        }
      });
}

// x(n x d_in) * w(d_in x d_out) + b broadcast over rows.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_2d("linear", x);
  detail::require_2d("linear", w);
  if (x.cols() != w.rows()) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  if (b.numel() != static_cast<std::size_t>(w.cols())) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  const int m = x.rows(), k = x.cols(), n = w.cols();
  std::vector<T> out(static_cast<std::size_t>(m) * n);
  detail::gemm_nn(x.values().data(), w.values().data(), out.data(), m, k, n, false);
  auto bv = b.values();
  for (int i = 0; i < m; ++i) {
    T* row = out.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) row[j] += bv[j];
  }
  return detail::make_op<T>(
      "linear", {m, n}, std::move(out), {x, w, b}, [m, k, n](detail::Node<T>& node) {
        auto& nx = *node.inputs[0];
        auto& nw = *node.inputs[1];
        auto& nb = *node.inputs[2];
        if (nx.requires_grad) {
          if (nx.grad.size() != nx.value.size()) nx.grad.assign(nx.value.size(), T(0));
          detail::gemm_nt(node.grad.data(), nw.value.data(), nx.grad.data(), m, n, k, true);
        }
        if (nw.requires_grad) {
          if (nw.grad.size() != nw.value.size()) nw.grad.assign(nw.value.size(), T(0));
          detail::gemm_tn(nx.value.data(), node.grad.data(), nw.grad.data(), k, m, n, true);
        }
        if (nb.requires_grad) {
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
              nb.accumulate_grad(j, node.grad[static_cast<std::size_t>(i) * n + j]);
            }
          }
        }
      });
}

// Per-row normalization to zero mean and unit population variance, then
// elementwise affine. Rows of zero variance collapse to beta via eps.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  detail::require_2d("layer_norm", x);
  const int m = x.rows(), d = x.cols();
  if (gamma.numel() != static_cast<std::size_t>(d) || beta.numel() != static_cast<std::size_t>(d)) {
    throw ShapeError("layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match input " + shape_str(x.shape()));
  }
  if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
  std::vector<T> out(x.numel());
  std::vector<T> inv_std(m);
  std::vector<T> means(m);
  auto xv = x.values();
  auto gv = gamma.values(), bv = beta.values();
  for (int i = 0; i < m; ++i) {
    const T* row = xv.data() + static_cast<std::size_t>(i) * d;
    T mean = T(0);
    for (int j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      const T c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T is = T(1) / std::sqrt(var + eps);
    means[i] = mean;
    inv_std[i] = is;
    T* orow = out.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < d; ++j) orow[j] = (row[j] - mean) * is * gv[j] + bv[j];
  }
  return detail::make_op<T>(
      "layer_norm", x.shape(), std::move(out), {x, gamma, beta},
      [m, d, means = std::move(means), inv_std = std::move(inv_std)](detail::Node<T>& node) {
        auto& nx = *node.inputs[0];
        auto& ng = *node.inputs[1];
        auto& nb = *node.inputs[2];
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * d;
          const T is = inv_std[i];
          // xhat_j = (x_j - mean) * inv_std
          T sum_ghat = T(0);   // sum_j g_j * gamma_j
          T sum_gxhat = T(0);  // sum_j g_j * gamma_j * xhat_j
          for (int j = 0; j < d; ++j) {
            const T xhat = (nx.value[base + j] - means[i]) * is;
            const T gj = node.grad[base + j] * ng.value[j];
            sum_ghat += gj;
            sum_gxhat += gj * xhat;
            ng.accumulate_grad(j, node.grad[base + j] * xhat);
            nb.accumulate_grad(j, node.grad[base + j]);
          }
          if (nx.requires_grad) {
            const T inv_d = T(1) / static_cast<T>(d);
            for (int j = 0; j < d; ++j) {
              const T xhat = (nx.value[base + j] - means[i]) * is;
              const T gj = node.grad[base + j] * ng.value[j];
              nx.accumulate_grad(base + j,
                                 is * (gj - inv_d * sum_ghat - xhat * inv_d * sum_gxhat));
            }
          }
        }
      });
}

// Numerically stabilized row softmax (per-row max subtraction).
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_2d("softmax_rows", x);
  const int m = x.rows(), d = x.cols();
  std::vector<T> out(x.numel());
  auto xv = x.values();
  for (int i = 0; i < m; ++i) {
    const T* row = xv.data() + static_cast<std::size_t>(i) * d;
    T* orow = out.data() + static_cast<std::size_t>(i) * d;
    T mx = row[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    T total = T(0);
    for (int j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      total += orow[j];
    }
    for (int j = 0; j < d; ++j) orow[j] /= total;
  }
  return detail::make_op<T>(
      "softmax_rows", x.shape(), std::move(out), {x}, [m, d](detail::Node<T>& node) {
        auto& nx = *node.inputs[0];
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * d;
          T dot = T(0);
          for (int j = 0; j < d; ++j) dot += node.grad[base + j] * node.value[base + j];
          for (int j = 0; j < d; ++j) {
            nx.accumulate_grad(base + j, node.value[base + j] * (node.grad[base + j] - dot));
          }
        }
      });
}

// Mean softmax cross-entropy over rows of logits against integer labels.
template <typename T>
Tensor<T> cross_entropy_mean(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_2d("cross_entropy", logits);
  const int m = logits.rows(), c = logits.cols();
  if (static_cast<std::size_t>(m) != labels.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     shape_str(logits.shape()) + " logits");
  }
  std::vector<T> probs(logits.numel());
  auto zv = logits.values();
  T total = T(0);
  for (int i = 0; i < m; ++i) {
    if (labels[i] < 0 || labels[i] >= c) {
      throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) +
                       " out of range for " + std::to_string(c) + " classes");
    }
    const T* row = zv.data() + static_cast<std::size_t>(i) * c;
    T* prow = probs.data() + static_cast<std::size_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int j = 0; j < c; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (int j = 0; j < c; ++j) prow[j] /= sum;
    total += std::log(sum) + mx - row[labels[i]];
  }
  total /= static_cast<T>(m);
  return detail::make_op<T>(
      "cross_entropy", {1}, {total}, {logits},
      [m, c, labels, probs = std::move(probs)](detail::Node<T>& node) {
        auto& nz = *node.inputs[0];
        const T g = node.grad[0] / static_cast<T>(m);
        for (int i = 0; i < m; ++i) {
          const std::size_t base = static_cast<std::size_t>(i) * c;
          for (int j = 0; j < c; ++j) {
            const T onehot = (j == labels[i]) ? T(1) : T(0);
            nz.accumulate_grad(base + j, g * (probs[base + j] - onehot));
          }
        }
      });
}

}  // namespace lgfa
