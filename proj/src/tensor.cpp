#include "mtlta/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mtlta/rng.hpp"

namespace mtlta {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  Tensor::BackwardFn backward;
  std::uint64_t id = 0;
};

}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool g_grad_enabled = true;
std::atomic<bool> g_relu_fault{false};

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// (rows, cols) view: rank-1 is a single row, higher ranks fold leading axes.
std::pair<std::size_t, std::size_t> as_matrix(const Shape& s) {
  if (s.empty()) return {1, 1};
  const std::size_t cols = s.back();
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) rows *= s[i];
  return {rows, cols};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::size_t count_valid(const std::vector<bool>& mask, std::size_t len, const char* op) {
  if (!mask.empty() && mask.size() != len) {
    throw ShapeError(std::string(op) + ": mask has " + std::to_string(mask.size()) +
                     " entries for sequence of length " + std::to_string(len));
  }
  std::size_t valid = mask.empty() ? len : static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  if (valid == 0) throw ShapeError(std::string(op) + ": empty sequence (no valid positions)");
  return valid;
}

bool is_valid(const std::vector<bool>& mask, std::size_t i) { return mask.empty() || mask[i]; }

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(new_node(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool track = g_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(values), track);
  if (track) {
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }
std::span<const double> Tensor::values() const { return node_->values; }
std::span<double> Tensor::mutable_values() { return node_->values; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->values[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> g) const {
  auto& dst = node_->grad;
  if (dst.empty()) {
    dst.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

std::uint64_t Tensor::id() const { return node_->id; }

Tensor Tensor::detach() const { return from(shape(), node_->values, false); }

Tensor Tensor::clone() const { return from(shape(), node_->values, node_->requires_grad); }

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->id > b->id; });

  for (auto* n : order) {
    if (n->backward) n->grad.clear();
  }
  const double one = 1.0;
  accumulate_grad(std::span<const double>(&one, 1));
  for (auto* n : order) {
    if (!n->backward || n->grad.empty()) continue;
    n->backward(n->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() > 2 || b.rank() != 2) {
    throw ShapeError("matmul: expected matrices, got " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const auto [m, k] = as_matrix(a.shape());
  const std::size_t k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  Shape shape = a.rank() == 1 ? Shape{n} : Shape{m, n};
  return Tensor::make_op(std::move(shape), std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    const auto av = a.values();
    const auto bv = b.values();
    if (a.requires_grad()) {
      std::vector<double> da(m * k, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          da[i * k + p] = s;
        }
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<double> db(k * n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
        }
      b.accumulate_grad(db);
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  const auto xv = x.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return Tensor::make_op({n, m}, std::move(out), {x}, [x, m, n](std::span<const double> g) {
    std::vector<double> dx(m * n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = g[j * m + i];
    x.accumulate_grad(dx);
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> v(x.values().begin(), x.values().end());
  return Tensor::make_op(std::move(shape), std::move(v), {x}, [x](std::span<const double> g) { x.accumulate_grad(g); });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) a.accumulate_grad(g);
    if (b.requires_grad()) b.accumulate_grad(g);
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  const auto [m, n] = as_matrix(x.shape());
  if (bias.rank() != 1 || bias.dim(0) != n) {
    throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " does not match rows of " +
                     shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return Tensor::make_op(x.shape(), std::move(out), {x, bias}, [x, bias, m, n](std::span<const double> g) {
    if (x.requires_grad()) x.accumulate_grad(g);
    if (bias.requires_grad()) {
      std::vector<double> db(n, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
      bias.accumulate_grad(db);
    }
  });
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "multiply");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    const auto av = a.values();
    const auto bv = b.values();
    if (a.requires_grad()) {
      std::vector<double> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bv[i];
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<double> db(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * av[i];
      b.accumulate_grad(db);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return Tensor::make_op(x.shape(), std::move(out), {x}, [x, factor](std::span<const double> g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
    x.accumulate_grad(dx);
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return Tensor::make_op({}, {s}, {x}, [x](std::span<const double> g) {
    x.accumulate_grad(std::vector<double>(x.numel(), g[0]));
  });
}

Tensor relu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return Tensor::make_op(x.shape(), std::move(out), {x}, [x](std::span<const double> g) {
    const auto xv = x.values();
    std::vector<double> dx(g.size());
    const double factor = g_relu_fault.load(std::memory_order_relaxed) ? 0.5 : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = xv[i] > 0.0 ? factor * g[i] : 0.0;
    x.accumulate_grad(dx);
  });
}

void set_relu_backward_fault(bool enabled) { g_relu_fault.store(enabled, std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// Softmax family

Tensor softmax_rows(const Tensor& x, const std::vector<bool>& column_mask) {
  const auto [m, n] = as_matrix(x.shape());
  count_valid(column_mask, n, "softmax_rows");
  const auto xv = x.values();
  auto out = std::make_shared<std::vector<double>>(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (is_valid(column_mask, j)) mx = std::max(mx, xv[i * n + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!is_valid(column_mask, j)) continue;
      const double e = std::exp(xv[i * n + j] - mx);
      (*out)[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) (*out)[i * n + j] /= z;
  }
  std::vector<double> values = *out;
  return Tensor::make_op(x.shape(), std::move(values), {x}, [x, out, m, n](std::span<const double> g) {
    const auto& y = *out;
    std::vector<double> dx(m * n);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) dx[i * n + j] = y[i * n + j] * (g[i * n + j] - dot);
    }
    x.accumulate_grad(dx);
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto [batch, classes] = as_matrix(logits.shape());
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_string(logits.shape()));
  }
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  const auto lv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = lv.data() + i * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t j = 0; j < classes; ++j) z += std::exp(row[j] - mx);
    const double log_z = std::log(z);
    for (std::size_t j = 0; j < classes; ++j) (*probs)[i * classes + j] = std::exp(row[j] - mx - log_z);
    loss += log_z - (row[labels[i]] - mx);
  }
  loss /= static_cast<double>(batch);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return Tensor::make_op({}, {loss}, {logits}, [logits, probs, lab, batch, classes](std::span<const double> g) {
    std::vector<double> dx(*probs);
    const double s = g[0] / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      dx[i * classes + lab[i]] -= 1.0;
      for (std::size_t j = 0; j < classes; ++j) dx[i * classes + j] *= s;
    }
    logits.accumulate_grad(dx);
  });
}

// ---------------------------------------------------------------------------
// Pooling

Tensor mean_pool(const Tensor& seq, const std::vector<bool>& mask) {
  const auto [len, dim] = as_matrix(seq.shape());
  const std::size_t valid = count_valid(mask, len, "mean_pool");
  const auto sv = seq.values();
  std::vector<double> out(dim, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    if (!is_valid(mask, i)) continue;
    for (std::size_t j = 0; j < dim; ++j) out[j] += sv[i * dim + j];
  }
  const double inv = 1.0 / static_cast<double>(valid);
  for (auto& v : out) v *= inv;
  return Tensor::make_op({dim}, std::move(out), {seq}, [seq, mask, len, dim, inv](std::span<const double> g) {
    std::vector<double> dx(len * dim, 0.0);
    for (std::size_t i = 0; i < len; ++i) {
      if (!is_valid(mask, i)) continue;
      for (std::size_t j = 0; j < dim; ++j) dx[i * dim + j] = g[j] * inv;
    }
    seq.accumulate_grad(dx);
  });
}

Tensor max_pool(const Tensor& seq, const std::vector<bool>& mask) {
  const auto [len, dim] = as_matrix(seq.shape());
  count_valid(mask, len, "max_pool");
  const auto sv = seq.values();
  std::vector<double> out(dim, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(dim, 0);
  for (std::size_t i = 0; i < len; ++i) {
    if (!is_valid(mask, i)) continue;
    for (std::size_t j = 0; j < dim; ++j) {
      // strict comparison keeps the first occurrence on ties
      if (sv[i * dim + j] > out[j]) {
        out[j] = sv[i * dim + j];
        arg[j] = i;
      }
    }
  }
  return Tensor::make_op({dim}, std::move(out), {seq}, [seq, arg, len, dim](std::span<const double> g) {
    std::vector<double> dx(len * dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) dx[arg[j] * dim + j] = g[j];
    seq.accumulate_grad(dx);
  });
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw ShapeError("concat: leading shapes differ for " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()));
  }
  const auto [rows, d1] = as_matrix(a.shape());
  const std::size_t d2 = b.shape().back();
  const std::size_t d = d1 + d2;
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    std::copy_n(av.data() + i * d1, d1, out.data() + i * d);
    std::copy_n(bv.data() + i * d2, d2, out.data() + i * d + d1);
  }
  Shape shape = a.shape();
  shape.back() = d;
  return Tensor::make_op(std::move(shape), std::move(out), {a, b}, [a, b, rows, d1, d2, d](std::span<const double> g) {
    if (a.requires_grad()) {
      std::vector<double> da(rows * d1);
      for (std::size_t i = 0; i < rows; ++i) std::copy_n(g.data() + i * d, d1, da.data() + i * d1);
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<double> db(rows * d2);
      for (std::size_t i = 0; i < rows; ++i) std::copy_n(g.data() + i * d + d1, d2, db.data() + i * d2);
      b.accumulate_grad(db);
    }
  });
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  const auto [rows, d] = as_matrix(x.shape());
  if (x.rank() == 0 || begin > end || end > d) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  const auto xv = x.values();
  std::vector<double> out(rows * w);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(xv.data() + i * d + begin, w, out.data() + i * w);
  Shape shape = x.shape();
  shape.back() = w;
  return Tensor::make_op(std::move(shape), std::move(out), {x}, [x, rows, d, w, begin](std::span<const double> g) {
    std::vector<double> dx(rows * d, 0.0);
    for (std::size_t i = 0; i < rows; ++i) std::copy_n(g.data() + i * w, w, dx.data() + i * d + begin);
    x.accumulate_grad(dx);
  });
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no rows");
  const Shape& row_shape = rows.front().shape();
  const std::size_t w = rows.front().numel();
  std::vector<double> out;
  out.reserve(rows.size() * w);
  for (const auto& r : rows) {
    if (r.shape() != row_shape) {
      throw ShapeError("stack_rows: row shape " + shape_string(r.shape()) + " differs from " +
                       shape_string(row_shape));
    }
    out.insert(out.end(), r.values().begin(), r.values().end());
  }
  Shape shape{rows.size()};
  shape.insert(shape.end(), row_shape.begin(), row_shape.end());
  std::vector<Tensor> inputs(rows.begin(), rows.end());
  return Tensor::make_op(std::move(shape), std::move(out), inputs, [inputs, w](std::span<const double> g) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].requires_grad()) inputs[i].accumulate_grad(g.subspan(i * w, w));
    }
  });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  const auto xv = x.values();
  auto mask = std::make_shared<std::vector<double>>(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    (*mask)[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] = xv[i] * (*mask)[i];
  }
  return Tensor::make_op(x.shape(), std::move(out), {x}, [x, mask](std::span<const double> g) {
    std::vector<double> dx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * (*mask)[i];
    x.accumulate_grad(dx);
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be a matrix, got " + shape_string(table.shape()));
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  const auto tv = table.values();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw IndexError("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data() + ids[i] * d, d, out.data() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return Tensor::make_op({ids.size(), d}, std::move(out), {table}, [table, idv, vocab, d](std::span<const double> g) {
    std::vector<double> dt(vocab * d, 0.0);
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) dt[idv[i] * d + j] += g[i * d + j];
    table.accumulate_grad(dt);
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto [rows, d] = as_matrix(x.shape());
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + "/" + shape_string(bias.shape()) +
                     " do not match width of " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(rows * d);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* r = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += r[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mu) * is;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * gv[j] + bv[j];
    }
  }
  return Tensor::make_op(x.shape(), std::move(out), {x, gain, bias},
                         [x, gain, bias, xhat, inv_std, rows, d](std::span<const double> g) {
                           const auto gv = gain.values();
                           const auto& xh = *xhat;
                           if (x.requires_grad()) {
                             std::vector<double> dx(rows * d);
                             for (std::size_t i = 0; i < rows; ++i) {
                               double s1 = 0.0, s2 = 0.0;
                               for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = g[i * d + j] * gv[j];
                                 s1 += dh;
                                 s2 += dh * xh[i * d + j];
                               }
                               const double dd = static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = g[i * d + j] * gv[j];
                                 dx[i * d + j] = (*inv_std)[i] / dd * (dd * dh - s1 - xh[i * d + j] * s2);
                               }
                             }
                             x.accumulate_grad(dx);
                           }
                           if (gain.requires_grad() || bias.requires_grad()) {
                             std::vector<double> dg(d, 0.0), db(d, 0.0);
                             for (std::size_t i = 0; i < rows; ++i)
                               for (std::size_t j = 0; j < d; ++j) {
                                 dg[j] += g[i * d + j] * xh[i * d + j];
                                 db[j] += g[i * d + j];
                               }
                             if (gain.requires_grad()) gain.accumulate_grad(dg);
                             if (bias.requires_grad()) bias.accumulate_grad(db);
                           }
                         });
}

}  // namespace mtlta
