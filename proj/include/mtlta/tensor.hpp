#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mtlta/errors.hpp"

namespace mtlta {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense fp64 tensor participating in a reverse-mode differentiation graph.
///
/// A Tensor is a cheap shared handle. Every operation creates a new node whose
/// id is strictly greater than the ids of its inputs, so sorting reachable
/// nodes by id yields a valid topological order for the backward sweep.
/// Gradients accumulate by summation when a tensor feeds several consumers.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  /// Builds an operation node. `backward` receives the output gradient and
  /// must accumulate into the inputs' gradients through `accumulate_grad`.
  /// Exposed so tests and tools can define their own ops.
  using BackwardFn = std::function<void(std::span<const double> out_grad)>;
  static Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                        BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access for leaf tensors (parameters, optimizer updates).
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient buffer; zeros when nothing has been accumulated yet.
  std::span<const double> grad() const;
  void zero_grad();
  /// Adds `g` into this tensor's gradient buffer (allocating on first use).
  void accumulate_grad(std::span<const double> g) const;

  /// Runs reverse-mode differentiation from this scalar.
  void backward() const;

  /// Same shape and values, detached from the graph, requires_grad off.
  Tensor detach() const;
  /// Deep copy of values; keeps the requires_grad flag, drops gradient.
  Tensor clone() const;

  std::uint64_t id() const;
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

// Elementary operations. Rank-1 tensors of width n act as 1×n rows where a
// matrix is expected.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
/// x[m×n] + bias[n] broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

Tensor relu(const Tensor& x);

/// Row-wise softmax. Columns whose `column_mask` entry is false receive
/// probability exactly 0 (additive -inf before normalization).
Tensor softmax_rows(const Tensor& x, const std::vector<bool>& column_mask = {});

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Per-column mean over rows whose mask entry is true. Returns rank-1 [dim].
Tensor mean_pool(const Tensor& seq, const std::vector<bool>& mask);
/// Per-column max over valid rows; gradient goes to the first argmax.
Tensor max_pool(const Tensor& seq, const std::vector<bool>& mask);

/// Concatenation along the last axis; leading dimensions must agree.
Tensor concat(const Tensor& a, const Tensor& b);
/// Columns [begin, end) along the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);
/// Stacks equally sized rank-1 tensors (or rows) into a matrix.
Tensor stack_rows(std::span<const Tensor> rows);

/// Inverted dropout: survivors are scaled by 1/(1-p); eval mode is identity.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

/// Gathers rows of `table` by id; backward scatter-adds.
Tensor embedding_lookup(const Tensor& table, std::span<const std::size_t> ids);

/// Per-row normalization with learnable gain and bias of width = last dim.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Mutation-testing switch: when set, relu's backward pass halves its gradient.
/// Only the gradcheck fault-injection path turns it on.
void set_relu_backward_fault(bool enabled);

}  // namespace mtlta
