#pragma once

// Define-by-run reverse-mode engine over dense 2-D double tensors.
// The tape is rebuilt for every forward pass; parameters live outside
// the tape and accumulate gradients across passes until zeroed.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace graft::ad {

// Thrown when a forward or backward pass produces non-finite values.
class numeric_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamTensor {
  std::string id;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<double> grad;
  bool trainable = true;

  ParamTensor() = default;
  ParamTensor(std::string name, std::size_t r, std::size_t c, bool train = true)
      : id(std::move(name)), rows(r), cols(c), values(r * c, 0.0), grad(r * c, 0.0),
        trainable(train) {}

  std::size_t size() const { return rows * cols; }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

using ParamPtr = std::shared_ptr<ParamTensor>;

class Tape;

struct Value {
  Tape* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  std::size_t rows() const;
  std::size_t cols() const;
  const std::vector<double>& data() const;
  double scalar() const;
};

class Tape {
 public:
  Value constant(std::size_t rows, std::size_t cols, std::vector<double> vals);
  Value param(const ParamPtr& p);

  // Runs reverse accumulation from a scalar loss. Gradients of every
  // trainable parameter reachable from the loss are accumulated in place.
  void backward(Value loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  friend struct Value;
  friend Value add(Value a, Value b);
  friend Value sub(Value a, Value b);
  friend Value scale(Value a, double c);
  friend Value matmul(Value a, Value b);
  friend Value matmul_nt(Value a, Value b);
  friend Value add_row_broadcast(Value x, Value row);
  friend Value relu(Value x);
  friend Value sigmoid(Value x);
  friend Value row_softmax(Value x);
  friend Value concat_cols(std::span<const Value> parts);
  friend Value gather_rows(Value x, const std::vector<int>& idx);
  friend Value scatter_add_rows(Value src, const std::vector<int>& dst, std::size_t n_rows);
  friend Value scale_rows(Value x, Value s);
  friend Value segment_softmax(Value logits, const std::vector<int>& seg, std::size_t n_seg);
  friend Value mean_rows(Value x);
  friend Value sum_all(Value x);
  friend Value masked_bce(Value logits, const std::vector<int>& labels);

  struct Node {
    std::size_t rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Tape&)> back;  // pulls this node's grad into parents
  };

  int push(std::size_t rows, std::size_t cols, std::vector<double> vals,
           std::function<void(Tape&)> back);
  Node& node(int i) { return nodes_[i]; }
  const Node& node(int i) const { return nodes_[i]; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Elementwise / linear algebra primitives. All check shapes and throw
// std::invalid_argument on mismatch.
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value scale(Value a, double c);
Value matmul(Value a, Value b);     // (n×k)·(k×m)
Value matmul_nt(Value a, Value b);  // (n×k)·(m×k)^T
Value add_row_broadcast(Value x, Value row);
Value relu(Value x);
Value sigmoid(Value x);
Value row_softmax(Value x);  // max-subtracted, per row
Value concat_cols(std::span<const Value> parts);

// Graph-structured primitives. Reductions over rows use value-sorted
// summation so results are invariant under node relabeling.
Value gather_rows(Value x, const std::vector<int>& idx);
Value scatter_add_rows(Value src, const std::vector<int>& dst, std::size_t n_rows);
Value scale_rows(Value x, Value s);  // s is n×1
Value segment_softmax(Value logits, const std::vector<int>& seg, std::size_t n_seg);
Value mean_rows(Value x);  // 1×c
Value sum_all(Value x);    // 1×1

// Mean BCE over non-missing entries; labels use {0, 1, -1 = missing}.
// Requires at least one non-missing label.
Value masked_bce(Value logits, const std::vector<int>& labels);

// Convenience: x·W + b with W (in×out) and b (1×out) parameters.
Value affine(Tape& t, Value x, const ParamPtr& w, const ParamPtr& b);

// Order-invariant sum: sorts a scratch copy by value before accumulating.
double sorted_sum(std::vector<double>& scratch);

}  // namespace graft::ad
