#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace pskn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Copies are shallow: two Tensor values
// built from the same storage share data and gradient, which is what lets a
// backward sweep accumulate into parameters held elsewhere.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t numel() const { return s_->data.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t rank() const { return s_->shape.size(); }

  std::vector<double>& data() { return s_->data; }
  const std::vector<double>& data() const { return s_->data; }
  double item() const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  // Gradient buffer; allocated on first touch, same shape as data.
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  bool has_grad() const { return s_ && !s_->grad.empty(); }
  void zero_grad();

  // Identity of the underlying storage; used to deduplicate grad resets.
  const void* storage_id() const { return s_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Running batch-norm statistics. Plain buffers, not differentiated.
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
};

// Define-by-run tape. Operations append nodes whose input ids are always
// smaller than the node's own id, so a single reverse sweep visits the graph
// in topological order. A Graph instance is confined to one thread.
class Graph {
 public:
  explicit Graph(bool recording = true) : recording_(recording) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t node_count() const { return nodes_.size(); }

  Tensor constant(Shape shape, std::vector<double> data) const {
    return Tensor(std::move(shape), std::move(data), false);
  }

  // y = a . b for a [M x K], b [K x N].
  Tensor matmul(const Tensor& a, const Tensor& b);

  // Elementwise add. b must either match a's shape or be rank-1 matching
  // a's last extent, in which case it broadcasts across rows (bias add).
  Tensor add(const Tensor& a, const Tensor& b);

  Tensor relu(const Tensor& x);

  // Reduces one axis by maximum; backward routes to the argmax slot, first
  // occurrence on ties.
  Tensor max_over_axis(const Tensor& x, std::size_t axis);

  // Concatenation along the last axis; all leading extents must agree.
  Tensor concat_last(const Tensor& a, const Tensor& b);

  // Row gather: x is [N x C], output is [indices.size() x C]. Backward
  // scatter-adds, so repeated indices accumulate.
  Tensor gather_rows(const Tensor& x, std::vector<std::size_t> indices);

  // Shape change without data movement.
  Tensor reshape(const Tensor& x, Shape shape);

  Tensor sum(const Tensor& x);

  // Batch normalization over rows of x [B x C]. Training mode normalizes by
  // batch mean and variance, flooring the variance at epsilon 1e-5, and
  // updates running stats in place with momentum 0.9; eval mode normalizes
  // by the running stats (same floor).
  Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    RunningStats& stats, bool training);

  // Inverted dropout: scales kept activations by 1/(1-rate) in training so
  // eval is the identity.
  Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

  // Mean over the batch of -log softmax(logits)[label], log-sum-exp
  // stabilized. Returns a scalar.
  Tensor softmax_cross_entropy(const Tensor& logits,
                               const std::vector<int>& labels);

  // Reverse sweep from a scalar root. Grad buffers of every tensor touched
  // by this graph are reset first, so repeated sweeps are bit-identical.
  void backward(const Tensor& root);

 private:
  struct Node {
    std::string op;
    std::vector<int> inputs;
    std::function<void()> backprop;
    std::vector<Tensor> tensors;  // keeps activations alive for the sweep
  };

  int record(std::string op, std::vector<int> inputs,
             std::vector<Tensor> tensors, std::function<void()> backprop);
  static int node_of(const Tensor&);  // -1 for leaves
  bool should_record(std::initializer_list<const Tensor*> ins) const;

  std::vector<Node> nodes_;
  // Maps storage -> producing node id for acyclicity bookkeeping.
  std::vector<std::pair<const void*, int>> producers_;
  bool recording_;
};

// Row-wise softmax of a [B x K] matrix; shared by the loss and by callers
// that want class probabilities.
std::vector<double> softmax_rows(const Tensor& logits);

}  // namespace pskn
