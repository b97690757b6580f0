#include "tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pskn {

namespace {

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic,
                                                   Eigen::RowMajor>>;

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " implies " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->data = std::move(data);
  s_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item: tensor " + shape_str(shape()) + " is not scalar");
  return s_->data[0];
}

std::vector<double>& Tensor::grad() {
  if (s_->grad.size() != s_->data.size()) s_->grad.assign(s_->data.size(), 0.0);
  return s_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (s_->grad.size() != s_->data.size())
    throw Error("grad: no gradient has been computed for this tensor");
  return s_->grad;
}

void Tensor::zero_grad() {
  if (s_) s_->grad.assign(s_->data.size(), 0.0);
}

int Graph::node_of(const Tensor&) { return -1; }

bool Graph::should_record(std::initializer_list<const Tensor*> ins) const {
  if (!recording_) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

int Graph::record(std::string op, std::vector<int> inputs,
                  std::vector<Tensor> tensors, std::function<void()> backprop) {
  const int id = static_cast<int>(nodes_.size());
  for (int in : inputs)
    if (in >= id) throw Error("graph: node input id not older than node");
  nodes_.push_back(
      Node{std::move(op), std::move(inputs), std::move(backprop),
           std::move(tensors)});
  return id;
}

namespace {
int producer_id(const std::vector<std::pair<const void*, int>>& producers,
                const Tensor& t) {
  for (auto it = producers.rbegin(); it != producers.rend(); ++it)
    if (it->first == t.storage_id()) return it->second;
  return -1;
}
}  // namespace

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::zeros({m, n}, should_record({&a, &b}));
  ConstMatMap am(a.data().data(), m, k);
  ConstMatMap bm(b.data().data(), k, n);
  MatMap ym(y.data().data(), m, n);
  ym.noalias() = am * bm;
  if (y.requires_grad()) {
    Tensor a2 = a, b2 = b;
    int id = record(
        "matmul", {producer_id(producers_, a), producer_id(producers_, b)},
        {a, b, y}, [a = a2, b = b2, y]() mutable {
          const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
          ConstMatMap gy(y.grad().data(), m, n);
          ConstMatMap am(a.data().data(), m, k);
          ConstMatMap bm(b.data().data(), k, n);
          MatMap ga(a.grad().data(), m, k);
          MatMap gb(b.grad().data(), k, n);
          ga.noalias() += gy * bm.transpose();
          gb.noalias() += am.transpose() * gy;
        });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const bool rowwise = b.rank() == 1 && a.rank() >= 1 &&
                       a.shape().back() == b.dim(0) && a.shape() != b.shape();
  if (!rowwise && a.shape() != b.shape())
    throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  Tensor y = Tensor::zeros(a.shape(), should_record({&a, &b}));
  const std::size_t n = a.numel();
  if (rowwise) {
    const std::size_t c = b.dim(0);
    for (std::size_t i = 0; i < n; ++i)
      y.data()[i] = a.data()[i] + b.data()[i % c];
  } else {
    for (std::size_t i = 0; i < n; ++i)
      y.data()[i] = a.data()[i] + b.data()[i];
  }
  if (y.requires_grad()) {
    Tensor a2 = a, b2 = b;
    int id = record(
        "add", {producer_id(producers_, a), producer_id(producers_, b)},
        {a, b, y}, [a = a2, b = b2, y, rowwise]() mutable {
          const std::size_t n = y.numel();
          for (std::size_t i = 0; i < n; ++i) a.grad()[i] += y.grad()[i];
          if (rowwise) {
            const std::size_t c = b.dim(0);
            for (std::size_t i = 0; i < n; ++i)
              b.grad()[i % c] += y.grad()[i];
          } else {
            for (std::size_t i = 0; i < n; ++i) b.grad()[i] += y.grad()[i];
          }
        });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::relu(const Tensor& x) {
  Tensor y = Tensor::zeros(x.shape(), should_record({&x}));
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i)
    y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (y.requires_grad()) {
    Tensor x2 = x;
    int id = record("relu", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y]() mutable {
                      const std::size_t n = x.numel();
                      for (std::size_t i = 0; i < n; ++i)
                        if (x.data()[i] > 0.0) x.grad()[i] += y.grad()[i];
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::max_over_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError("max_over_axis: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(x.shape()));
  const std::size_t k = x.dim(axis);
  if (k == 0)
    throw ValueError("max_over_axis: reduced axis has extent 0");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));

  Tensor y = Tensor::zeros(out_shape, should_record({&x}));
  auto argmax = std::make_shared<std::vector<std::size_t>>(outer * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t best = 0;
      double best_v = x.data()[(o * k) * inner + i];
      for (std::size_t j = 1; j < k; ++j) {
        const double v = x.data()[(o * k + j) * inner + i];
        if (v > best_v) {  // strict: first occurrence wins on ties
          best_v = v;
          best = j;
        }
      }
      y.data()[o * inner + i] = best_v;
      (*argmax)[o * inner + i] = best;
    }
  }
  if (y.requires_grad()) {
    Tensor x2 = x;
    int id = record("max_over_axis", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y, argmax, outer, inner, k]() mutable {
                      for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < inner; ++i) {
                          const std::size_t j = (*argmax)[o * inner + i];
                          x.grad()[(o * k + j) * inner + i] +=
                              y.grad()[o * inner + i];
                        }
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0)
    throw ShapeError("concat_last: rank mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  for (std::size_t i = 0; i + 1 < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw ShapeError("concat_last: leading extents differ " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t p = a.shape().back(), q = b.shape().back();
  Shape out_shape = a.shape();
  out_shape.back() = p + q;
  const std::size_t rows = (p + q) == 0 ? 0 : shape_numel(out_shape) / (p + q);

  Tensor y = Tensor::zeros(out_shape, should_record({&a, &b}));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < p; ++i)
      y.data()[r * (p + q) + i] = a.data()[r * p + i];
    for (std::size_t i = 0; i < q; ++i)
      y.data()[r * (p + q) + p + i] = b.data()[r * q + i];
  }
  if (y.requires_grad()) {
    Tensor a2 = a, b2 = b;
    int id = record(
        "concat_last", {producer_id(producers_, a), producer_id(producers_, b)},
        {a, b, y}, [a = a2, b = b2, y, rows, p, q]() mutable {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < p; ++i)
              a.grad()[r * p + i] += y.grad()[r * (p + q) + i];
            for (std::size_t i = 0; i < q; ++i)
              b.grad()[r * q + i] += y.grad()[r * (p + q) + p + i];
          }
        });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::gather_rows(const Tensor& x, std::vector<std::size_t> indices) {
  if (x.rank() != 2)
    throw ShapeError("gather_rows: expected rank-2 input, got " +
                     shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1);
  for (std::size_t idx : indices)
    if (idx >= n)
      throw ValueError("gather_rows: index " + std::to_string(idx) +
                       " out of range for " + std::to_string(n) + " rows");
  const std::size_t m = indices.size();
  Tensor y = Tensor::zeros({m, c}, should_record({&x}));
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(x.data().begin() + indices[r] * c, c,
                y.data().begin() + r * c);
  if (y.requires_grad()) {
    auto idx = std::make_shared<std::vector<std::size_t>>(std::move(indices));
    Tensor x2 = x;
    int id = record("gather_rows", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y, idx, c]() mutable {
                      for (std::size_t r = 0; r < idx->size(); ++r)
                        for (std::size_t j = 0; j < c; ++j)
                          x.grad()[(*idx)[r] * c + j] += y.grad()[r * c + j];
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  Tensor y(std::move(shape), x.data(), should_record({&x}));
  if (y.requires_grad()) {
    Tensor x2 = x;
    int id = record("reshape", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y]() mutable {
                      const std::size_t n = x.numel();
                      for (std::size_t i = 0; i < n; ++i)
                        x.grad()[i] += y.grad()[i];
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor y = Tensor::scalar(total, should_record({&x}));
  if (y.requires_grad()) {
    Tensor x2 = x;
    int id = record("sum", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y]() mutable {
                      const double g = y.grad()[0];
                      for (double& gi : x.grad()) gi += g;
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::batch_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, RunningStats& stats,
                         bool training) {
  if (x.rank() != 2)
    throw ShapeError("batch_norm: expected [B x C] input, got " +
                     shape_str(x.shape()));
  const std::size_t b = x.dim(0), c = x.dim(1);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batch_norm: scale/shift width " +
                     std::to_string(gamma.numel()) + " does not match " +
                     std::to_string(c) + " channels");
  if (training && b < 2)
    throw ValueError("batch_norm: training mode needs a batch of at least 2 "
                     "rows, got " + std::to_string(b));
  if (stats.mean.empty()) {
    stats.mean.assign(c, 0.0);
    stats.var.assign(c, 1.0);
  }
  if (stats.mean.size() != c || stats.var.size() != c)
    throw ShapeError("batch_norm: running stats width mismatch");

  auto mean = std::make_shared<std::vector<double>>(c, 0.0);
  auto inv_std = std::make_shared<std::vector<double>>(c, 0.0);
  auto xhat = std::make_shared<std::vector<double>>(b * c, 0.0);
  // Columns whose variance hit the epsilon floor; their scale is constant
  // with respect to x, which changes the backward formula.
  auto floored = std::make_shared<std::vector<char>>(c, 0);

  if (training) {
    std::vector<double> var(c, 0.0);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) (*mean)[j] += x.data()[i * c + j];
    for (std::size_t j = 0; j < c; ++j) (*mean)[j] /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double d = x.data()[i * c + j] - (*mean)[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < c; ++j) var[j] /= static_cast<double>(b);
    for (std::size_t j = 0; j < c; ++j) {
      (*floored)[j] = var[j] < kBnEpsilon ? 1 : 0;
      (*inv_std)[j] = 1.0 / std::sqrt(std::max(var[j], kBnEpsilon));
      stats.mean[j] = kBnMomentum * stats.mean[j] + (1.0 - kBnMomentum) * (*mean)[j];
      stats.var[j] = kBnMomentum * stats.var[j] + (1.0 - kBnMomentum) * var[j];
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      (*mean)[j] = stats.mean[j];
      (*inv_std)[j] = 1.0 / std::sqrt(std::max(stats.var[j], kBnEpsilon));
    }
  }

  Tensor y = Tensor::zeros(x.shape(), should_record({&x, &gamma, &beta}));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (x.data()[i * c + j] - (*mean)[j]) * (*inv_std)[j];
      (*xhat)[i * c + j] = h;
      y.data()[i * c + j] = gamma.data()[j] * h + beta.data()[j];
    }

  if (y.requires_grad()) {
    Tensor x2 = x, g2 = gamma, be2 = beta;
    int id = record(
        "batch_norm",
        {producer_id(producers_, x), producer_id(producers_, gamma),
         producer_id(producers_, beta)},
        {x, gamma, beta, y},
        [x = x2, g = g2, be = be2, y, inv_std, xhat, floored,
         training]() mutable {
          const std::size_t b = x.dim(0), c = x.dim(1);
          const double nb = static_cast<double>(b);
          for (std::size_t j = 0; j < c; ++j) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < b; ++i) {
              const double dy = y.grad()[i * c + j];
              sum_dy += dy;
              sum_dy_xhat += dy * (*xhat)[i * c + j];
            }
            be.grad()[j] += sum_dy;
            g.grad()[j] += sum_dy_xhat;
            const double gj = g.data()[j];
            if (!training) {
              for (std::size_t i = 0; i < b; ++i)
                x.grad()[i * c + j] +=
                    gj * (*inv_std)[j] * y.grad()[i * c + j];
            } else if ((*floored)[j]) {
              for (std::size_t i = 0; i < b; ++i)
                x.grad()[i * c + j] += gj * (*inv_std)[j] *
                                       (y.grad()[i * c + j] - sum_dy / nb);
            } else {
              for (std::size_t i = 0; i < b; ++i) {
                const double dy = y.grad()[i * c + j];
                x.grad()[i * c + j] +=
                    gj * (*inv_std)[j] / nb *
                    (nb * dy - sum_dy - (*xhat)[i * c + j] * sum_dy_xhat);
              }
            }
          }
        });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

Tensor Graph::dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValueError("dropout: rate must lie in [0, 1), got " +
                     std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const double scale = 1.0 / (1.0 - rate);
  const std::size_t n = x.numel();
  auto mask = std::make_shared<std::vector<double>>(n, 0.0);
  Tensor y = Tensor::zeros(x.shape(), should_record({&x}));
  for (std::size_t i = 0; i < n; ++i) {
    const double keep = rng.uniform() >= rate ? scale : 0.0;
    (*mask)[i] = keep;
    y.data()[i] = x.data()[i] * keep;
  }
  if (y.requires_grad()) {
    Tensor x2 = x;
    int id = record("dropout", {producer_id(producers_, x)}, {x, y},
                    [x = x2, y, mask]() mutable {
                      const std::size_t n = x.numel();
                      for (std::size_t i = 0; i < n; ++i)
                        x.grad()[i] += y.grad()[i] * (*mask)[i];
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_rows: expected [B x K], got " +
                     shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  std::vector<double> p(b * k, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    double m = logits.data()[i * k];
    for (std::size_t j = 1; j < k; ++j)
      m = std::max(m, logits.data()[i * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      z += std::exp(logits.data()[i * k + j] - m);
    const double lse = m + std::log(z);
    for (std::size_t j = 0; j < k; ++j)
      p[i * k + j] = std::exp(logits.data()[i * k + j] - lse);
  }
  return p;
}

Tensor Graph::softmax_cross_entropy(const Tensor& logits,
                                    const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ShapeError("softmax_cross_entropy: expected [B x K], got " +
                     shape_str(logits.shape()));
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (labels.size() != b)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(b));
  for (std::size_t i = 0; i < b; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw ValueError("softmax_cross_entropy: label " +
                       std::to_string(labels[i]) + " at batch index " +
                       std::to_string(i) + " outside [0, " +
                       std::to_string(k) + ")");

  auto probs = std::make_shared<std::vector<double>>(softmax_rows(logits));
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double p = (*probs)[i * k + labels[i]];
    loss -= std::log(std::max(p, 1e-300));
  }
  loss /= static_cast<double>(b);

  Tensor y = Tensor::scalar(loss, should_record({&logits}));
  if (y.requires_grad()) {
    Tensor lg = logits;
    auto lab = std::make_shared<std::vector<int>>(labels);
    int id = record("softmax_cross_entropy", {producer_id(producers_, logits)},
                    {logits, y}, [lg, y, probs, lab]() mutable {
                      const std::size_t b = lg.dim(0), k = lg.dim(1);
                      const double g = y.grad()[0] / static_cast<double>(b);
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < k; ++j) {
                          double d = (*probs)[i * k + j];
                          if (static_cast<std::size_t>((*lab)[i]) == j)
                            d -= 1.0;
                          lg.grad()[i * k + j] += d * g;
                        }
                    });
    producers_.emplace_back(y.storage_id(), id);
  }
  return y;
}

void Graph::backward(const Tensor& root) {
  if (root.numel() != 1)
    throw ShapeError("backward: root must be scalar, got " +
                     shape_str(root.shape()));
  // Reset every grad buffer this graph can touch so repeated sweeps agree.
  std::unordered_set<const void*> seen;
  for (auto& node : nodes_)
    for (auto& t : node.tensors)
      if (seen.insert(t.storage_id()).second) t.zero_grad();
  if (seen.insert(root.storage_id()).second) {
    Tensor r = root;
    r.zero_grad();
  }
  Tensor r = root;
  r.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
    if (it->backprop) it->backprop();
}

}  // namespace pskn
