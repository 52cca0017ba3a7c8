#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pcc/errors.hpp"

namespace pcc {

class Tape;

// Dense row-major f64 tensor handle. Rank 1 or 2 in practice. The data buffer
// is shared so parameter leaves can alias the optimizer-owned storage without
// copies. `node >= 0` ties the tensor to a tape for gradient flow.
struct Tensor {
  std::vector<size_t> shape;
  std::shared_ptr<std::vector<double>> data;
  Tape* tape = nullptr;
  int node = -1;

  size_t size() const {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return n;
  }
  // Rank-1 tensors are treated as a single row where a 2-D view is needed.
  size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  size_t cols() const { return shape.size() == 2 ? shape[1] : (shape.empty() ? 1 : shape[0]); }
  double scalar() const {
    if (size() != 1) throw ShapeError("Tensor::scalar: size " + std::to_string(size()) + " != 1");
    return (*data)[0];
  }
  const double* ptr() const { return data->data(); }
  double* ptr() { return data->data(); }
};

// Reverse-mode tape. Define-by-run: ops append nodes in creation order, which
// is already a topological order, and backward() walks it once in reverse.
// Every forward op checks its output for NaN/Inf and throws NumericError
// naming the op; gradients are checked the same way as they are consumed.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(std::shared_ptr<std::vector<double>> data, std::vector<size_t> shape);
  Tensor constant(std::shared_ptr<std::vector<double>> data, std::vector<size_t> shape);
  Tensor constant(std::vector<double> values, std::vector<size_t> shape);
  Tensor scalar_const(double v) { return constant({v}, {1}); }

  // Accumulates d(loss)/d(node) for every grad-requiring node reachable from
  // `loss` (a scalar). Runs once per tape; call reset() to reuse the tape.
  void backward(const Tensor& loss);
  void reset();

  // Gradient buffer of a taped tensor; zeros if the node was never reached.
  const std::vector<double>& grad(const Tensor& t);

  // Smallest |pre-activation| seen by any relu on this tape. Used to exclude
  // kink-adjacent points from finite-difference checks.
  double min_abs_relu_input() const;

  size_t num_nodes() const { return nodes_.size(); }

  // --- op-implementation interface (used by the free functions below) ---
  int add_node(size_t out_size, std::vector<int> parents, bool requires_grad,
               std::function<void(Tape&)> back);
  bool needs(int id) const { return id >= 0 && nodes_[id].requires_grad; }
  std::vector<double>& gbuf(int id, size_t n);
  void nodes_back_set(int id, std::function<void(Tape&)> back);
  bool has_grad(int id) const { return grads_[id] != nullptr; }
  void note_relu_input(std::shared_ptr<std::vector<double>> v) { relu_src_.push_back(std::move(v)); }

 private:
  struct Node {
    std::function<void(Tape&)> back;
    std::vector<int> parents;
    bool requires_grad = false;
    size_t size = 0;
  };
  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<std::vector<double>>> grads_;
  std::vector<std::shared_ptr<std::vector<double>>> relu_src_;
  bool consumed_ = false;
};

// Elementwise (shapes must match exactly).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor exp_elem(const Tensor& a);
Tensor relu(const Tensor& a);
// 0/1 activation pattern of `a` as a constant (no gradient path). Lets the
// layer-chain adjoint recurrence be expressed with ordinary taped matmuls.
Tensor relu_mask(const Tensor& a);
// Pass-through gradient inside [lo, hi] (boundary inclusive), zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

// [r x c] + [c] with the row vector broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& v);

// 2-D matrix products (Eigen-backed).
Tensor matmul(const Tensor& a, const Tensor& b);     // a [m x k] * b [k x n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a [m x k] * b^T, b [n x k]

Tensor sum_all(const Tensor& a);  // -> [1]
Tensor reshape(const Tensor& a, std::vector<size_t> shape);
Tensor slice_cols(const Tensor& a, size_t c0, size_t c1);
Tensor concat_cols(std::span<const Tensor> parts);

// Column gather: out[:, j] = a[:, index[j]]. With a permutation index this
// relayouts features, e.g. plane-stacked frames to channel-last and back.
Tensor gather_cols(const Tensor& a, std::shared_ptr<const std::vector<size_t>> index);

// Per-row matrix-vector product: a [B, m*n] (row-major m x n blocks),
// v [B, n] -> [B, m].
Tensor rowwise_matvec(const Tensor& a, const Tensor& v, size_t m, size_t n);

// Numerically stable sum of -[t log sigmoid(l) + (1-t) log(1-sigmoid(l))]
// over all entries. Targets must be exactly 0 or 1. Finite for |l| <= 1e3.
Tensor bernoulli_logit_nll(const Tensor& logits, const Tensor& targets);

// Minimal 2-D convolution, channel-last layout, zero 'same' padding.
struct ConvGeom {
  size_t h = 0, w = 0, cin = 0, cout = 0;
  size_t k = 5;
  size_t stride = 1;
  size_t pad() const { return k / 2; }
  size_t out_h() const { return (h + 2 * pad() - k) / stride + 1; }
  size_t out_w() const { return (w + 2 * pad() - k) / stride + 1; }
};
// x [B, h*w*cin], kernel [k*k*cin, cout], bias [cout] -> [B, out_h*out_w*cout]
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvGeom& g);

// Nearest-neighbor 2x upsampling: x [B, h*w*c] -> [B, 2h*2w*c].
Tensor upsample_nn2(const Tensor& x, size_t h, size_t w, size_t c);

// Central-difference gradient check of a scalar-valued taped function.
// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
struct GradCheckResult {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
};
GradCheckResult grad_check(
    const std::function<Tensor(Tape&, const Tensor&)>& build,
    const std::vector<double>& point, double h = 1e-5);

}  // namespace pcc
