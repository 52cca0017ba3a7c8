#include "pcc/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace pcc {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

size_t prod(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<size_t>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericError(std::string(op) + ": non-finite value at index " +
                         std::to_string(i));
    }
  }
}

Tape* common_tape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.tape == nullptr || b.tape == nullptr)
    throw ContractError(std::string(op) + ": operand not attached to a tape");
  if (a.tape != b.tape)
    throw ContractError(std::string(op) + ": operands live on different tapes");
  return a.tape;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
  }
}

Tensor make_out(Tape* tape, std::vector<size_t> shape, std::vector<double> vals,
                std::vector<int> parents, bool rg, std::function<void(Tape&)> back) {
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(vals));
  t.tape = tape;
  t.node = tape->add_node(t.data->size(), std::move(parents), rg, std::move(back));
  return t;
}

void axpy(std::vector<double>& dst, const std::vector<double>& src, double c = 1.0) {
  for (size_t i = 0; i < src.size(); ++i) dst[i] += c * src[i];
}

}  // namespace

// ---------------- Tape ----------------

Tensor Tape::leaf(std::shared_ptr<std::vector<double>> data, std::vector<size_t> shape) {
  if (!data || data->size() != prod(shape))
    throw ShapeError("Tape::leaf: buffer size does not match shape " + shape_str(shape));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  t.tape = this;
  t.node = add_node(t.data->size(), {}, true, nullptr);
  return t;
}

Tensor Tape::constant(std::shared_ptr<std::vector<double>> data, std::vector<size_t> shape) {
  if (!data || data->size() != prod(shape))
    throw ShapeError("Tape::constant: buffer size does not match shape " + shape_str(shape));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(data);
  t.tape = this;
  t.node = add_node(t.data->size(), {}, false, nullptr);
  return t;
}

Tensor Tape::constant(std::vector<double> values, std::vector<size_t> shape) {
  return constant(std::make_shared<std::vector<double>>(std::move(values)), std::move(shape));
}

int Tape::add_node(size_t out_size, std::vector<int> parents, bool requires_grad,
                   std::function<void(Tape&)> back) {
  Node n;
  n.back = std::move(back);
  n.parents = std::move(parents);
  n.requires_grad = requires_grad;
  n.size = out_size;
  nodes_.push_back(std::move(n));
  grads_.emplace_back(nullptr);
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<double>& Tape::gbuf(int id, size_t n) {
  if (!grads_[id]) grads_[id] = std::make_unique<std::vector<double>>(n, 0.0);
  return *grads_[id];
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape != this) throw ContractError("Tape::backward: loss from another tape");
  if (loss.size() != 1)
    throw ShapeError("Tape::backward: loss must be scalar, got " + shape_str(loss.shape));
  if (consumed_) throw ContractError("Tape::backward: tape already consumed; reset() first");
  consumed_ = true;

  // Mark grad-requiring ancestors of the loss.
  std::vector<uint8_t> reach(nodes_.size(), 0);
  std::vector<int> stack{loss.node};
  reach[loss.node] = 1;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (int p : nodes_[id].parents) {
      if (p >= 0 && nodes_[p].requires_grad && !reach[p]) {
        reach[p] = 1;
        stack.push_back(p);
      }
    }
  }

  gbuf(loss.node, 1)[0] = 1.0;
  for (int id = loss.node; id >= 0; --id) {
    if (!reach[id] || !nodes_[id].back) continue;
    if (grads_[id]) check_finite("backward", *grads_[id]);
    nodes_[id].back(*this);
  }
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  relu_src_.clear();
  consumed_ = false;
}

const std::vector<double>& Tape::grad(const Tensor& t) {
  if (t.tape != this) throw ContractError("Tape::grad: tensor from another tape");
  return gbuf(t.node, t.size());
}

double Tape::min_abs_relu_input() const {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& src : relu_src_)
    for (double v : *src) m = std::min(m, std::abs(v));
  return m;
}

// ---------------- elementwise ----------------

namespace {

template <class FwdFn, class BackFn>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, FwdFn fwd, BackFn back) {
  Tape* tape = common_tape(name, a, b);
  check_same_shape(name, a, b);
  std::vector<double> out(a.size());
  fwd(*a.data, *b.data, out);
  check_finite(name, out);
  bool rg = tape->needs(a.node) || tape->needs(b.node);
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  size_t n = out.size();
  Tensor res = make_out(tape, a.shape, std::move(out), {an, bn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    res.tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, n);
      back(t, g, *ad, *bd, an, bn);
    });
  }
  return res;
}

}  // namespace

// Ops attach their closure after the output node id is known.
void Tape::nodes_back_set(int id, std::function<void(Tape&)> back) {
  nodes_[id].back = std::move(back);
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      },
      [](Tape& t, const std::vector<double>& g, const std::vector<double>&,
         const std::vector<double>&, int an, int bn) {
        if (t.needs(an)) axpy(t.gbuf(an, g.size()), g);
        if (t.needs(bn)) axpy(t.gbuf(bn, g.size()), g);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      },
      [](Tape& t, const std::vector<double>& g, const std::vector<double>&,
         const std::vector<double>&, int an, int bn) {
        if (t.needs(an)) axpy(t.gbuf(an, g.size()), g);
        if (t.needs(bn)) axpy(t.gbuf(bn, g.size()), g, -1.0);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b,
      [](const std::vector<double>& x, const std::vector<double>& y, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      },
      [](Tape& t, const std::vector<double>& g, const std::vector<double>& av,
         const std::vector<double>& bv, int an, int bn) {
        if (t.needs(an)) {
          auto& ga = t.gbuf(an, g.size());
          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.needs(bn)) {
          auto& gb = t.gbuf(bn, g.size());
          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
      });
}

namespace {

template <class FwdFn>
Tensor unary_op(const char* name, const Tensor& a, FwdFn fwd,
                std::function<void(Tape&, const std::vector<double>&, std::vector<double>&)> back_into_parent) {
  if (a.tape == nullptr) throw ContractError(std::string(name) + ": operand not attached to a tape");
  Tape* tape = a.tape;
  std::vector<double> out(a.size());
  fwd(*a.data, out);
  check_finite(name, out);
  bool rg = tape->needs(a.node);
  int an = a.node;
  size_t n = out.size();
  Tensor res = make_out(tape, a.shape, std::move(out), {an}, rg, nullptr);
  int self = res.node;
  if (rg) {
    auto fn = std::move(back_into_parent);
    res.tape->nodes_back_set(self, [=](Tape& t) {
      fn(t, t.gbuf(self, n), t.gbuf(an, n));
    });
  }
  return res;
}

}  // namespace

Tensor scale(const Tensor& a, double c) {
  return unary_op(
      "scale", a,
      [c](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
      },
      [c](Tape&, const std::vector<double>& g, std::vector<double>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
      });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary_op(
      "add_scalar", a,
      [c](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] + c;
      },
      [](Tape&, const std::vector<double>& g, std::vector<double>& ga) { axpy(ga, g); });
}

Tensor exp_elem(const Tensor& a) {
  auto saved = std::make_shared<std::vector<double>>();
  Tensor res = unary_op(
      "exp", a,
      [&saved](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = std::exp(x[i]);
        *saved = o;
      },
      [saved](Tape&, const std::vector<double>& g, std::vector<double>& ga) {
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*saved)[i];
      });
  return res;
}

Tensor relu(const Tensor& a) {
  if (a.tape) a.tape->note_relu_input(a.data);
  auto src = a.data;
  return unary_op(
      "relu", a,
      [](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = x[i] > 0.0 ? x[i] : 0.0;
      },
      [src](Tape&, const std::vector<double>& g, std::vector<double>& ga) {
        for (size_t i = 0; i < g.size(); ++i)
          if ((*src)[i] > 0.0) ga[i] += g[i];
      });
}

Tensor relu_mask(const Tensor& a) {
  if (a.tape == nullptr) throw ContractError("relu_mask: operand not attached to a tape");
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = (*a.data)[i] > 0.0 ? 1.0 : 0.0;
  return a.tape->constant(std::move(out), a.shape);
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ShapeError("clamp: lo > hi");
  auto src = a.data;
  return unary_op(
      "clamp", a,
      [lo, hi](const std::vector<double>& x, std::vector<double>& o) {
        for (size_t i = 0; i < o.size(); ++i) o[i] = std::min(hi, std::max(lo, x[i]));
      },
      [src, lo, hi](Tape&, const std::vector<double>& g, std::vector<double>& ga) {
        for (size_t i = 0; i < g.size(); ++i)
          if ((*src)[i] >= lo && (*src)[i] <= hi) ga[i] += g[i];
      });
}

// ---------------- shape ops ----------------

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  Tape* tape = common_tape("add_rowvec", m, v);
  if (m.shape.size() != 2) throw ShapeError("add_rowvec: matrix must be rank 2, got " + shape_str(m.shape));
  size_t r = m.rows(), c = m.cols();
  if (v.size() != c)
    throw ShapeError("add_rowvec: vector length " + std::to_string(v.size()) +
                     " != matrix cols " + std::to_string(c));
  std::vector<double> out(m.size());
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[i * c + j] = (*m.data)[i * c + j] + (*v.data)[j];
  check_finite("add_rowvec", out);
  bool rg = tape->needs(m.node) || tape->needs(v.node);
  int mn = m.node, vn = v.node;
  Tensor res = make_out(tape, m.shape, std::move(out), {mn, vn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, r * c);
      if (t.needs(mn)) axpy(t.gbuf(mn, r * c), g);
      if (t.needs(vn)) {
        auto& gv = t.gbuf(vn, c);
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) gv[j] += g[i * c + j];
      }
    });
  }
  return res;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape* tape = common_tape("matmul", a, b);
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw ShapeError("matmul: operands must be rank 2, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
  size_t m = a.shape[0], k = a.shape[1], k2 = b.shape[0], n = b.shape[1];
  if (k != k2)
    throw ShapeError("matmul: inner dims differ, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  std::vector<double> out(m * n);
  {
    CMapM A(a.ptr(), m, k), B(b.ptr(), k, n);
    MapM C(out.data(), m, n);
    C.noalias() = A * B;
  }
  check_finite("matmul", out);
  bool rg = tape->needs(a.node) || tape->needs(b.node);
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  Tensor res = make_out(tape, {m, n}, std::move(out), {an, bn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, m * n);
      CMapM G(g.data(), m, n);
      if (t.needs(an)) {
        MapM GA(t.gbuf(an, m * k).data(), m, k);
        CMapM B(bd->data(), k, n);
        GA.noalias() += G * B.transpose();
      }
      if (t.needs(bn)) {
        MapM GB(t.gbuf(bn, k * n).data(), k, n);
        CMapM A(ad->data(), m, k);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return res;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  Tape* tape = common_tape("matmul_nt", a, b);
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw ShapeError("matmul_nt: operands must be rank 2");
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  if (b.shape[1] != k)
    throw ShapeError("matmul_nt: inner dims differ, " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  std::vector<double> out(m * n);
  {
    CMapM A(a.ptr(), m, k), B(b.ptr(), n, k);
    MapM C(out.data(), m, n);
    C.noalias() = A * B.transpose();
  }
  check_finite("matmul_nt", out);
  bool rg = tape->needs(a.node) || tape->needs(b.node);
  int an = a.node, bn = b.node;
  auto ad = a.data, bd = b.data;
  Tensor res = make_out(tape, {m, n}, std::move(out), {an, bn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, m * n);
      CMapM G(g.data(), m, n);
      if (t.needs(an)) {
        MapM GA(t.gbuf(an, m * k).data(), m, k);
        CMapM B(bd->data(), n, k);
        GA.noalias() += G * B;
      }
      if (t.needs(bn)) {
        MapM GB(t.gbuf(bn, n * k).data(), n, k);
        CMapM A(ad->data(), m, k);
        GB.noalias() += G.transpose() * A;
      }
    });
  }
  return res;
}

Tensor sum_all(const Tensor& a) {
  if (a.tape == nullptr) throw ContractError("sum_all: operand not attached to a tape");
  double s = 0.0;
  for (double v : *a.data) s += v;
  if (!std::isfinite(s)) throw NumericError("sum_all: non-finite result");
  bool rg = a.tape->needs(a.node);
  int an = a.node;
  size_t n = a.size();
  Tensor res = make_out(a.tape, {1}, {s}, {an}, rg, nullptr);
  int self = res.node;
  if (rg) {
    a.tape->nodes_back_set(self, [=](Tape& t) {
      double g = t.gbuf(self, 1)[0];
      auto& ga = t.gbuf(an, n);
      for (size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return res;
}

Tensor reshape(const Tensor& a, std::vector<size_t> shape) {
  if (a.tape == nullptr) throw ContractError("reshape: operand not attached to a tape");
  if (prod(shape) != a.size())
    throw ShapeError("reshape: size mismatch " + shape_str(a.shape) + " -> " + shape_str(shape));
  bool rg = a.tape->needs(a.node);
  int an = a.node;
  size_t n = a.size();
  Tensor res = make_out(a.tape, std::move(shape), *a.data, {an}, rg, nullptr);
  int self = res.node;
  if (rg) {
    a.tape->nodes_back_set(self, [=](Tape& t) { axpy(t.gbuf(an, n), t.gbuf(self, n)); });
  }
  return res;
}

Tensor slice_cols(const Tensor& a, size_t c0, size_t c1) {
  if (a.tape == nullptr) throw ContractError("slice_cols: operand not attached to a tape");
  if (a.shape.size() != 2) throw ShapeError("slice_cols: operand must be rank 2");
  size_t r = a.rows(), c = a.cols();
  if (c0 >= c1 || c1 > c)
    throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for " + shape_str(a.shape));
  size_t w = c1 - c0;
  std::vector<double> out(r * w);
  for (size_t i = 0; i < r; ++i)
    std::memcpy(&out[i * w], &(*a.data)[i * c + c0], w * sizeof(double));
  bool rg = a.tape->needs(a.node);
  int an = a.node;
  Tensor res = make_out(a.tape, {r, w}, std::move(out), {an}, rg, nullptr);
  int self = res.node;
  if (rg) {
    a.tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, r * w);
      auto& ga = t.gbuf(an, r * c);
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < w; ++j) ga[i * c + c0 + j] += g[i * w + j];
    });
  }
  return res;
}

Tensor gather_cols(const Tensor& a, std::shared_ptr<const std::vector<size_t>> index) {
  if (a.tape == nullptr) throw ContractError("gather_cols: operand not attached to a tape");
  if (a.shape.size() != 2) throw ShapeError("gather_cols: operand must be rank 2");
  if (!index || index->empty()) throw ShapeError("gather_cols: empty index");
  size_t r = a.rows(), c = a.cols(), w = index->size();
  for (size_t j : *index)
    if (j >= c)
      throw ShapeError("gather_cols: index " + std::to_string(j) + " out of range for " +
                       shape_str(a.shape));
  std::vector<double> out(r * w);
  const auto& idx = *index;
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < w; ++j) out[i * w + j] = (*a.data)[i * c + idx[j]];
  bool rg = a.tape->needs(a.node);
  int an = a.node;
  Tensor res = make_out(a.tape, {r, w}, std::move(out), {an}, rg, nullptr);
  int self = res.node;
  if (rg) {
    a.tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, r * w);
      auto& ga = t.gbuf(an, r * c);
      const auto& ix = *index;
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < w; ++j) ga[i * c + ix[j]] += g[i * w + j];
    });
  }
  return res;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  Tape* tape = parts[0].tape;
  if (tape == nullptr) throw ContractError("concat_cols: operand not attached to a tape");
  size_t r = parts[0].rows();
  size_t total = 0;
  bool rg = false;
  std::vector<int> parent_ids;
  for (const Tensor& p : parts) {
    if (p.tape != tape) throw ContractError("concat_cols: operands live on different tapes");
    if (p.shape.size() != 2 || p.rows() != r)
      throw ShapeError("concat_cols: row mismatch, expected " + std::to_string(r) +
                       " rows, got " + shape_str(p.shape));
    total += p.cols();
    rg = rg || tape->needs(p.node);
    parent_ids.push_back(p.node);
  }
  std::vector<double> out(r * total);
  size_t off = 0;
  for (const Tensor& p : parts) {
    size_t c = p.cols();
    for (size_t i = 0; i < r; ++i)
      std::memcpy(&out[i * total + off], &(*p.data)[i * c], c * sizeof(double));
    off += c;
  }
  struct Piece {
    int node;
    size_t cols, off;
  };
  std::vector<Piece> pieces;
  off = 0;
  for (const Tensor& p : parts) {
    pieces.push_back({p.node, p.cols(), off});
    off += p.cols();
  }
  Tensor res = make_out(tape, {r, total}, std::move(out), parent_ids, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, r * total);
      for (const Piece& pc : pieces) {
        if (!t.needs(pc.node)) continue;
        auto& gp = t.gbuf(pc.node, r * pc.cols);
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < pc.cols; ++j) gp[i * pc.cols + j] += g[i * total + pc.off + j];
      }
    });
  }
  return res;
}

Tensor rowwise_matvec(const Tensor& a, const Tensor& v, size_t m, size_t n) {
  Tape* tape = common_tape("rowwise_matvec", a, v);
  size_t B = a.rows();
  if (a.cols() != m * n)
    throw ShapeError("rowwise_matvec: matrix block cols " + std::to_string(a.cols()) +
                     " != m*n = " + std::to_string(m * n));
  if (v.rows() != B || v.cols() != n)
    throw ShapeError("rowwise_matvec: vector shape " + shape_str(v.shape) + " does not match");
  std::vector<double> out(B * m, 0.0);
  for (size_t b = 0; b < B; ++b)
    for (size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < n; ++j) s += (*a.data)[b * m * n + i * n + j] * (*v.data)[b * n + j];
      out[b * m + i] = s;
    }
  check_finite("rowwise_matvec", out);
  bool rg = tape->needs(a.node) || tape->needs(v.node);
  int an = a.node, vn = v.node;
  auto ad = a.data, vd = v.data;
  Tensor res = make_out(tape, {B, m}, std::move(out), {an, vn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, B * m);
      if (t.needs(an)) {
        auto& ga = t.gbuf(an, B * m * n);
        for (size_t b = 0; b < B; ++b)
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
              ga[b * m * n + i * n + j] += g[b * m + i] * (*vd)[b * n + j];
      }
      if (t.needs(vn)) {
        auto& gv = t.gbuf(vn, B * n);
        for (size_t b = 0; b < B; ++b)
          for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j)
              gv[b * n + j] += g[b * m + i] * (*ad)[b * m * n + i * n + j];
      }
    });
  }
  return res;
}

// ---------------- fused losses ----------------

Tensor bernoulli_logit_nll(const Tensor& logits, const Tensor& targets) {
  Tape* tape = common_tape("bernoulli_logit_nll", logits, targets);
  check_same_shape("bernoulli_logit_nll", logits, targets);
  const auto& l = *logits.data;
  const auto& t = *targets.data;
  double s = 0.0;
  for (size_t i = 0; i < l.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ShapeError("bernoulli_logit_nll: target not binary at index " + std::to_string(i) +
                       " (value " + std::to_string(t[i]) + ")");
    // softplus(l) - l*t, written to stay finite for large |l|.
    double li = l[i];
    s += std::max(li, 0.0) - li * t[i] + std::log1p(std::exp(-std::abs(li)));
  }
  if (!std::isfinite(s)) throw NumericError("bernoulli_logit_nll: non-finite result");
  bool rg = tape->needs(logits.node);
  int ln = logits.node;
  auto ld = logits.data, td = targets.data;
  size_t n = l.size();
  Tensor res = make_out(tape, {1}, {s}, {ln, targets.node}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& tp) {
      double g = tp.gbuf(self, 1)[0];
      auto& gl = tp.gbuf(ln, n);
      for (size_t i = 0; i < n; ++i) {
        double li = (*ld)[i];
        double sig = li >= 0.0 ? 1.0 / (1.0 + std::exp(-li))
                               : std::exp(li) / (1.0 + std::exp(li));
        gl[i] += g * (sig - (*td)[i]);
      }
    });
  }
  return res;
}

// ---------------- convolution ----------------

namespace {

// Gathers zero-padded patches of one example into P [out_h*out_w, k*k*cin].
void im2col(const double* x, const ConvGeom& g, std::vector<double>& patches) {
  size_t oh = g.out_h(), ow = g.out_w(), kk = g.k * g.k * g.cin;
  long pad = static_cast<long>(g.pad());
  patches.assign(oh * ow * kk, 0.0);
  for (size_t py = 0; py < oh; ++py) {
    for (size_t px = 0; px < ow; ++px) {
      double* row = &patches[(py * ow + px) * kk];
      for (size_t ky = 0; ky < g.k; ++ky) {
        long iy = static_cast<long>(py * g.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (size_t kx = 0; kx < g.k; ++kx) {
          long ix = static_cast<long>(px * g.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          const double* src = &x[(iy * g.w + ix) * g.cin];
          double* dst = &row[(ky * g.k + kx) * g.cin];
          std::memcpy(dst, src, g.cin * sizeof(double));
        }
      }
    }
  }
}

// Scatter-add adjoint of im2col.
void col2im(const std::vector<double>& patches, const ConvGeom& g, double* gx) {
  size_t oh = g.out_h(), ow = g.out_w(), kk = g.k * g.k * g.cin;
  long pad = static_cast<long>(g.pad());
  for (size_t py = 0; py < oh; ++py) {
    for (size_t px = 0; px < ow; ++px) {
      const double* row = &patches[(py * ow + px) * kk];
      for (size_t ky = 0; ky < g.k; ++ky) {
        long iy = static_cast<long>(py * g.stride + ky) - pad;
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (size_t kx = 0; kx < g.k; ++kx) {
          long ix = static_cast<long>(px * g.stride + kx) - pad;
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          double* dst = &gx[(iy * g.w + ix) * g.cin];
          const double* src = &row[(ky * g.k + kx) * g.cin];
          for (size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvGeom& g) {
  Tape* tape = common_tape("conv2d", x, kernel);
  common_tape("conv2d", x, bias);
  size_t B = x.rows();
  if (x.cols() != g.h * g.w * g.cin)
    throw ShapeError("conv2d: input cols " + std::to_string(x.cols()) + " != h*w*cin = " +
                     std::to_string(g.h * g.w * g.cin));
  size_t kk = g.k * g.k * g.cin;
  if (kernel.rows() != kk || kernel.cols() != g.cout)
    throw ShapeError("conv2d: kernel shape " + shape_str(kernel.shape) + " != [" +
                     std::to_string(kk) + "x" + std::to_string(g.cout) + "]");
  if (bias.size() != g.cout) throw ShapeError("conv2d: bias length != cout");
  size_t oh = g.out_h(), ow = g.out_w(), ocols = oh * ow * g.cout;
  std::vector<double> out(B * ocols);
  std::vector<double> patches;
  for (size_t b = 0; b < B; ++b) {
    im2col(&(*x.data)[b * x.cols()], g, patches);
    CMapM P(patches.data(), oh * ow, kk), K(kernel.ptr(), kk, g.cout);
    MapM O(&out[b * ocols], oh * ow, g.cout);
    O.noalias() = P * K;
    for (size_t p = 0; p < oh * ow; ++p)
      for (size_t c = 0; c < g.cout; ++c) out[b * ocols + p * g.cout + c] += (*bias.data)[c];
  }
  check_finite("conv2d", out);
  bool rg = tape->needs(x.node) || tape->needs(kernel.node) || tape->needs(bias.node);
  int xn = x.node, kn = kernel.node, bn = bias.node;
  auto xd = x.data, kd = kernel.data;
  size_t xcols = x.cols();
  Tensor res = make_out(tape, {B, ocols}, std::move(out), {xn, kn, bn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    tape->nodes_back_set(self, [=](Tape& t) {
      const auto& gout = t.gbuf(self, B * ocols);
      std::vector<double> patches2, gpatches(oh * ow * kk);
      for (size_t b = 0; b < B; ++b) {
        CMapM G(&gout[b * ocols], oh * ow, g.cout);
        if (t.needs(kn) || t.needs(xn)) {
          if (t.needs(kn)) {
            im2col(&(*xd)[b * xcols], g, patches2);
            CMapM P(patches2.data(), oh * ow, kk);
            MapM GK(t.gbuf(kn, kk * g.cout).data(), kk, g.cout);
            GK.noalias() += P.transpose() * G;
          }
          if (t.needs(xn)) {
            CMapM K(kd->data(), kk, g.cout);
            MapM GP(gpatches.data(), oh * ow, kk);
            GP.noalias() = G * K.transpose();
            col2im(gpatches, g, &t.gbuf(xn, B * xcols)[b * xcols]);
          }
        }
        if (t.needs(bn)) {
          auto& gb = t.gbuf(bn, g.cout);
          for (size_t p = 0; p < oh * ow; ++p)
            for (size_t c = 0; c < g.cout; ++c) gb[c] += gout[b * ocols + p * g.cout + c];
        }
      }
    });
  }
  return res;
}

Tensor upsample_nn2(const Tensor& x, size_t h, size_t w, size_t c) {
  if (x.tape == nullptr) throw ContractError("upsample_nn2: operand not attached to a tape");
  size_t B = x.rows();
  if (x.cols() != h * w * c)
    throw ShapeError("upsample_nn2: input cols " + std::to_string(x.cols()) + " != h*w*c");
  size_t oh = 2 * h, ow = 2 * w, ocols = oh * ow * c;
  std::vector<double> out(B * ocols);
  for (size_t b = 0; b < B; ++b)
    for (size_t y = 0; y < oh; ++y)
      for (size_t xx = 0; xx < ow; ++xx) {
        const double* src = &(*x.data)[b * x.cols() + ((y / 2) * w + (xx / 2)) * c];
        double* dst = &out[b * ocols + (y * ow + xx) * c];
        std::memcpy(dst, src, c * sizeof(double));
      }
  bool rg = x.tape->needs(x.node);
  int xn = x.node;
  size_t xcols = x.cols();
  Tensor res = make_out(x.tape, {B, ocols}, std::move(out), {xn}, rg, nullptr);
  int self = res.node;
  if (rg) {
    x.tape->nodes_back_set(self, [=](Tape& t) {
      const auto& g = t.gbuf(self, B * ocols);
      auto& gx = t.gbuf(xn, B * xcols);
      for (size_t b = 0; b < B; ++b)
        for (size_t y = 0; y < oh; ++y)
          for (size_t xx = 0; xx < ow; ++xx)
            for (size_t ch = 0; ch < c; ++ch)
              gx[b * xcols + ((y / 2) * w + (xx / 2)) * c + ch] +=
                  g[b * ocols + (y * ow + xx) * c + ch];
    });
  }
  return res;
}

// ---------------- gradient check ----------------

GradCheckResult grad_check(const std::function<Tensor(Tape&, const Tensor&)>& build,
                           const std::vector<double>& point, double h) {
  std::vector<double> analytic;
  {
    Tape tape;
    auto buf = std::make_shared<std::vector<double>>(point);
    Tensor x = tape.leaf(buf, {point.size()});
    Tensor y = build(tape, x);
    if (y.size() != 1) throw ShapeError("grad_check: function must return a scalar");
    tape.backward(y);
    analytic = tape.grad(x);
  }
  auto eval = [&](const std::vector<double>& p) {
    Tape tape;
    Tensor x = tape.constant(p, {p.size()});
    return build(tape, x).scalar();
  };
  GradCheckResult r;
  std::vector<double> p = point;
  for (size_t i = 0; i < point.size(); ++i) {
    p[i] = point[i] + h;
    double fp = eval(p);
    p[i] = point[i] - h;
    double fm = eval(p);
    p[i] = point[i];
    double numeric = (fp - fm) / (2.0 * h);
    double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    if (err > r.max_rel_err) {
      r.max_rel_err = err;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace pcc
