#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "sesrec/common.hpp"

namespace sesrec::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// A named parameter tensor with its gradient accumulator and Adam moments.
template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  Mat<S> adam_m;
  Mat<S> adam_v;
  bool is_embedding_table = false;

  void init_moments() {
    grad = Mat<S>::Zero(value.rows(), value.cols());
    adam_m = Mat<S>::Zero(value.rows(), value.cols());
    adam_v = Mat<S>::Zero(value.rows(), value.cols());
  }
};

// Ordered parameter registry. Registration order is the canonical iteration
// order for the optimizer, serialization, and gradient checks.
template <typename S>
class ParamStore {
 public:
  Param<S>& add(const std::string& name, Mat<S> value, bool is_table = false) {
    if (index_.count(name)) throw ShapeError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param<S>>();
    p->name = name;
    p->value = std::move(value);
    p->is_embedding_table = is_table;
    p->init_moments();
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param<S>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Param<S>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Param<S>*> all() {
    std::vector<Param<S>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Param<S>*> all() const {
    std::vector<const Param<S>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.setZero();
  }

 private:
  std::vector<std::unique_ptr<Param<S>>> params_;
  std::map<std::string, size_t> index_;
};

struct Var {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense matrices. Each op records a closure that
// scatters the output gradient back to its inputs; parameters accumulate
// directly into their Param::grad.
template <typename S>
class Tape {
 public:
  using M = Mat<S>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  const M& val(Var v) const { return nodes_[v.idx].val; }

  M& grad(Var v) {
    Node& n = nodes_[v.idx];
    if (!n.has_grad) {
      n.grad = M::Zero(n.val.rows(), n.val.cols());
      n.has_grad = true;
    }
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[v.idx].has_grad; }

  // Rows of embedding tables touched through gather(); used for the
  // regularization scope.
  const std::vector<std::pair<Param<S>*, std::vector<int>>>& touched_rows() const {
    return touched_rows_;
  }

  // ---- leaves ----------------------------------------------------------

  Var value(M v) { return push(std::move(v)); }

  Var scalar(S v) {
    M m(1, 1);
    m(0, 0) = v;
    return push(std::move(m));
  }

  Var param(Param<S>& p) {
    Var out = push(p.value);
    if (grad_enabled_) {
      set_back(out, [&p, out](Tape& t) { p.grad += t.grad(out); });
    }
    return out;
  }

  // Selects rows of an embedding table; backward scatter-adds into the table
  // gradient without materializing the full table on the tape.
  Var gather(Param<S>& p, std::vector<int> rows) {
    M v(static_cast<Eigen::Index>(rows.size()), p.value.cols());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || rows[r] >= p.value.rows())
        throw DataError("embedding id " + std::to_string(rows[r]) + " out of range for table '" +
                        p.name + "' with " + std::to_string(p.value.rows()) + " rows");
      v.row(static_cast<Eigen::Index>(r)) = p.value.row(rows[r]);
    }
    Var out = push(std::move(v));
    if (grad_enabled_) {
      touched_rows_.push_back({&p, rows});
      set_back(out, [&p, rows = std::move(rows), out](Tape& t) {
        const M& g = t.grad(out);
        for (size_t r = 0; r < rows.size(); ++r)
          p.grad.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
      });
    }
    return out;
  }

  // ---- structure -------------------------------------------------------

  Var transpose(Var a) {
    Var out = push(val(a).transpose());
    record(out, {a}, [a, out](Tape& t) { t.grad(a) += t.grad(out).transpose(); });
    return out;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    Eigen::Index rows = val(parts[0]).rows(), cols = 0;
    for (Var p : parts) {
      if (val(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
      cols += val(p).cols();
    }
    M v(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
      v.middleCols(off, val(p).cols()) = val(p);
      off += val(p).cols();
    }
    Var out = push(std::move(v));
    record(out, parts, [parts, out](Tape& t) {
      Eigen::Index off = 0;
      for (Var p : parts) {
        Eigen::Index c = t.val(p).cols();
        t.grad(p) += t.grad(out).middleCols(off, c);
        off += c;
      }
    });
    return out;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    Eigen::Index cols = val(parts[0]).cols(), rows = 0;
    for (Var p : parts) {
      if (val(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
      rows += val(p).rows();
    }
    M v(rows, cols);
    Eigen::Index off = 0;
    for (Var p : parts) {
      v.middleRows(off, val(p).rows()) = val(p);
      off += val(p).rows();
    }
    Var out = push(std::move(v));
    record(out, parts, [parts, out](Tape& t) {
      Eigen::Index off = 0;
      for (Var p : parts) {
        Eigen::Index r = t.val(p).rows();
        t.grad(p) += t.grad(out).middleRows(off, r);
        off += r;
      }
    });
    return out;
  }

  Var select_rows(Var a, std::vector<int> rows) {
    const M& av = val(a);
    M v(static_cast<Eigen::Index>(rows.size()), av.cols());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || rows[r] >= av.rows()) throw ShapeError("select_rows: index out of range");
      v.row(static_cast<Eigen::Index>(r)) = av.row(rows[r]);
    }
    Var out = push(std::move(v));
    record(out, {a}, [a, rows = std::move(rows), out](Tape& t) {
      const M& g = t.grad(out);
      M& ga = t.grad(a);
      for (size_t r = 0; r < rows.size(); ++r)
        ga.row(rows[r]) += g.row(static_cast<Eigen::Index>(r));
    });
    return out;
  }

  // ---- arithmetic ------------------------------------------------------

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Var out = push(val(a) + val(b));
    record(out, {a, b}, [a, b, out](Tape& t) {
      t.grad(a) += t.grad(out);
      t.grad(b) += t.grad(out);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Var out = push(val(a) - val(b));
    record(out, {a, b}, [a, b, out](Tape& t) {
      t.grad(a) += t.grad(out);
      t.grad(b) -= t.grad(out);
    });
    return out;
  }

  Var hadamard(Var a, Var b) {
    check_same_shape(a, b, "hadamard");
    Var out = push(val(a).cwiseProduct(val(b)));
    record(out, {a, b}, [a, b, out](Tape& t) {
      t.grad(a) += t.grad(out).cwiseProduct(t.val(b));
      t.grad(b) += t.grad(out).cwiseProduct(t.val(a));
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    if (val(a).cols() != val(b).rows())
      throw ShapeError("matmul: inner dimensions " + std::to_string(val(a).cols()) + " vs " +
                       std::to_string(val(b).rows()));
    Var out = push(val(a) * val(b));
    record(out, {a, b}, [a, b, out](Tape& t) {
      t.grad(a) += t.grad(out) * t.val(b).transpose();
      t.grad(b) += t.val(a).transpose() * t.grad(out);
    });
    return out;
  }

  // k * a + c, elementwise with scalar constants.
  Var affine(Var a, S k, S c) {
    Var out = push((val(a).array() * k + c).matrix());
    record(out, {a}, [a, k, out](Tape& t) { t.grad(a) += t.grad(out) * k; });
    return out;
  }

  // Broadcast-add a 1 x cols row vector to every row.
  Var add_row_broadcast(Var a, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols())
      throw ShapeError("add_row_broadcast: bias must be 1 x cols");
    Var out = push(val(a).rowwise() + val(row).row(0));
    record(out, {a, row}, [a, row, out](Tape& t) {
      t.grad(a) += t.grad(out);
      t.grad(row).row(0) += t.grad(out).colwise().sum();
    });
    return out;
  }

  // Multiply / divide by a 1x1 node (e.g. a learnable temperature).
  Var mul_by_scalar_node(Var a, Var s) {
    check_scalar(s, "mul_by_scalar_node");
    S sv = val(s)(0, 0);
    Var out = push(val(a) * sv);
    record(out, {a, s}, [a, s, sv, out](Tape& t) {
      t.grad(a) += t.grad(out) * sv;
      t.grad(s)(0, 0) += t.grad(out).cwiseProduct(t.val(a)).sum();
    });
    return out;
  }

  Var div_by_scalar_node(Var a, Var s) {
    check_scalar(s, "div_by_scalar_node");
    S sv = val(s)(0, 0);
    Var out = push(val(a) / sv);
    record(out, {a, s}, [a, s, sv, out](Tape& t) {
      t.grad(a) += t.grad(out) / sv;
      t.grad(s)(0, 0) -= t.grad(out).cwiseProduct(t.val(out)).sum() / sv;
    });
    return out;
  }

  // ---- elementwise nonlinearities ---------------------------------------

  Var tanh_(Var a) {
    Var out = push(val(a).array().tanh().matrix());
    record(out, {a}, [a, out](Tape& t) {
      t.grad(a) +=
          t.grad(out).cwiseProduct((1 - t.val(out).array().square()).matrix());
    });
    return out;
  }

  Var relu(Var a) {
    Var out = push(val(a).cwiseMax(S(0)));
    record(out, {a}, [a, out](Tape& t) {
      t.grad(a) += t.grad(out)
                       .cwiseProduct((t.val(a).array() > S(0)).template cast<S>().matrix());
    });
    return out;
  }

  Var sigmoid(Var a) {
    Var out = push(((S(1) / (S(1) + (-val(a).array()).exp()))).matrix());
    record(out, {a}, [a, out](Tape& t) {
      auto y = t.val(out).array();
      t.grad(a) += t.grad(out).cwiseProduct((y * (1 - y)).matrix());
    });
    return out;
  }

  Var log_(Var a) {
    Var out = push(val(a).array().log().matrix());
    record(out, {a}, [a, out](Tape& t) {
      t.grad(a) += t.grad(out).cwiseQuotient(t.val(a));
    });
    return out;
  }

  Var sqrt_(Var a) {
    Var out = push(val(a).array().sqrt().matrix());
    record(out, {a}, [a, out](Tape& t) {
      // guard the derivative at 0 to keep hinge terms finite
      auto denom = t.val(out).array().max(S(1e-12));
      t.grad(a) += (t.grad(out).array() * (S(0.5) / denom)).matrix();
    });
    return out;
  }

  Var clamp(Var a, S lo, S hi) {
    Var out = push(val(a).cwiseMax(lo).cwiseMin(hi));
    record(out, {a}, [a, lo, hi, out](Tape& t) {
      auto inside =
          ((t.val(a).array() > lo) && (t.val(a).array() < hi)).template cast<S>();
      t.grad(a) += t.grad(out).cwiseProduct(inside.matrix());
    });
    return out;
  }

  // ---- reductions --------------------------------------------------------

  Var sum_all(Var a) {
    M v(1, 1);
    v(0, 0) = val(a).sum();
    Var out = push(std::move(v));
    record(out, {a}, [a, out](Tape& t) {
      t.grad(a).array() += t.grad(out)(0, 0);
    });
    return out;
  }

  Var mean_all(Var a) {
    S n = static_cast<S>(val(a).size());
    M v(1, 1);
    v(0, 0) = val(a).sum() / n;
    Var out = push(std::move(v));
    record(out, {a}, [a, n, out](Tape& t) {
      t.grad(a).array() += t.grad(out)(0, 0) / n;
    });
    return out;
  }

  Var row_sum(Var a) {
    Var out = push(val(a).rowwise().sum());
    record(out, {a}, [a, out](Tape& t) {
      t.grad(a) += t.grad(out) * M::Ones(1, t.val(a).cols());
    });
    return out;
  }

  // Row-wise log(sum(exp(x))), numerically stabilized.
  Var row_logsumexp(Var a) {
    const M& av = val(a);
    M v(av.rows(), 1);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      S mx = av.row(i).maxCoeff();
      v(i, 0) = mx + std::log((av.row(i).array() - mx).exp().sum());
    }
    Var out = push(std::move(v));
    record(out, {a}, [a, out](Tape& t) {
      const M& av2 = t.val(a);
      const M& lse = t.val(out);
      const M& g = t.grad(out);
      M& ga = t.grad(a);
      for (Eigen::Index i = 0; i < av2.rows(); ++i)
        ga.row(i) += g(i, 0) * (av2.row(i).array() - lse(i, 0)).exp().matrix();
    });
    return out;
  }

  // Row-wise softmax over unmasked columns; masked columns produce exact
  // zeros. A row with no unmasked column yields all zeros.
  Var row_softmax_masked(Var a, const std::vector<uint8_t>& col_mask) {
    const M& av = val(a);
    if (static_cast<Eigen::Index>(col_mask.size()) != av.cols())
      throw ShapeError("row_softmax_masked: mask length mismatch");
    M v = M::Zero(av.rows(), av.cols());
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      S mx = -std::numeric_limits<S>::infinity();
      for (Eigen::Index j = 0; j < av.cols(); ++j)
        if (col_mask[j]) mx = std::max(mx, av(i, j));
      if (!std::isfinite(static_cast<double>(mx))) continue;  // fully masked row
      S z = 0;
      for (Eigen::Index j = 0; j < av.cols(); ++j)
        if (col_mask[j]) z += std::exp(av(i, j) - mx);
      for (Eigen::Index j = 0; j < av.cols(); ++j)
        if (col_mask[j]) v(i, j) = std::exp(av(i, j) - mx) / z;
    }
    Var out = push(std::move(v));
    record(out, {a}, [a, col_mask, out](Tape& t) {
      const M& y = t.val(out);
      const M& g = t.grad(out);
      M& ga = t.grad(a);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        S dot = 0;
        for (Eigen::Index j = 0; j < y.cols(); ++j)
          if (col_mask[j]) dot += g(i, j) * y(i, j);
        for (Eigen::Index j = 0; j < y.cols(); ++j)
          if (col_mask[j]) ga(i, j) += y(i, j) * (g(i, j) - dot);
      }
    });
    return out;
  }

  // Row-wise layer normalization with learnable gain/offset (1 x cols each).
  Var row_layer_norm(Var x, Var gamma, Var beta, S eps = S(1e-5)) {
    const M& xv = val(x);
    if (val(gamma).rows() != 1 || val(gamma).cols() != xv.cols() || val(beta).rows() != 1 ||
        val(beta).cols() != xv.cols())
      throw ShapeError("row_layer_norm: gamma/beta must be 1 x cols");
    Eigen::Index d = xv.cols();
    M xhat(xv.rows(), d);
    M inv_std(xv.rows(), 1);
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      S mu = xv.row(i).mean();
      S var = (xv.row(i).array() - mu).square().sum() / static_cast<S>(d);
      S is = S(1) / std::sqrt(var + eps);
      inv_std(i, 0) = is;
      xhat.row(i) = ((xv.row(i).array() - mu) * is).matrix();
    }
    M y = ((xhat.array().rowwise() * val(gamma).row(0).array()).rowwise() +
           val(beta).row(0).array())
              .matrix();
    Var out = push(std::move(y));
    record(out, {x, gamma, beta},
           [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), d](Tape& t) {
             const M& g = t.grad(out);
             t.grad(beta).row(0) += g.colwise().sum();
             t.grad(gamma).row(0) += g.cwiseProduct(xhat).colwise().sum();
             M dxhat = (g.array().rowwise() * t.val(gamma).row(0).array()).matrix();
             M& gx = t.grad(x);
             S dn = static_cast<S>(d);
             for (Eigen::Index i = 0; i < g.rows(); ++i) {
               S m1 = dxhat.row(i).sum() / dn;
               S m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / dn;
               gx.row(i) += (inv_std(i, 0) *
                             (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2))
                                .matrix();
             }
           });
    return out;
  }

  // Seeds d(root)/d(root) = seed and runs all recorded closures in reverse.
  void backward(Var root, S seed = S(1)) {
    if (!grad_enabled_) throw ShapeError("backward on a no-grad tape");
    check_scalar(root, "backward");
    grad(root)(0, 0) = seed;
    for (int32_t i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.has_grad && n.back) n.back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    M val;
    M grad;
    bool has_grad = false;
    std::function<void(Tape&)> back;
  };

  Var push(M v) {
    nodes_.push_back(Node{std::move(v), {}, false, nullptr});
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
  }

  void set_back(Var v, std::function<void(Tape&)> f) { nodes_[v.idx].back = std::move(f); }

  // Pre-touch input grads so reverse iteration visits them even when an input
  // is only reachable through this op.
  void record(Var out, const std::vector<Var>& inputs, std::function<void(Tape&)> f) {
    if (!grad_enabled_) return;
    for (Var in : inputs) (void)grad(in);
    set_back(out, std::move(f));
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
  void check_scalar(Var a, const char* op) const {
    if (val(a).rows() != 1 || val(a).cols() != 1)
      throw ShapeError(std::string(op) + ": expected 1x1, got " + shape_str(a));
  }
  std::string shape_str(Var a) const {
    return std::to_string(val(a).rows()) + "x" + std::to_string(val(a).cols());
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<std::pair<Param<S>*, std::vector<int>>> touched_rows_;
};

}  // namespace sesrec::ad
