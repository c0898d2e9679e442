#pragma once

// Minimal reverse-mode tape over Matrix values. Each op appends a node with
// the forward result and a closure that scatters the node's adjoint back to
// its parents. backward() replays the tape once in reverse; gradients are
// deterministic for a fixed computation. The analytic gradients it produces
// are validated against central differences by grad_check below.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "muser/matrix.hpp"

namespace muser::ad {

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

class GradTape {
 public:
  /// Registers a leaf value. Leaves receive gradients like any other node.
  Var input(Matrix value) {
    return push(std::move(value), std::function<void(GradTape&, const Matrix&, Var)>());
  }

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }

  /// Adjoint of `v` after backward(). Zero matrix if the node is unused.
  const Matrix& grad(Var v) const { return nodes_[check(v)].adjoint; }

  Var matmul(Var a, Var b) {
    Matrix out = muser::matmul(value(a), value(b));
    return push(std::move(out), [a, b](GradTape& t, const Matrix& g) {
      t.accumulate(a, muser::matmul_nt(g, t.value(b)));
      t.accumulate(b, muser::matmul_tn(t.value(a), g));
    });
  }

  /// a * b^T.
  Var matmul_nt(Var a, Var b) {
    Matrix out = muser::matmul_nt(value(a), value(b));
    return push(std::move(out), [a, b](GradTape& t, const Matrix& g) {
      t.accumulate(a, muser::matmul(g, t.value(b)));
      t.accumulate(b, muser::matmul_tn(g, t.value(a)));
    });
  }

  Var add(Var a, Var b) {
    Matrix out = muser::add(value(a), value(b));
    return push(std::move(out), [a, b](GradTape& t, const Matrix& g) {
      t.accumulate(a, g);
      t.accumulate(b, g);
    });
  }

  /// a (r x c) plus `row` (1 x c) added to every row.
  Var add_row_broadcast(Var a, Var row) {
    const Matrix& av = value(a);
    const Matrix& rv = value(row);
    if (rv.rows != 1 || rv.cols != av.cols)
      throw Error("add_row_broadcast: need 1x" + std::to_string(av.cols) + ", got " +
                  shape_str(rv));
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows; ++i)
      for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += rv(0, j);
    return push(std::move(out), [a, row](GradTape& t, const Matrix& g) {
      t.accumulate(a, g);
      Matrix rg(1, g.cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) rg(0, j) += g(i, j);
      t.accumulate(row, rg);
    });
  }

  /// Adds a constant (non-differentiated) matrix, e.g. positional encodings
  /// or attention masks.
  Var add_const(Var a, const Matrix& c) {
    Matrix out = muser::add(value(a), c);
    return push(std::move(out), [a](GradTape& t, const Matrix& g) { t.accumulate(a, g); });
  }

  Var scale(Var a, double s) {
    Matrix out = muser::scale(value(a), s);
    return push(std::move(out), [a, s](GradTape& t, const Matrix& g) {
      t.accumulate(a, muser::scale(g, s));
    });
  }

  Var tanh(Var a) {
    Matrix out = value(a);
    for (double& v : out.data) v = std::tanh(v);
    return push(std::move(out), [a](GradTape& t, const Matrix& g, Var self) {
      const Matrix& y = t.value(self);
      Matrix d = g;
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= 1.0 - y.data[i] * y.data[i];
      t.accumulate(a, d);
    });
  }

  Var exp_elem(Var a) {
    Matrix out = value(a);
    for (double& v : out.data) v = std::exp(v);
    ensure_finite(out, "exp_elem");
    return push(std::move(out), [a](GradTape& t, const Matrix& g, Var self) {
      const Matrix& y = t.value(self);
      Matrix d = g;
      for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] *= y.data[i];
      t.accumulate(a, d);
    });
  }

  /// Elementwise a * s where s is a 1x1 scalar node.
  Var mul_scalar(Var a, Var s) {
    const Matrix& sv = value(s);
    if (sv.rows != 1 || sv.cols != 1) throw Error("mul_scalar: scalar operand must be 1x1");
    Matrix out = muser::scale(value(a), sv(0, 0));
    return push(std::move(out), [a, s](GradTape& t, const Matrix& g) {
      const double sval = t.value(s)(0, 0);
      t.accumulate(a, muser::scale(g, sval));
      const Matrix& av = t.value(a);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.data.size(); ++i) acc += g.data[i] * av.data[i];
      Matrix sg(1, 1);
      sg(0, 0) = acc;
      t.accumulate(s, sg);
    });
  }

  /// Selects rows of `table` by index (token embedding lookup).
  Var gather_rows(Var table, const std::vector<std::size_t>& idx) {
    const Matrix& tv = value(table);
    Matrix out(idx.size(), tv.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= tv.rows)
        throw DataError("gather_rows: index " + std::to_string(idx[i]) +
                        " out of range for table with " + std::to_string(tv.rows) + " rows");
      for (std::size_t j = 0; j < tv.cols; ++j) out(i, j) = tv(idx[i], j);
    }
    return push(std::move(out), [table, idx](GradTape& t, const Matrix& g) {
      Matrix tg(t.value(table).rows, t.value(table).cols);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < g.cols; ++j) tg(idx[i], j) += g(i, j);
      t.accumulate(table, tg);
    });
  }

  Var softmax_rows(Var a) {
    Matrix out = muser::softmax_rows(value(a));
    return push(std::move(out), [a](GradTape& t, const Matrix& g, Var self) {
      const Matrix& y = t.value(self);
      Matrix d(y.rows, y.cols);
      for (std::size_t i = 0; i < y.rows; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < y.cols; ++j) dot += g(i, j) * y(i, j);
        for (std::size_t j = 0; j < y.cols; ++j) d(i, j) = y(i, j) * (g(i, j) - dot);
      }
      t.accumulate(a, d);
    });
  }

  /// Column means: (1 x c) from (r x c).
  Var mean_over_rows(Var a) {
    const Matrix& av = value(a);
    if (av.rows == 0) throw Error("mean_over_rows: empty matrix");
    Matrix out(1, av.cols);
    for (std::size_t i = 0; i < av.rows; ++i)
      for (std::size_t j = 0; j < av.cols; ++j) out(0, j) += av(i, j);
    const double inv = 1.0 / static_cast<double>(av.rows);
    for (double& v : out.data) v *= inv;
    return push(std::move(out), [a, inv](GradTape& t, const Matrix& g) {
      const Matrix& av2 = t.value(a);
      Matrix d(av2.rows, av2.cols);
      for (std::size_t i = 0; i < d.rows; ++i)
        for (std::size_t j = 0; j < d.cols; ++j) d(i, j) = g(0, j) * inv;
      t.accumulate(a, d);
    });
  }

  Var l2_normalize_rows(Var a, double eps = 1e-12) {
    Matrix out = muser::l2_normalize_rows(value(a), eps);
    return push(std::move(out), [a, eps](GradTape& t, const Matrix& g) {
      const Matrix& x = t.value(a);
      Matrix d(x.rows, x.cols);
      for (std::size_t i = 0; i < x.rows; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) ss += x(i, j) * x(i, j);
        const double norm = std::sqrt(ss);
        if (norm > eps) {
          // y = x/norm; dx = (g - (g.y) y)/norm
          double gy = 0.0;
          for (std::size_t j = 0; j < x.cols; ++j) gy += g(i, j) * x(i, j) / norm;
          for (std::size_t j = 0; j < x.cols; ++j)
            d(i, j) = (g(i, j) - gy * x(i, j) / norm) / norm;
        } else {
          for (std::size_t j = 0; j < x.cols; ++j) d(i, j) = g(i, j) / eps;
        }
      }
      t.accumulate(a, d);
    });
  }

  /// Stacks 1 x c rows into an n x c matrix.
  Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw Error("stack_rows: no rows");
    const std::size_t c = value(rows[0]).cols;
    Matrix out(rows.size(), c);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const Matrix& rv = value(rows[i]);
      if (rv.rows != 1 || rv.cols != c) throw Error("stack_rows: row shape mismatch");
      for (std::size_t j = 0; j < c; ++j) out(i, j) = rv(0, j);
    }
    return push(std::move(out), [rows](GradTape& t, const Matrix& g) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        Matrix d(1, g.cols);
        for (std::size_t j = 0; j < g.cols; ++j) d(0, j) = g(i, j);
        t.accumulate(rows[i], d);
      }
    });
  }

  /// Scalar (1x1) diagonal cross-entropy; see muser::cross_entropy_diag.
  Var cross_entropy_diag(Var logits, Axis axis) {
    const Matrix& lv = value(logits);
    Matrix out(1, 1);
    out(0, 0) = muser::cross_entropy_diag(lv, axis);
    return push(std::move(out), [logits, axis](GradTape& t, const Matrix& g) {
      const Matrix& lv2 = t.value(logits);
      const std::size_t n = lv2.rows;
      // d/dl_ij = (softmax(line i)[j] - delta_ij)/n along the chosen axis.
      const Matrix probs =
          axis == Axis::kRows ? muser::softmax_rows(lv2) : transpose(muser::softmax_rows(transpose(lv2)));
      Matrix d(n, n);
      const double s = g(0, 0) / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) d(i, j) = s * (probs(i, j) - (i == j ? 1.0 : 0.0));
      t.accumulate(logits, d);
    });
  }

  /// Seeds the adjoint of a 1x1 loss node with 1 and replays the tape.
  void backward(Var loss) {
    const Matrix& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1) throw Error("backward: loss must be a 1x1 scalar");
    for (auto& n : nodes_) {
      n.adjoint = Matrix(n.value.rows, n.value.cols);
    }
    nodes_[check(loss)].adjoint(0, 0) = 1.0;
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backprop) n.backprop(*this, n.adjoint, Var{i});
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    std::function<void(GradTape&, const Matrix&, Var)> backprop;
  };

  std::size_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw Error("GradTape: invalid variable handle");
    return static_cast<std::size_t>(v.id);
  }

  void accumulate(Var v, const Matrix& g) {
    Matrix& adj = nodes_[check(v)].adjoint;
    for (std::size_t i = 0; i < adj.data.size(); ++i) adj.data[i] += g.data[i];
  }

  Var push(Matrix value, std::function<void(GradTape&, const Matrix&, Var)> backprop) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backprop)});
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  // Adapter so two-argument closures do not need the self handle.
  Var push(Matrix value, std::function<void(GradTape&, const Matrix&)> backprop) {
    if (!backprop) return push(std::move(value), std::function<void(GradTape&, const Matrix&, Var)>());
    return push(std::move(value),
                [fn = std::move(backprop)](GradTape& t, const Matrix& g, Var) { fn(t, g); });
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

/// Compares `analytic` against central differences of `f` around `x0`.
/// Returns max over entries of |g_a - g_n| / max(|g_a|, |g_n|, 1e-8).
/// `f` must be deterministic; this is verified by evaluating twice.
inline double grad_check(const std::function<double(std::span<const double>)>& f,
                         std::span<const double> x0, std::span<const double> analytic,
                         double eps = 1e-5) {
  if (eps < 1e-6 || eps > 1e-3) throw Error("grad_check: eps must lie in [1e-6, 1e-3]");
  if (x0.size() != analytic.size())
    throw Error("grad_check: point and gradient sizes differ");
  std::vector<double> x(x0.begin(), x0.end());
  const double base1 = f(x);
  const double base2 = f(x);
  if (std::bit_cast<std::uint64_t>(base1) != std::bit_cast<std::uint64_t>(base2))
    throw NumericError("grad_check: loss function is not deterministic");
  double max_rel = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double fp = f(x);
    x[i] = saved - eps;
    const double fm = f(x);
    x[i] = saved;
    const double num = (fp - fm) / (2.0 * eps);
    const double ana = analytic[i];
    const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace muser::ad
