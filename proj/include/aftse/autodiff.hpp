#pragma once

// Small reverse-mode automatic differentiation engine over dense Eigen
// matrices. Each recorded node stores its value and a closure that pushes
// the incoming adjoint to its parents. Nodes that do not depend on any
// differentiable leaf are recorded without a closure, so evaluating a
// network on constants (stop-gradient) costs a plain forward pass.
//
// Activations use the (features x tokens) layout: one column per token.

#include <Eigen/Core>

#include <deque>
#include <functional>
#include <initializer_list>

namespace aftse::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// Constant that aliases external storage; `value` must outlive the tape.
  Var constant_ref(const Matrix& value);
  /// Differentiable leaf aliasing external storage (a parameter tensor).
  Var leaf(const Matrix& value);

  /// Records an op result. `backward` is dropped when no parent needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward);

  const Matrix& value(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient accumulated at `v` by the last backward(); nullptr when none reached it.
  const Matrix* grad(const Var& v) const;

  /// Adds `g` into the adjoint of `v` (no-op for constants).
  template <typename Expr>
  void accumulate(const Var& v, const Expr& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a 1x1 node, seeding its adjoint with 1.
  void backward(const Var& scalar_output);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix own;
    const Matrix* ref = nullptr;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::deque<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline bool Var::requires_grad() const { return tape_->requires_grad(*this); }

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
/// a + c with a constant matrix c.
Var add_const(const Var& a, const Matrix& c);
/// Elementwise a * c with a constant matrix c.
Var mul_const(const Var& a, const Matrix& c);
/// x + v broadcast over columns; v is (rows x 1).
Var add_colvec(const Var& x, const Var& v);
/// x * v broadcast over columns; v is (rows x 1).
Var mul_colvec(const Var& x, const Var& v);
/// W x + b.
Var affine(const Var& w, const Var& x, const Var& b);

// Elementwise nonlinearities.
Var gelu(const Var& x);
Var silu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var sqrt(const Var& x, double eps = 0.0);

// Normalisation and attention.
/// Per-column normalisation to zero mean, unit variance (no affine part).
Var layer_norm(const Var& x, double eps = 1e-6);
/// x * (1 + scale) + shift, with scale/shift broadcast over columns.
Var modulate(const Var& x, const Var& scale, const Var& shift);
/// Multi-head softmax attention. q, k, v are (width x tokens); every query
/// attends to every key.
Var attention(const Var& q, const Var& k, const Var& v, int heads);

// Shape manipulation.
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count);
/// Column j of the output stacks columns [j*stride, j*stride + kernel) of x.
Var unfold_cols(const Var& x, Eigen::Index kernel, Eigen::Index stride);

// Reductions.
Var sum(const Var& x);
Var mean_cols(const Var& x);
/// ||x||_F^2 / x.size(), a 1x1 node.
Var mean_square(const Var& x);

}  // namespace aftse::ad
