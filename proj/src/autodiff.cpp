#include "aftse/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "aftse/errors.hpp"

namespace aftse::ad {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ValidationError(std::string(op) + ": " + detail);
}

std::string dims(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op,
          "shape mismatch " + dims(a.value()) + " vs " + dims(b.value()));
}

void colvec_of(const Var& x, const Var& v, const char* op) {
  require(v.cols() == 1 && v.rows() == x.rows(), op,
          "expected column vector of " + std::to_string(x.rows()) + " rows, got " + dims(v.value()));
}

}  // namespace

Var Tape::constant(Matrix value) {
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::constant_ref(const Matrix& value) {
  Node& n = nodes_.emplace_back();
  n.ref = &value;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(const Matrix& value) {
  Node& n = nodes_.emplace_back();
  n.ref = &value;
  n.requires_grad = true;
  return {this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw ValidationError("ad: mixing variables from different tapes");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Node& n = nodes_.emplace_back();
  n.own = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return {this, static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Tape::value(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.ref ? *n.ref : n.own;
}

const Matrix* Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.size() ? &n.grad : nullptr;
}

void Tape::backward(const Var& out) {
  require(out.rows() == 1 && out.cols() == 1, "backward", "output must be 1x1, got " + dims(out.value()));
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[out.id()].requires_grad) return;
  nodes_[out.id()].grad = Matrix::Ones(1, 1);
  for (int id = out.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size()) {
      // The closure may append to other nodes' adjoints but never to this one.
      n.backward(*this, n.grad);
    }
  }
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul", dims(a.value()) + " * " + dims(b.value()));
  Matrix out = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double c) {
  return a.tape()->record(c * a.value(), {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, c * g); });
}

Var add_const(const Var& a, const Matrix& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "add_const", dims(a.value()) + " vs " + dims(c));
  return a.tape()->record(a.value() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var mul_const(const Var& a, const Matrix& c) {
  require(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const", dims(a.value()) + " vs " + dims(c));
  return a.tape()->record(a.value().cwiseProduct(c), {a},
                          [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(c)); });
}

Var add_colvec(const Var& x, const Var& v) {
  colvec_of(x, v, "add_colvec");
  Matrix out = x.value().colwise() + v.value().col(0);
  return x.tape()->record(std::move(out), {x, v}, [x, v](Tape& t, const Matrix& g) {
    t.accumulate(x, g);
    if (v.requires_grad()) t.accumulate(v, g.rowwise().sum());
  });
}

Var mul_colvec(const Var& x, const Var& v) {
  colvec_of(x, v, "mul_colvec");
  Matrix out = x.value().array().colwise() * v.value().col(0).array();
  return x.tape()->record(std::move(out), {x, v}, [x, v](Tape& t, const Matrix& g) {
    if (x.requires_grad()) t.accumulate(x, (g.array().colwise() * v.value().col(0).array()).matrix());
    if (v.requires_grad()) t.accumulate(v, g.cwiseProduct(x.value()).rowwise().sum());
  });
}

Var affine(const Var& w, const Var& x, const Var& b) {
  require(w.cols() == x.rows(), "affine", dims(w.value()) + " * " + dims(x.value()));
  require(b.cols() == 1 && b.rows() == w.rows(), "affine", "bias " + dims(b.value()));
  Matrix out(w.rows(), x.cols());
  out.noalias() = w.value() * x.value();
  out.colwise() += b.value().col(0);
  return w.tape()->record(std::move(out), {w, x, b}, [w, x, b](Tape& t, const Matrix& g) {
    if (w.requires_grad()) t.accumulate(w, g * x.value().transpose());
    if (x.requires_grad()) t.accumulate(x, w.value().transpose() * g);
    if (b.requires_grad()) t.accumulate(b, g.rowwise().sum());
  });
}

Var gelu(const Var& x) {
  static constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double c = 0.044715;
  const Matrix& xv = x.value();
  const Eigen::ArrayXXd th = (k * (xv.array() + c * xv.array().cube())).tanh();
  Matrix out = (0.5 * xv.array() * (1.0 + th)).matrix();
  return x.tape()->record(std::move(out), {x}, [x, th](Tape& t, const Matrix& g) {
    const Eigen::ArrayXXd xa = x.value().array();
    const Eigen::ArrayXXd d = 0.5 * (1.0 + th) + 0.5 * xa * (1.0 - th.square()) * k * (1.0 + 3.0 * c * xa.square());
    t.accumulate(x, (g.array() * d).matrix());
  });
}

Var silu(const Var& x) {
  const Eigen::ArrayXXd sg = 1.0 / (1.0 + (-x.value().array()).exp());
  Matrix out = (x.value().array() * sg).matrix();
  return x.tape()->record(std::move(out), {x}, [x, sg](Tape& t, const Matrix& g) {
    const Eigen::ArrayXXd d = sg * (1.0 + x.value().array() * (1.0 - sg));
    t.accumulate(x, (g.array() * d).matrix());
  });
}

Var relu(const Var& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return x.tape()->record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, (x.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var sigmoid(const Var& x) {
  Matrix out = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  return x.tape()->record(out, {x}, [x, out](Tape& t, const Matrix& g) {
    t.accumulate(x, (g.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Var sqrt(const Var& x, double eps) {
  Matrix out = (x.value().array() + eps).sqrt().matrix();
  return x.tape()->record(out, {x}, [x, out](Tape& t, const Matrix& g) {
    t.accumulate(x, (g.array() / (2.0 * out.array())).matrix());
  });
}

Var layer_norm(const Var& x, double eps) {
  const Matrix& xv = x.value();
  const double n = static_cast<double>(xv.rows());
  const Eigen::RowVectorXd mean = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mean;
  const Eigen::RowVectorXd inv_std =
      ((centered.array().square().colwise().sum() / n) + eps).rsqrt().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  return x.tape()->record(xhat, {x}, [x, xhat, inv_std, n](Tape& t, const Matrix& g) {
    const Eigen::RowVectorXd mean_g = g.colwise().mean();
    const Eigen::RowVectorXd mean_gx = g.cwiseProduct(xhat).colwise().sum() / n;
    Matrix dx = g.rowwise() - mean_g;
    dx -= (xhat.array().rowwise() * mean_gx.array()).matrix();
    dx = (dx.array().rowwise() * inv_std.array()).matrix();
    t.accumulate(x, dx);
  });
}

Var modulate(const Var& x, const Var& scale_v, const Var& shift_v) {
  colvec_of(x, scale_v, "modulate");
  colvec_of(x, shift_v, "modulate");
  const Eigen::ArrayXd gain = 1.0 + scale_v.value().col(0).array();
  Matrix out = (x.value().array().colwise() * gain).matrix();
  out.colwise() += shift_v.value().col(0);
  return x.tape()->record(std::move(out), {x, scale_v, shift_v},
                          [x, scale_v, shift_v, gain](Tape& t, const Matrix& g) {
                            if (x.requires_grad()) t.accumulate(x, (g.array().colwise() * gain).matrix());
                            if (scale_v.requires_grad()) t.accumulate(scale_v, g.cwiseProduct(x.value()).rowwise().sum());
                            if (shift_v.requires_grad()) t.accumulate(shift_v, g.rowwise().sum());
                          });
}

Var attention(const Var& q, const Var& k, const Var& v, int heads) {
  require(heads > 0 && q.rows() % heads == 0, "attention", "width not divisible by head count");
  require(k.rows() == q.rows() && v.rows() == q.rows(), "attention", "q/k/v width mismatch");
  require(k.cols() == v.cols(), "attention", "k/v token mismatch");
  const Eigen::Index dh = q.rows() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();

  // probs[h] is (keys x queries); each column is a softmax over keys.
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h) {
    Matrix& p = probs[static_cast<std::size_t>(h)];
    p.noalias() = kv.middleRows(h * dh, dh).transpose() * qv.middleRows(h * dh, dh);
    p *= inv_sqrt;
    const Eigen::RowVectorXd mx = p.colwise().maxCoeff();
    p = (p.rowwise() - mx).array().exp().matrix();
    const Eigen::RowVectorXd den = p.colwise().sum();
    p = (p.array().rowwise() / den.array()).matrix();
    out.middleRows(h * dh, dh).noalias() = vv.middleRows(h * dh, dh) * p;
  }
  return q.tape()->record(std::move(out), {q, k, v},
                          [q, k, v, probs = std::move(probs), heads, dh, inv_sqrt](Tape& t, const Matrix& g) {
                            const Matrix& qv = q.value();
                            const Matrix& kv = k.value();
                            const Matrix& vv = v.value();
                            Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
                            Matrix dk = Matrix::Zero(kv.rows(), kv.cols());
                            Matrix dv = Matrix::Zero(vv.rows(), vv.cols());
                            for (int h = 0; h < heads; ++h) {
                              const Matrix& p = probs[static_cast<std::size_t>(h)];
                              const auto gh = g.middleRows(h * dh, dh);
                              dv.middleRows(h * dh, dh).noalias() = gh * p.transpose();
                              Matrix dp = vv.middleRows(h * dh, dh).transpose() * gh;
                              const Eigen::RowVectorXd inner = dp.cwiseProduct(p).colwise().sum();
                              Matrix ds = (p.array() * (dp.rowwise() - inner).array()).matrix() * inv_sqrt;
                              dq.middleRows(h * dh, dh).noalias() = kv.middleRows(h * dh, dh) * ds;
                              dk.middleRows(h * dh, dh).noalias() = qv.middleRows(h * dh, dh) * ds.transpose();
                            }
                            t.accumulate(q, dq);
                            t.accumulate(k, dk);
                            t.accumulate(v, dv);
                          });
}

Var concat_cols(const Var& a, const Var& b) {
  require(a.rows() == b.rows(), "concat_cols", dims(a.value()) + " vs " + dims(b.value()));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index na = a.cols(), nb = b.cols();
  return a.tape()->record(std::move(out), {a, b}, [a, b, na, nb](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.leftCols(na));
    if (b.requires_grad()) t.accumulate(b, g.rightCols(nb));
  });
}

Var concat_rows(const Var& a, const Var& b) {
  require(a.cols() == b.cols(), "concat_rows", dims(a.value()) + " vs " + dims(b.value()));
  Matrix out(a.rows() + b.rows(), a.cols());
  out << a.value(), b.value();
  const Eigen::Index na = a.rows(), nb = b.rows();
  return a.tape()->record(std::move(out), {a, b}, [a, b, na, nb](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.topRows(na));
    if (b.requires_grad()) t.accumulate(b, g.bottomRows(nb));
  });
}

Var slice_cols(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols", "range out of bounds");
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return x.tape()->record(x.value().middleCols(start, count), {x},
                          [x, start, count, rows, cols](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, cols);
                            full.middleCols(start, count) = g;
                            t.accumulate(x, full);
                          });
}

Var slice_rows(const Var& x, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= x.rows(), "slice_rows", "range out of bounds");
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return x.tape()->record(x.value().middleRows(start, count), {x},
                          [x, start, count, rows, cols](Tape& t, const Matrix& g) {
                            Matrix full = Matrix::Zero(rows, cols);
                            full.middleRows(start, count) = g;
                            t.accumulate(x, full);
                          });
}

Var unfold_cols(const Var& x, Eigen::Index kernel, Eigen::Index stride) {
  require(kernel > 0 && stride > 0, "unfold_cols", "kernel and stride must be positive");
  require(x.cols() >= kernel, "unfold_cols", "fewer columns than kernel");
  const Eigen::Index rows = x.rows(), cols = x.cols();
  const Eigen::Index out_cols = 1 + (cols - kernel) / stride;
  Matrix out(rows * kernel, out_cols);
  for (Eigen::Index j = 0; j < out_cols; ++j) {
    for (Eigen::Index k = 0; k < kernel; ++k) out.col(j).segment(k * rows, rows) = x.value().col(j * stride + k);
  }
  return x.tape()->record(std::move(out), {x},
                          [x, kernel, stride, rows, cols, out_cols](Tape& t, const Matrix& g) {
                            Matrix dx = Matrix::Zero(rows, cols);
                            for (Eigen::Index j = 0; j < out_cols; ++j) {
                              for (Eigen::Index k = 0; k < kernel; ++k) {
                                dx.col(j * stride + k) += g.col(j).segment(k * rows, rows);
                              }
                            }
                            t.accumulate(x, dx);
                          });
}

Var sum(const Var& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  return x.tape()->record(std::move(out), {x}, [x, rows, cols](Tape& t, const Matrix& g) {
    t.accumulate(x, Matrix::Constant(rows, cols, g(0, 0)));
  });
}

Var mean_cols(const Var& x) {
  const Eigen::Index cols = x.cols();
  Matrix out = x.value().rowwise().mean();
  return x.tape()->record(std::move(out), {x}, [x, cols](Tape& t, const Matrix& g) {
    t.accumulate(x, g.replicate(1, cols) / static_cast<double>(cols));
  });
}

Var mean_square(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  Matrix out(1, 1);
  out(0, 0) = x.value().squaredNorm() / n;
  return x.tape()->record(std::move(out), {x}, [x, n](Tape& t, const Matrix& g) {
    t.accumulate(x, (2.0 * g(0, 0) / n) * x.value());
  });
}

}  // namespace aftse::ad
