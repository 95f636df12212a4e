#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <vector>

#include "aftse/autodiff.hpp"
#include "test_support.hpp"

using namespace aftse;
using aftse::testing::random_matrix;

namespace {

using Op = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Reduces an op output to a scalar through a fixed random projection and
// compares reverse-mode gradients of every input with central differences.
double max_rel_error(const Op& op, std::vector<Eigen::MatrixXd> inputs) {
  Eigen::MatrixXd proj;
  auto eval = [&](const std::vector<Eigen::MatrixXd>& in, std::vector<Eigen::MatrixXd>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto& m : in) leaves.push_back(tape.leaf(m));
    const ad::Var out = op(tape, leaves);
    if (proj.size() == 0) proj = random_matrix(out.rows(), out.cols(), 99);
    const ad::Var loss = ad::sum(ad::mul_const(out, proj));
    if (grads) {
      tape.backward(loss);
      for (const auto& l : leaves) {
        const auto* g = tape.grad(l);
        grads->push_back(g ? *g : Eigen::MatrixXd::Zero(l.rows(), l.cols()));
      }
    }
    return loss.scalar();
  };
  std::vector<Eigen::MatrixXd> grads;
  eval(inputs, &grads);
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = eval(inputs, nullptr);
      inputs[k].data()[i] = orig - h;
      const double down = eval(inputs, nullptr);
      inputs[k].data()[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = grads[k].data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("elementwise and linear ops match finite differences") {
  const auto a = random_matrix(4, 5, 1), b = random_matrix(4, 5, 2), w = random_matrix(3, 4, 3);
  const auto col = random_matrix(4, 1, 4), bias = random_matrix(3, 1, 5);
  const Eigen::MatrixXd c = random_matrix(4, 5, 6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::matmul(v[0], v[1]); }, {w, a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::add(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::sub(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::mul(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::scale(v[0], -1.7); }, {a}) < 1e-6);
  CHECK(max_rel_error([&](ad::Tape&, auto& v) { return ad::add_const(v[0], c); }, {a}) < 1e-6);
  CHECK(max_rel_error([&](ad::Tape&, auto& v) { return ad::mul_const(v[0], c); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::add_colvec(v[0], v[1]); }, {a, col}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::mul_colvec(v[0], v[1]); }, {a, col}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::affine(v[0], v[1], v[2]); }, {w, a, bias}) < 1e-6);
}

TEST_CASE("nonlinearities match finite differences") {
  const auto a = random_matrix(4, 5, 7);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::gelu(v[0]); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::silu(v[0]); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::sigmoid(v[0]); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::relu(v[0]); }, {a}) < 1e-6);
  const Eigen::MatrixXd pos = a.cwiseAbs().array() + 0.5;
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::sqrt(v[0]); }, {pos}) < 1e-6);
}

TEST_CASE("normalisation and attention match finite differences") {
  const auto x = random_matrix(8, 6, 8), scale = random_matrix(8, 1, 9), shift = random_matrix(8, 1, 10);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::layer_norm(v[0]); }, {x}) < 1e-5);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::modulate(v[0], v[1], v[2]); }, {x, scale, shift}) < 1e-6);
  const auto q = random_matrix(8, 6, 11), k = random_matrix(8, 6, 12), val = random_matrix(8, 6, 13);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::attention(v[0], v[1], v[2], 2); }, {q, k, val}) < 1e-5);
}

TEST_CASE("shape ops and reductions match finite differences") {
  const auto a = random_matrix(4, 6, 14), b = random_matrix(4, 3, 15), c = random_matrix(2, 6, 16);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::concat_cols(v[0], v[1]); }, {a, b}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::concat_rows(v[0], v[1]); }, {a, c}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::slice_cols(v[0], 2, 3); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::slice_rows(v[0], 1, 2); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::unfold_cols(v[0], 3, 2); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::sum(v[0]); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::mean_cols(v[0]); }, {a}) < 1e-6);
  CHECK(max_rel_error([](ad::Tape&, auto& v) { return ad::mean_square(v[0]); }, {a}) < 1e-6);
}

TEST_CASE("reused nodes accumulate gradients") {
  ad::Tape tape;
  Eigen::MatrixXd x0(1, 1);
  x0 << 3.0;
  const ad::Var x = tape.leaf(x0);
  const ad::Var y = ad::add(ad::mul(x, x), ad::scale(x, 2.0));  // x^2 + 2x
  tape.backward(y);
  CHECK((*tape.grad(x))(0, 0) == doctest::Approx(8.0));
}

TEST_CASE("constants carry no gradient and record no closure") {
  ad::Tape tape;
  const ad::Var c = tape.constant(random_matrix(3, 3, 17));
  const ad::Var x = tape.leaf(random_matrix(3, 3, 18));
  CHECK_FALSE(c.requires_grad());
  CHECK_FALSE(ad::gelu(c).requires_grad());
  const ad::Var loss = ad::sum(ad::mul(c, x));
  CHECK(loss.requires_grad());
  tape.backward(loss);
  CHECK(tape.grad(c) == nullptr);
  CHECK(tape.grad(x) != nullptr);
  CHECK(*tape.grad(x) == c.value());
}
