#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "ddsd/errors.hpp"
#include "ddsd/numerics/matrix.hpp"
#include "ddsd/numerics/tape.hpp"
#include "ddsd/rng.hpp"
#include "support/gradcheck.hpp"

using namespace ddsd;
using namespace ddsd::num;
using ddsd::testing::check_gradients;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

std::size_t dim(Rng& rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Contracts a matrix-valued output with fixed random weights so every entry
// contributes to the scalar loss with a different coefficient.
Var project(Tape& t, Var out, const Matrix& w) { return sum(mul(out, t.constant(w))); }

constexpr int kInstances = 100;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("matmul values") {
  Matrix m = Matrix::from_rows({{1.5, -2.0}, {0.25, 4.0}});
  CHECK(matmul(Matrix::identity(2), m) == m);
  Matrix r = matmul(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{1}, {1}}));
  CHECK(r == Matrix::from_rows({{3}, {7}}));
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), DimensionError);

  Tape t;
  CHECK_THROWS_AS(num::matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 3))), DimensionError);
}

TEST_CASE("elementwise values") {
  Tape t;
  Var z = t.constant(Matrix(1, 1, 0.0));
  CHECK(sigmoid(z).value()(0, 0) == 0.5);
  CHECK(num::tanh(z).value()(0, 0) == 0.0);
  CHECK_THROWS_AS(add(t.constant(Matrix(2, 3)), t.constant(Matrix(3, 2))), DimensionError);
  CHECK_THROWS_AS(mul(t.constant(Matrix(2, 3)), t.constant(Matrix(1, 2))), DimensionError);

  // bias row broadcast
  Var a = t.constant(Matrix::from_rows({{1, 2}, {3, 4}}));
  Var b = t.constant(Matrix::from_rows({{10, 20}}));
  CHECK(add(a, b).value() == Matrix::from_rows({{11, 22}, {13, 24}}));
}

TEST_CASE("tanh gradient at 0.7") {
  Parameter x{"x", Matrix(1, 1, 0.7)};
  Tape t;
  Var y = num::tanh(t.parameter(x));
  t.backward(y);
  const double h = 1e-5;
  const double fd = (std::tanh(0.7 + h) - std::tanh(0.7 - h)) / (2 * h);
  CHECK(std::abs(t.gradient(x)(0, 0) - fd) <= 1e-5);
}

TEST_CASE("softmax values") {
  Tape t;
  Var u = softmax_rows(t.constant(Matrix::from_rows({{2, 2, 2, 2}})));
  for (double v : u.value().values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  Var s = softmax_rows(t.constant(Matrix::from_rows({{0.0, std::log(3.0)}})));
  CHECK(s.value()(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.value()(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  // no overflow for huge logits; rows sum to 1
  Rng rng(3);
  Matrix big = random_matrix(rng, 6, 7, 300.0);
  Var p = softmax_rows(t.constant(big));
  CHECK(p.value().all_finite());
  for (std::size_t r = 0; r < 6; ++r) {
    double acc = 0;
    for (double v : p.value().row(r)) acc += v;
    CHECK(std::abs(acc - 1.0) <= 1e-9);
  }

  Matrix mask = Matrix::from_rows({{1, 0, 1}});
  Var m = softmax_rows(t.constant(Matrix::from_rows({{1.0, 50.0, 1.0}})), mask);
  CHECK(m.value()(0, 1) == 0.0);
  CHECK(m.value()(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("softmax Jacobian on a 1x5 row") {
  Rng rng(11);
  Parameter x{"x", random_matrix(rng, 1, 5)};
  for (std::size_t j = 0; j < 5; ++j) {
    Matrix w(1, 5);
    w(0, j) = 1.0;
    auto g = check_gradients({&x}, [&](Tape& t) { return project(t, softmax_rows(t.parameter(x)), w); });
    CHECK(g.max_abs <= 1e-5);
  }
}

TEST_CASE("backward basics") {
  Rng rng(5);
  Parameter w{"w", random_matrix(rng, 3, 4)};
  {
    Tape t;
    Var loss = sum(t.parameter(w));
    t.backward(loss);
    for (double g : t.gradient(w).values()) CHECK(g == 1.0);
  }
  {
    Tape t;
    t.parameter(w);
    Var loss = sum(t.constant(random_matrix(rng, 2, 2)));
    t.backward(loss);
    for (double g : t.gradient(w).values()) CHECK(g == 0.0);
  }
  {
    Tape t;
    CHECK_THROWS_AS(t.backward(t.parameter(w)), ContractError);
  }
  {
    // re-running backward on the same graph gives bit-identical gradients
    Parameter v{"v", random_matrix(rng, 4, 3)};
    Tape t;
    Var loss = sum(num::tanh(num::matmul(t.parameter(w), t.parameter(v))));
    t.backward(loss);
    Matrix g1 = t.gradient(w), h1 = t.gradient(v);
    t.backward(loss);
    CHECK(t.gradient(w) == g1);
    CHECK(t.gradient(v) == h1);
  }
}

TEST_CASE("finite differences: matmul 3x4 by 4x2") {
  Rng rng(21);
  for (int i = 0; i < kInstances; ++i) {
    Parameter a{"a", random_matrix(rng, 3, 4)}, b{"b", random_matrix(rng, 4, 2)};
    Matrix w = random_matrix(rng, 3, 2);
    auto g = check_gradients({&a, &b}, [&](Tape& t) {
      return project(t, num::matmul(t.parameter(a), t.parameter(b)), w);
    });
    REQUIRE(g.max_rel <= kTol);
  }
}

TEST_CASE("finite differences: elementwise ops with broadcasting") {
  Rng rng(22);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = dim(rng), c = dim(rng);
    Parameter a{"a", random_matrix(rng, r, c)};
    Parameter full{"full", random_matrix(rng, r, c)};
    Parameter row{"row", random_matrix(rng, 1, c)};
    Parameter col{"col", random_matrix(rng, r, 1)};
    Matrix w = random_matrix(rng, r, c);
    for (int op = 0; op < 3; ++op) {
      for (Parameter* b : {&full, &row, &col}) {
        auto g = check_gradients({&a, b}, [&](Tape& t) {
          Var x = t.parameter(a), y = t.parameter(*b);
          Var out = op == 0 ? add(x, y) : op == 1 ? sub(x, y) : mul(x, y);
          return project(t, out, w);
        });
        REQUIRE(g.max_rel <= kTol);
      }
    }
  }
}

TEST_CASE("finite differences: unary ops") {
  Rng rng(23);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = dim(rng), c = dim(rng);
    Parameter x{"x", random_matrix(rng, r, c, 1.5)};
    Matrix w = random_matrix(rng, r, c);
    for (int op = 0; op < 3; ++op) {
      auto g = check_gradients({&x}, [&](Tape& t) {
        Var v = t.parameter(x);
        Var out = op == 0 ? num::tanh(v) : op == 1 ? sigmoid(v) : scale(v, -1.7);
        return project(t, out, w);
      });
      REQUIRE(g.max_rel <= kTol);
    }
  }
}

TEST_CASE("finite differences: softmax with and without mask") {
  Rng rng(24);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = dim(rng), c = dim(rng, 2, 6);
    Parameter x{"x", random_matrix(rng, r, c, 2.0)};
    Matrix w = random_matrix(rng, r, c);
    Matrix mask(r, c, 1.0);
    for (std::size_t k = 0; k < r; ++k) {
      for (std::size_t j = 1; j < c; ++j) mask(k, j) = uniform01(rng) < 0.3 ? 0.0 : 1.0;
    }
    auto g1 = check_gradients({&x}, [&](Tape& t) { return project(t, softmax_rows(t.parameter(x)), w); });
    auto g2 = check_gradients({&x}, [&](Tape& t) { return project(t, softmax_rows(t.parameter(x), mask), w); });
    REQUIRE(g1.max_rel <= kTol);
    REQUIRE(g2.max_rel <= kTol);
  }
}

TEST_CASE("finite differences: slicing and concatenation") {
  Rng rng(25);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t r = dim(rng, 2, 5), c = dim(rng, 2, 5);
    Parameter a{"a", random_matrix(rng, r, c)}, b{"b", random_matrix(rng, r, c)};
    Matrix wc = random_matrix(rng, r, 2 * c), wr = random_matrix(rng, 2 * r, c);
    Matrix ws = random_matrix(rng, r, c - 1), wt = random_matrix(rng, r - 1, c);
    auto g = check_gradients({&a, &b}, [&](Tape& t) {
      Var x = t.parameter(a), y = t.parameter(b);
      Var cc[] = {x, y};
      Var l1 = project(t, concat_cols(cc), wc);
      Var l2 = project(t, concat_rows(cc), wr);
      Var l3 = project(t, slice_cols(x, 1, c - 1), ws);
      Var l4 = project(t, slice_rows(y, 0, r - 1), wt);
      return add(add(l1, l2), add(l3, l4));
    });
    REQUIRE(g.max_rel <= kTol);
  }
}

TEST_CASE("finite differences: sequence_mean") {
  Rng rng(26);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t batch = dim(rng, 1, 4), steps = dim(rng, 1, 5), d = dim(rng);
    std::vector<std::size_t> lengths(batch);
    for (auto& l : lengths) l = dim(rng, 1, steps);
    Parameter f{"f", random_matrix(rng, steps * batch, d)};
    Matrix w = random_matrix(rng, batch, d);
    auto g = check_gradients({&f}, [&](Tape& t) { return project(t, sequence_mean(t.parameter(f), batch, lengths), w); });
    REQUIRE(g.max_rel <= kTol);
  }
}

TEST_CASE("finite differences: bce_with_logits") {
  Rng rng(27);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t b = dim(rng, 1, 8);
    Parameter z{"z", random_matrix(rng, b, 1, 3.0)};
    Matrix y(b, 1);
    for (double& v : y.values()) v = uniform01(rng) < 0.5 ? 1.0 : 0.0;
    auto g = check_gradients({&z}, [&](Tape& t) { return bce_with_logits(t.parameter(z), y); });
    REQUIRE(g.max_rel <= kTol);
  }
}

TEST_CASE("finite differences: one LSTM step in float64") {
  // gates = [x h]·W + b; c' = f*c + i*g; h' = o*tanh(c'); loss = project(h')
  Rng rng(28);
  for (int i = 0; i < kInstances; ++i) {
    const std::size_t d = 3, hdim = 4, batch = 2;
    Parameter w{"w", random_matrix(rng, d + hdim, 4 * hdim, 0.5)};
    Parameter b{"b", random_matrix(rng, 1, 4 * hdim, 0.1)};
    Matrix x = random_matrix(rng, batch, d), h0 = random_matrix(rng, batch, hdim), c0 = random_matrix(rng, batch, hdim);
    Matrix proj = random_matrix(rng, batch, hdim);
    auto g = check_gradients({&w, &b}, [&](Tape& t) {
      Var parts[] = {t.constant(x), t.constant(h0)};
      Var gates = add(num::matmul(concat_cols(parts), t.parameter(w)), t.parameter(b));
      Var ig = sigmoid(slice_cols(gates, 0, hdim));
      Var fg = sigmoid(slice_cols(gates, hdim, hdim));
      Var gg = num::tanh(slice_cols(gates, 2 * hdim, hdim));
      Var og = sigmoid(slice_cols(gates, 3 * hdim, hdim));
      Var c1 = add(mul(fg, t.constant(c0)), mul(ig, gg));
      return project(t, mul(og, num::tanh(c1)), proj);
    });
    REQUIRE(g.max_rel <= 1e-6);
  }
}
