#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rlq/rng.hpp"
#include "rlq/tensor.hpp"
#include "test_util.hpp"

using namespace rlq;
using namespace rlq::testutil;

TEST_CASE("matmul identity and orthogonal rows") {
  Tensor I = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor A = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor C = matmul(I, A);
  CHECK(C.data()[0] == 1);
  CHECK(C.data()[1] == 2);
  CHECK(C.data()[2] == 3);
  CHECK(C.data()[3] == 4);

  Tensor r = Tensor::from_data({1, 2}, {1, 0});
  Tensor c = Tensor::from_data({2, 1}, {0, 1});
  CHECK(matmul(r, c).item() == 0.0);
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
}

TEST_CASE("matmul gradient vs central finite differences") {
  Rng rng(7);
  auto a0 = random_vec(rng, 12);
  auto b0 = random_vec(rng, 8);
  auto w0 = random_vec(rng, 6);  // weights making the loss scalar

  auto loss_of = [&](const std::vector<double>& a, const std::vector<double>& b) {
    GraphScope scope;
    Tensor A = Tensor::from_data({3, 4}, a, true);
    Tensor B = Tensor::from_data({4, 2}, b, true);
    Tensor W = Tensor::from_data({3, 2}, w0);
    return sum(mul(matmul(A, B), W)).item();
  };

  GraphScope scope;
  Tensor A = Tensor::from_data({3, 4}, a0, true);
  Tensor B = Tensor::from_data({4, 2}, b0, true);
  Tensor W = Tensor::from_data({3, 2}, w0);
  backward(sum(mul(matmul(A, B), W)));

  auto fd_a = finite_diff_grad([&](const std::vector<double>& a) { return loss_of(a, b0); }, a0);
  auto fd_b = finite_diff_grad([&](const std::vector<double>& b) { return loss_of(a0, b); }, b0);
  CHECK(max_rel_err({A.grad().begin(), A.grad().end()}, fd_a) < 1e-6);
  CHECK(max_rel_err({B.grad().begin(), B.grad().end()}, fd_b) < 1e-6);
}

TEST_CASE("elementwise basics") {
  Tensor x = Tensor::from_data({3}, {-1, 0, 2});
  Tensor y = relu(x);
  CHECK(y.data()[0] == 0);
  CHECK(y.data()[1] == 0);
  CHECK(y.data()[2] == 2);

  for (double v : {-1.0, 0.0, 3.0}) {
    Tensor t = Tensor::scalar(v);
    CHECK(log(exp(t)).item() == doctest::Approx(v).epsilon(1e-12));
  }

  for (double v : {0.5, -0.5}) {
    GraphScope scope;
    Tensor t = Tensor::scalar(v, true);
    backward(abs(t));
    CHECK(t.grad()[0] == (v > 0 ? 1.0 : -1.0));
  }
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::domain_error);
}

TEST_CASE("scalar broadcast in binary ops") {
  Tensor v = Tensor::from_data({3}, {1, 2, 3});
  Tensor s = Tensor::scalar(10);
  Tensor r = add(v, s);
  CHECK(r.data()[2] == 13);
  Tensor r2 = mul(s, v);
  CHECK(r2.data()[0] == 10);

  // scalar operand accumulates the elementwise gradients
  GraphScope scope;
  Tensor sv = Tensor::scalar(2.0, true);
  Tensor w = Tensor::from_data({3}, {1, 2, 3});
  backward(sum(mul(sv, w)));
  CHECK(sv.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax symmetry and l2_normalize") {
  Tensor z = softmax(Tensor::from_data({3}, {0, 0, 0}));
  for (double v : z.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor n = l2_normalize(Tensor::from_data({2}, {3, 4}));
  CHECK(n.data()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(n.data()[1] == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(l2_normalize(Tensor::from_data({2}, {0, 0})), std::domain_error);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(11);
  Tensor x = Tensor::from_data({4, 6}, random_vec(rng, 24, -5, 5));
  Tensor y = softmax(x);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) s += y.at(i, j);
    CHECK(std::fabs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("grad of mean(softmax*w) vs finite differences") {
  Rng rng(3);
  auto x0 = random_vec(rng, 12);
  auto w0 = random_vec(rng, 12);
  auto loss_of = [&](const std::vector<double>& x) {
    GraphScope scope;
    Tensor X = Tensor::from_data({3, 4}, x, true);
    Tensor W = Tensor::from_data({3, 4}, w0);
    return mean(mul(softmax(X), W)).item();
  };
  GraphScope scope;
  Tensor X = Tensor::from_data({3, 4}, x0, true);
  Tensor W = Tensor::from_data({3, 4}, w0);
  backward(mean(mul(softmax(X), W)));
  auto fd = finite_diff_grad(loss_of, x0);
  CHECK(max_rel_err({X.grad().begin(), X.grad().end()}, fd) < 1e-6);
}

TEST_CASE("backward requires scalar root and nonempty graph") {
  GraphScope scope;
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = relu(x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
  Tensor constant = Tensor::scalar(1.0);
  CHECK_THROWS_AS(backward(constant), std::invalid_argument);
}

TEST_CASE("repeated backward accumulates") {
  GraphScope scope;
  Tensor x = Tensor::scalar(3.0, true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward touches each node exactly once") {
  GraphScope scope;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor a = mul(x, x);       // node 0
  Tensor b = add(a, x);       // node 1
  Tensor c = relu(b);         // node 2
  Tensor loss = sum(c);       // node 3
  backward(loss);
  CHECK(scope.graph()->node_count() == 4);
  CHECK(scope.graph()->last_backward_visits() == 4);
}

TEST_CASE("gradient of constant-folded expression is exactly zero") {
  GraphScope scope;
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  Tensor zero = Tensor::scalar(0.0);
  backward(sum(mul(x, zero)));
  for (double g : x.grad()) CHECK(g == 0.0);

  // constants never attach to a graph at all
  Tensor c = mul(Tensor::scalar(2.0), Tensor::scalar(3.0));
  CHECK_FALSE(c.attached());
}

TEST_CASE("detach cuts the graph") {
  GraphScope scope;
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = mul(x, x).detach();
  CHECK_FALSE(y.attached());
  CHECK_FALSE(y.requires_grad());
  Tensor w = Tensor::scalar(5.0, true);
  backward(mul(y, w));
  CHECK(w.grad()[0] == doctest::Approx(4.0));
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("reshape, concat_cols, gather, transpose round trips") {
  GraphScope scope;
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor r = reshape(x, {3, 2});
  CHECK(r.at(2, 1) == 6);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {9, 8});
  Tensor cc = concat_cols(a, b);
  CHECK(cc.cols() == 3);
  CHECK(cc.at(0, 2) == 9);
  CHECK(cc.at(1, 2) == 8);

  Tensor g = gather(x, {0, 5});
  CHECK(g.data()[0] == 1);
  CHECK(g.data()[1] == 6);
  backward(sum(g));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[5] == 1.0);
  CHECK(x.grad()[2] == 0.0);

  Tensor t = transpose(a);
  CHECK(t.at(0, 1) == 3);
  CHECK(t.at(1, 0) == 2);
}

TEST_CASE("max_over_axis values and subgradient routing") {
  Tensor x = Tensor::from_data({2, 3}, {1, 5, 2, 7, 0, 7});
  Tensor mx = max_over_axis(x, 1);
  CHECK(mx.data()[0] == 5);
  CHECK(mx.data()[1] == 7);

  GraphScope scope;
  Tensor y = Tensor::from_data({2, 3}, {1, 5, 2, 7, 0, 7}, true);
  backward(sum(max_over_axis(y, 1)));
  // tie in row 1 resolves to the first (lowest flat index) element
  CHECK(y.grad()[1] == 1.0);
  CHECK(y.grad()[3] == 1.0);
  CHECK(y.grad()[5] == 0.0);
}

TEST_CASE("finite-difference sweep across differentiable ops") {
  // 50 random instances per op, tolerance 1e-4 (module invariant).
  Rng rng(2024);
  struct OpCase {
    const char* name;
    bool away_from_zero;
    std::function<Tensor(const Tensor&)> apply;
    double lo, hi;
  };
  const std::vector<OpCase> cases = {
      {"relu", true, [](const Tensor& t) { return relu(t); }, -1, 1},
      {"exp", false, [](const Tensor& t) { return exp(t); }, -1, 1},
      {"log", false, [](const Tensor& t) { return log(t); }, 0.1, 2},
      {"abs", true, [](const Tensor& t) { return abs(t); }, -1, 1},
      {"sqrt", false, [](const Tensor& t) { return sqrt(t); }, 0.1, 2},
      {"scale", false, [](const Tensor& t) { return scale(t, -1.7); }, -1, 1},
      {"softmax", false, [](const Tensor& t) { return softmax(t); }, -2, 2},
      {"log_softmax", false, [](const Tensor& t) { return log_softmax(t); }, -2, 2},
      {"l2_normalize", false, [](const Tensor& t) { return l2_normalize(t); }, 0.2, 2},
      {"sum_axis0", false, [](const Tensor& t) { return sum(t, 0); }, -1, 1},
      {"mean_axis1", false, [](const Tensor& t) { return mean(t, 1); }, -1, 1},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int inst = 0; inst < 50; ++inst) {
      auto x0 = c.away_from_zero ? random_vec_away_from_zero(rng, 12)
                                 : random_vec(rng, 12, c.lo, c.hi);
      auto w0 = random_vec(rng, 12);
      auto loss_of = [&](const std::vector<double>& x) {
        GraphScope scope;
        Tensor X = Tensor::from_data({3, 4}, x, true);
        Tensor W = Tensor::from_data({3, 4}, w0);
        Tensor Y = c.apply(X);
        if (Y.size() != 12) {
          // reductions: weight by a slice of w0
          std::vector<double> wr(w0.begin(), w0.begin() + Y.size());
          Tensor Wr = Tensor::from_data({Y.size()}, wr);
          return sum(mul(reshape(Y, {Y.size()}), Wr)).item();
        }
        return sum(mul(Y, W)).item();
      };
      GraphScope scope;
      Tensor X = Tensor::from_data({3, 4}, x0, true);
      Tensor W = Tensor::from_data({3, 4}, w0);
      Tensor Y = c.apply(X);
      Tensor loss;
      if (Y.size() != 12) {
        std::vector<double> wr(w0.begin(), w0.begin() + Y.size());
        loss = sum(mul(reshape(Y, {Y.size()}), Tensor::from_data({Y.size()}, wr)));
      } else {
        loss = sum(mul(Y, W));
      }
      backward(loss);
      auto fd = finite_diff_grad(loss_of, x0);
      worst = std::max(worst, max_rel_err({X.grad().begin(), X.grad().end()}, fd));
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("ops reject cross-graph operands") {
  GraphScope outer;
  Tensor x = Tensor::scalar(1.0, true);
  Tensor a = mul(x, x);
  Tensor b;
  {
    GraphScope inner;
    Tensor y = Tensor::scalar(2.0, true);
    b = mul(y, y);
  }
  CHECK_THROWS_AS(add(a, b), std::invalid_argument);
}
