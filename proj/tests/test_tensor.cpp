#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "prevalens/tensor.hpp"
#include "test_util.hpp"

using namespace prevalens;
using testutil::check_grads_match_fd;

TEST_CASE("tensor shape/value consistency is enforced") {
  CHECK_THROWS(Tensor::create({2, 3}, {1.0, 2.0}));
  auto t = Tensor::create({2, 2}, {1, 2, 3, 4});
  CHECK(t->size() == 4);
  CHECK(t->at(1, 0) == 3);
}

TEST_CASE("sigmoid of zero is one half") {
  auto y = sigmoid(Tensor::vector({0.0}));
  CHECK(y->values[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("matmul matches hand multiplication") {
  auto a = Tensor::create({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::create({2, 1}, {1, 1});
  auto c = matmul(a, b);
  CHECK(c->values[0] == doctest::Approx(3));
  CHECK(c->values[1] == doctest::Approx(7));

  SUBCASE("vector right-hand side") {
    auto v = matmul(a, Tensor::vector({1, 1}));
    CHECK(v->shape == std::vector<std::size_t>{2});
    CHECK(v->values[0] == doctest::Approx(3));
    CHECK(v->values[1] == doctest::Approx(7));
  }
}

TEST_CASE("softmax over equal logits is uniform") {
  auto y = softmax(Tensor::vector({0.0, 0.0}));
  CHECK(y->values[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(y->values[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("shape mismatches raise descriptive errors") {
  auto a = Tensor::vector({1, 2});
  auto b = Tensor::vector({1, 2, 3});
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("(2)"), std::invalid_argument);
  CHECK_THROWS_AS(mul(a, b), std::invalid_argument);
  auto m = Tensor::create({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(m, b), std::invalid_argument);
}

TEST_CASE("relu clamps negatives") {
  auto y = relu(Tensor::vector({-1.0, 2.0}));
  CHECK(y->values[0] == 0.0);
  CHECK(y->values[1] == 2.0);
}

TEST_CASE("backward of a linear form returns the coefficients") {
  auto w = Tensor::vector({1.0, 1.0}, true);
  auto x = Tensor::vector({2.0, 3.0});
  backward(sum(mul(w, x)));
  CHECK(w->grad[0] == doctest::Approx(2.0));
  CHECK(w->grad[1] == doctest::Approx(3.0));
}

TEST_CASE("backward of sigmoid at zero is a quarter") {
  auto w = Tensor::vector({0.0}, true);
  backward(sigmoid(w));
  CHECK(w->grad[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses") {
  auto w = Tensor::vector({1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(mul(w, w)), std::invalid_argument);
}

TEST_CASE("gradients accumulate until zeroed") {
  auto w = Tensor::vector({0.5}, true);
  auto x = Tensor::vector({2.0});
  backward(sum(mul(w, x)));
  backward(sum(mul(w, x)));
  CHECK(w->grad[0] == doctest::Approx(4.0));
  w->zero_grad();
  CHECK(w->grad[0] == 0.0);
}

TEST_CASE("every primitive's backward matches central finite differences") {
  Rng rng(42);
  auto rand_tensor = [&](std::vector<std::size_t> shape) {
    return Tensor::uniform(std::move(shape), -2.0, 2.0, rng);
  };

  SUBCASE("add / mul / sum") {
    auto a = rand_tensor({5});
    auto b = rand_tensor({5});
    check_grads_match_fd([&] { return sum(mul(add(a, b), b)); }, {a, b});
  }
  SUBCASE("matmul") {
    auto a = rand_tensor({3, 4});
    auto b = rand_tensor({4, 2});
    check_grads_match_fd([&] { return sum(matmul(a, b)); }, {a, b});
  }
  SUBCASE("matmul vector rhs") {
    auto a = rand_tensor({3, 4});
    auto v = rand_tensor({4});
    check_grads_match_fd([&] { return sum(sigmoid(matmul(a, v))); }, {a, v});
  }
  SUBCASE("matmul_nt") {
    auto a = rand_tensor({3, 4});
    auto b = rand_tensor({2, 4});
    check_grads_match_fd([&] { return sum(tanh_op(matmul_nt(a, b))); }, {a, b});
  }
  SUBCASE("add_rowwise") {
    auto m = rand_tensor({3, 4});
    auto v = rand_tensor({4});
    check_grads_match_fd([&] { return sum(add_rowwise(m, v)); }, {m, v});
  }
  SUBCASE("concat and row") {
    auto a = rand_tensor({3});
    auto m = rand_tensor({4, 3});
    check_grads_match_fd([&] { return sum(sigmoid(concat({a, row(m, 2)}))); }, {a, m});
  }
  SUBCASE("activations") {
    auto x = rand_tensor({6});
    check_grads_match_fd([&] { return sum(sigmoid(x)); }, {x});
    check_grads_match_fd([&] { return sum(tanh_op(x)); }, {x});
    check_grads_match_fd([&] { return sum(relu(x)); }, {x});
  }
  SUBCASE("softmax") {
    auto x = rand_tensor({5});
    auto w = rand_tensor({5});
    check_grads_match_fd([&] { return sum(mul(softmax(x), w)); }, {x, w});
    auto m = rand_tensor({3, 4});
    auto wm = rand_tensor({3, 4});
    check_grads_match_fd([&] { return sum(mul(softmax(m), wm)); }, {m, wm});
  }
  SUBCASE("mse and scale") {
    auto p = rand_tensor({4});
    auto t = rand_tensor({4});
    check_grads_match_fd([&] { return scale(mse_loss(p, t), 3.0); }, {p, t});
  }
}

TEST_CASE("softmax rows are strictly positive and sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = Tensor::uniform({4, 6}, -30.0, 30.0, rng, false);
    auto y = softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        CHECK(y->at(r, c) > 0.0);
        s += y->at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("mse examples") {
  CHECK(mse_loss(Tensor::vector({1, 0}), Tensor::vector({1, 0}))->item() == 0.0);
  CHECK(mse_loss(Tensor::vector({1, 0}), Tensor::vector({0, 1}))->item() ==
        doctest::Approx(1.0));
  CHECK(mse_loss(Tensor::vector({0.6, 0.4}), Tensor::vector({0.5, 0.5}))->item() ==
        doctest::Approx(0.01));
  CHECK_THROWS_AS(mse_loss(Tensor::vector({1}), Tensor::vector({1, 2})), std::invalid_argument);
}

TEST_CASE("dropout") {
  Rng rng(11);
  auto x = Tensor::uniform({64}, -2.0, 2.0, rng, false);

  SUBCASE("evaluation mode is bit-identical to the identity") {
    auto y = dropout(x, 0.5, /*training=*/false, nullptr);
    CHECK(y.get() == x.get());
  }
  SUBCASE("rate outside [0,1) is rejected") {
    CHECK_THROWS_AS(dropout(x, 1.0, true, &rng), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, &rng), std::invalid_argument);
  }
  SUBCASE("inverted scaling preserves the expectation") {
    // Monte-Carlo check: mean over many stochastic passes approaches the
    // no-dropout output
    std::vector<double> mean(x->size(), 0.0);
    const int passes = 10000;
    for (int i = 0; i < passes; ++i) {
      auto y = dropout(x, 0.5, true, &rng);
      for (std::size_t j = 0; j < x->size(); ++j) mean[j] += y->values[j];
    }
    for (std::size_t j = 0; j < x->size(); ++j) {
      mean[j] /= passes;
      CHECK(std::abs(mean[j] - x->values[j]) <= 0.05 * std::abs(x->values[j]) + 1e-3);
    }
  }
}

TEST_CASE("release_graph breaks deep chains safely") {
  auto w = Tensor::vector({0.1}, true);
  TensorPtr cur = w;
  for (int i = 0; i < 200000; ++i) cur = scale(cur, 1.0);
  release_graph(cur);  // must not overflow the stack on teardown
  CHECK(cur->values[0] == doctest::Approx(0.1));
}
