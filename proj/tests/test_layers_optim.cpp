#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "prevalens/gradcheck.hpp"
#include "prevalens/layers.hpp"
#include "prevalens/optim.hpp"
#include "prevalens/params_io.hpp"
#include "test_util.hpp"

using namespace prevalens;
using testutil::check_grads_match_fd;

namespace {

LstmParams zero_lstm(std::size_t input_dim, std::size_t hidden_dim) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.w_input = Tensor::zeros({hidden_dim, input_dim + hidden_dim}, true);
  p.w_forget = Tensor::zeros({hidden_dim, input_dim + hidden_dim}, true);
  p.w_output = Tensor::zeros({hidden_dim, input_dim + hidden_dim}, true);
  p.w_candidate = Tensor::zeros({hidden_dim, input_dim + hidden_dim}, true);
  p.b_input = Tensor::zeros({hidden_dim}, true);
  p.b_forget = Tensor::zeros({hidden_dim}, true);
  p.b_output = Tensor::zeros({hidden_dim}, true);
  p.b_candidate = Tensor::zeros({hidden_dim}, true);
  return p;
}

LstmParams random_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  auto p = zero_lstm(input_dim, hidden_dim);
  for (auto& t : p.parameters())
    for (auto& v : t->values) v = rng.uniform(-0.8, 0.8);
  return p;
}

}  // namespace

TEST_CASE("init_lstm shapes and forget bias") {
  Rng rng(1);
  auto p = init_lstm(3, 5, rng);
  CHECK(p.w_input->shape == std::vector<std::size_t>{5, 8});
  CHECK(p.b_candidate->shape == std::vector<std::size_t>{5});
  for (double b : p.b_forget->values) CHECK(b == 1.0);
  for (double b : p.b_input->values) CHECK(b == 0.0);
  const double bound = 1.0 / std::sqrt(8.0);
  for (double w : p.w_output->values) CHECK(std::abs(w) <= bound);
}

TEST_CASE("lstm cell with all-zero parameters outputs zero state") {
  auto p = zero_lstm(2, 3);
  auto [h, c] = lstm_cell_step(p, Tensor::vector({0.7, -1.3}), Tensor::zeros({3}),
                               Tensor::zeros({3}));
  for (double v : h->values) CHECK(v == doctest::Approx(0.0));
  for (double v : c->values) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("lstm cell matches a hand-evaluated scalar recurrence") {
  // hidden_dim = 1, input_dim = 1: every gate is a scalar affine of [x, h]
  auto p = zero_lstm(1, 1);
  const double wi_x = 0.3, wi_h = -0.2, bi = 0.1;
  const double wf_x = -0.5, wf_h = 0.4, bf = 0.2;
  const double wo_x = 0.7, wo_h = 0.1, bo = -0.3;
  const double wg_x = 0.9, wg_h = -0.6, bg = 0.05;
  p.w_input->values = {wi_x, wi_h};
  p.w_forget->values = {wf_x, wf_h};
  p.w_output->values = {wo_x, wo_h};
  p.w_candidate->values = {wg_x, wg_h};
  p.b_input->values = {bi};
  p.b_forget->values = {bf};
  p.b_output->values = {bo};
  p.b_candidate->values = {bg};

  const double x = 0.8, h_prev = -0.4, c_prev = 0.6;
  auto logistic = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  const double i = logistic(wi_x * x + wi_h * h_prev + bi);
  const double f = logistic(wf_x * x + wf_h * h_prev + bf);
  const double o = logistic(wo_x * x + wo_h * h_prev + bo);
  const double g = std::tanh(wg_x * x + wg_h * h_prev + bg);
  const double c_expected = f * c_prev + i * g;
  const double h_expected = o * std::tanh(c_expected);

  auto [h, c] = lstm_cell_step(p, Tensor::vector({x}), Tensor::vector({h_prev}),
                               Tensor::vector({c_prev}));
  CHECK(h->values[0] == doctest::Approx(h_expected).epsilon(1e-12));
  CHECK(c->values[0] == doctest::Approx(c_expected).epsilon(1e-12));
}

TEST_CASE("two identical inputs still move the state") {
  Rng rng(3);
  auto p = random_lstm(2, 3, rng);
  auto x = Tensor::vector({0.5, -0.2});
  auto [h1, c1] = lstm_cell_step(p, x, Tensor::zeros({3}), Tensor::zeros({3}));
  auto [h2, c2] = lstm_cell_step(p, x, h1, c1);
  double diff = 0.0;
  for (std::size_t j = 0; j < 3; ++j) diff += std::abs(h2->values[j] - h1->values[j]);
  CHECK(diff > 1e-6);
}

TEST_CASE("lstm cell dimension mismatches are rejected") {
  auto p = zero_lstm(2, 3);
  CHECK_THROWS_AS(lstm_cell_step(p, Tensor::vector({1.0}), Tensor::zeros({3}), Tensor::zeros({3})),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      lstm_cell_step(p, Tensor::vector({1.0, 2.0}), Tensor::zeros({2}), Tensor::zeros({3})),
      std::invalid_argument);
}

TEST_CASE("fused encoder agrees with chained cell steps") {
  Rng rng(5);
  auto p = random_lstm(3, 4, rng);
  std::vector<TensorPtr> seq;
  for (int t = 0; t < 6; ++t) seq.push_back(Tensor::uniform({3}, -1.5, 1.5, rng, false));

  SUBCASE("forward values, both directions") {
    for (bool reverse : {false, true}) {
      auto fused = lstm_encode(p, seq, reverse);
      TensorPtr h = Tensor::zeros({4}), c = Tensor::zeros({4});
      for (std::size_t t = 0; t < seq.size(); ++t) {
        auto [h2, c2] = lstm_cell_step(p, seq[reverse ? seq.size() - 1 - t : t], h, c);
        h = h2;
        c = c2;
      }
      for (std::size_t j = 0; j < 4; ++j) {
        CHECK(fused->values[j] == doctest::Approx(h->values[j]).epsilon(1e-12));
      }
    }
  }
  SUBCASE("hand-rolled BPTT agrees with the primitive-composed tape") {
    auto params = p.parameters();
    auto w = Tensor::uniform({4}, -1.0, 1.0, rng, false);
    zero_grads(params);
    backward(sum(mul(lstm_encode(p, seq, false), w)));
    std::vector<std::vector<double>> fused_grads;
    for (const auto& t : params) fused_grads.push_back(t->grad);

    zero_grads(params);
    TensorPtr h = Tensor::zeros({4}), c = Tensor::zeros({4});
    for (const auto& x : seq) {
      auto [h2, c2] = lstm_cell_step(p, x, h, c);
      h = h2;
      c = c2;
    }
    backward(sum(mul(h, w)));
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t j = 0; j < params[i]->size(); ++j) {
        CHECK(fused_grads[i][j] == doctest::Approx(params[i]->grad[j]).epsilon(1e-9));
      }
    }
  }
  SUBCASE("finite differences over the fused node") {
    auto w = Tensor::uniform({4}, -1.0, 1.0, rng, false);
    check_grads_match_fd([&] { return sum(mul(lstm_encode(p, seq, true), w)); }, p.parameters());
  }
}

TEST_CASE("bilstm encoding") {
  Rng rng(9);

  SUBCASE("output length is twice the hidden dimension") {
    auto fwd = random_lstm(2, 64, rng);
    auto bwd = random_lstm(2, 64, rng);
    std::vector<TensorPtr> seq{Tensor::vector({0.1, 0.2}), Tensor::vector({-0.3, 0.4}),
                               Tensor::vector({0.0, 1.0})};
    CHECK(bilstm_encode(fwd, bwd, seq)->size() == 128);
    for (std::size_t len = 1; len <= 4; ++len) {
      std::vector<TensorPtr> s(seq.begin(), seq.begin() + std::min(len, seq.size()));
      auto small_fwd = random_lstm(2, 5, rng);
      auto small_bwd = random_lstm(2, 5, rng);
      CHECK(bilstm_encode(small_fwd, small_bwd, s)->size() == 10);
    }
  }
  SUBCASE("single-item sequences see the same item in both directions") {
    auto fwd = random_lstm(2, 3, rng);
    auto bwd = random_lstm(2, 3, rng);
    auto item = Tensor::vector({0.4, -0.9});
    auto enc = bilstm_encode(fwd, bwd, {item});
    auto [hf, cf] = lstm_cell_step(fwd, item, Tensor::zeros({3}), Tensor::zeros({3}));
    auto [hb, cb] = lstm_cell_step(bwd, item, Tensor::zeros({3}), Tensor::zeros({3}));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(enc->values[j] == doctest::Approx(hf->values[j]));
      CHECK(enc->values[3 + j] == doctest::Approx(hb->values[j]));
    }
  }
  SUBCASE("reversing the sequence swaps the directional encodings") {
    auto a = random_lstm(2, 3, rng);
    auto b = random_lstm(2, 3, rng);
    std::vector<TensorPtr> seq{Tensor::vector({0.1, 0.2}), Tensor::vector({-0.5, 0.3}),
                               Tensor::vector({0.7, -0.1})};
    std::vector<TensorPtr> rev(seq.rbegin(), seq.rend());
    auto forward_order = bilstm_encode(a, b, seq);
    auto reverse_order = bilstm_encode(b, a, rev);  // swapped parameter sets
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(forward_order->values[j] == doctest::Approx(reverse_order->values[3 + j]));
      CHECK(forward_order->values[3 + j] == doctest::Approx(reverse_order->values[j]));
    }
  }
  SUBCASE("empty sequences are rejected") {
    auto fwd = random_lstm(2, 3, rng);
    auto bwd = random_lstm(2, 3, rng);
    CHECK_THROWS_AS(bilstm_encode(fwd, bwd, {}), std::invalid_argument);
  }
}

TEST_CASE("dense stack") {
  Rng rng(13);

  SUBCASE("identity weights with relu clamp negatives") {
    DenseLayer layer;
    layer.weights = Tensor::create({2, 2}, {1, 0, 0, 1}, true);
    layer.bias = Tensor::zeros({2}, true);
    layer.activation = Activation::Relu;
    auto y = dense_dropout_stack(Tensor::vector({-1.0, 2.0}), {layer}, false, nullptr);
    CHECK(y->values[0] == 0.0);
    CHECK(y->values[1] == 2.0);
  }
  SUBCASE("chained layers with dropout disabled at evaluation") {
    auto l1 = init_dense(3, 4, Activation::Relu, 0.5, rng);
    auto l2 = init_dense(4, 2, Activation::Identity, 0.5, rng);
    auto x = Tensor::uniform({3}, -1.0, 1.0, rng, false);
    auto y1 = dense_dropout_stack(x, {l1, l2}, false, nullptr);
    auto y2 = dense_dropout_stack(x, {l1, l2}, false, nullptr);
    for (std::size_t j = 0; j < 2; ++j) CHECK(y1->values[j] == y2->values[j]);
  }
  SUBCASE("gradients flow through the stack") {
    auto l1 = init_dense(3, 4, Activation::Tanh, 0.0, rng);
    auto l2 = init_dense(4, 2, Activation::Sigmoid, 0.0, rng);
    auto x = Tensor::uniform({3}, -1.0, 1.0, rng, false);
    check_grads_match_fd([&] { return sum(dense_dropout_stack(x, {l1, l2}, false, nullptr)); },
                         {l1.weights, l1.bias, l2.weights, l2.bias});
  }
  SUBCASE("rank-2 batches work") {
    auto l1 = init_dense(3, 4, Activation::Relu, 0.0, rng);
    auto x = Tensor::uniform({5, 3}, -1.0, 1.0, rng, false);
    auto y = dense_dropout_stack(x, {l1}, false, nullptr);
    CHECK(y->shape == std::vector<std::size_t>{5, 4});
  }
}

TEST_CASE("adam") {
  SUBCASE("zero gradient and zero weight decay is a no-op") {
    auto p = Tensor::vector({0.3, -0.7}, true);
    p->zero_grad();
    AdamState state;
    state.weight_decay = 0.0;
    adam_step({p}, state);
    CHECK(p->values[0] == 0.3);
    CHECK(p->values[1] == -0.7);
    CHECK(state.step_count == 1);
  }
  SUBCASE("first bias-corrected step moves by the learning rate") {
    auto p = Tensor::vector({0.0}, true);
    p->ensure_grad();
    p->grad[0] = 1.0;
    AdamState state;
    state.weight_decay = 0.0;
    adam_step({p}, state);
    CHECK(std::abs(p->values[0] - (-state.learning_rate)) < 1e-9);
  }
  SUBCASE("decoupled decay shrinks parameters under zero gradient") {
    auto p = Tensor::vector({1.0}, true);
    p->zero_grad();
    AdamState state;  // lr = wd = 1e-4
    adam_step({p}, state);
    CHECK(p->values[0] == doctest::Approx(1.0 - 1e-8).epsilon(1e-15));
  }
  SUBCASE("missing grads raise") {
    auto p = Tensor::vector({1.0}, true);
    AdamState state;
    CHECK_THROWS_AS(adam_step({p}, state), std::invalid_argument);
  }
  SUBCASE("step count increases by one per update") {
    auto p = Tensor::vector({1.0}, true);
    p->zero_grad();
    AdamState state;
    for (int i = 1; i <= 5; ++i) {
      adam_step({p}, state);
      CHECK(state.step_count == static_cast<std::size_t>(i));
    }
  }
}

TEST_CASE("gradient_check") {
  Rng rng(21);

  SUBCASE("linear model is exact to near machine precision") {
    auto w = Tensor::uniform({6}, -1.0, 1.0, rng);
    auto x = Tensor::uniform({6}, -2.0, 2.0, rng, false);
    auto report = gradient_check([&] { return sum(mul(w, x)); }, {w}, 1e-8, rng);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-8);
  }
  SUBCASE("small bidirectional recurrent model passes at 1e-3") {
    auto fwd = random_lstm(3, 4, rng);
    auto bwd = random_lstm(3, 4, rng);
    std::vector<TensorPtr> seq;
    for (int t = 0; t < 5; ++t) seq.push_back(Tensor::uniform({3}, -1.0, 1.0, rng, false));
    auto readout = Tensor::uniform({8}, -1.0, 1.0, rng, false);
    std::vector<TensorPtr> params = fwd.parameters();
    for (auto& p : bwd.parameters()) params.push_back(p);
    auto report = gradient_check(
        [&] { return sum(mul(bilstm_encode(fwd, bwd, seq), readout)); }, params, 1e-3, rng);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-3);
    CHECK(report.coords_checked > 0);
  }
  SUBCASE("a broken gradient is reported") {
    auto w = Tensor::uniform({4}, -1.0, 1.0, rng);
    auto x = Tensor::uniform({4}, -2.0, 2.0, rng, false);
    auto report = gradient_check(
        [&] {
          auto loss = sum(mul(w, x));
          loss->backward_fn = [] {};  // sabotage: no gradient propagation
          return loss;
        },
        {w}, 1e-3, rng);
    CHECK_FALSE(report.passed);
    CHECK_FALSE(report.failures.empty());
  }
}

TEST_CASE("parameter container round-trips") {
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "prevalens_params_test.qnt").string();
  Rng rng(31);
  NamedParams params;
  params.emplace_back("alpha.weights", Tensor::uniform({3, 4}, -2.0, 2.0, rng));
  params.emplace_back("alpha.bias", Tensor::uniform({4}, -2.0, 2.0, rng));
  params.emplace_back("beta", Tensor::scalar(0.123456789012345));
  save_params(path, params);
  auto loaded = load_params(path);
  REQUIRE(loaded.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(loaded[i].first == params[i].first);
    CHECK(loaded[i].second->shape == params[i].second->shape);
    for (std::size_t j = 0; j < params[i].second->size(); ++j) {
      CHECK(loaded[i].second->values[j] == params[i].second->values[j]);
    }
  }
  fs::remove(path);

  SUBCASE("bad magic is rejected") {
    const auto bad = (fs::temp_directory_path() / "prevalens_bad.qnt").string();
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
    CHECK_THROWS(load_params(bad));
    fs::remove(bad);
  }
}
