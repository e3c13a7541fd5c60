#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "prevalens/gradcheck.hpp"
#include "prevalens/quanet.hpp"

using namespace prevalens;

namespace {

std::vector<ClassifierOutput> random_outputs(std::size_t n, std::size_t emb_dim, Rng& rng) {
  std::vector<ClassifierOutput> out(n);
  for (auto& o : out) {
    o.posterior_positive = rng.next_double();
    o.embedding.resize(emb_dim);
    for (auto& e : o.embedding) e = rng.uniform(-1.0, 1.0);
    o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
  }
  return out;
}

RateEstimates plain_rates() {
  RateEstimates r;
  r.tpr_hard = 0.9;
  r.fpr_hard = 0.1;
  r.tpr_soft = 0.8;
  r.fpr_soft = 0.2;
  return r;
}

QuaNetConfig tiny_config(std::size_t emb_dim) {
  QuaNetConfig cfg;
  cfg.embedding_dim = emb_dim;
  cfg.lstm_hidden = 4;
  cfg.dense_dims = {8};
  return cfg;
}

}  // namespace

TEST_CASE("build_input") {
  Rng rng(3);
  auto outputs = random_outputs(20, 3, rng);
  auto input = build_input(outputs, plain_rates());

  SUBCASE("items are sorted ascending by posterior") {
    for (std::size_t i = 1; i < input.items.size(); ++i) {
      CHECK(input.items[i - 1].posterior <= input.items[i].posterior);
    }
  }
  SUBCASE("eight statistics, each inside the unit interval") {
    CHECK(input.stats.size() == 8);
    for (double s : input.stats) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
    CHECK(input.stats[4] == 0.9);  // hard rates pass through
    CHECK(input.stats[5] == 0.1);
  }
  SUBCASE("explicit sort example") {
    std::vector<ClassifierOutput> three;
    for (double p : {0.9, 0.1, 0.5}) {
      ClassifierOutput o;
      o.posterior_positive = p;
      o.embedding = {0.0};
      o.hard_prediction = hard_label_from_posterior(p);
      three.push_back(o);
    }
    auto sorted = build_input(three, plain_rates());
    CHECK(sorted.items[0].posterior == 0.1);
    CHECK(sorted.items[1].posterior == 0.5);
    CHECK(sorted.items[2].posterior == 0.9);
  }
  SUBCASE("document permutation does not change the input") {
    auto shuffled = outputs;
    Rng perm(5);
    perm.shuffle(shuffled);
    auto a = build_input(outputs, plain_rates());
    auto b = build_input(shuffled, plain_rates());
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t i = 0; i < a.items.size(); ++i) {
      CHECK(a.items[i].posterior == b.items[i].posterior);
      CHECK(a.items[i].embedding == b.items[i].embedding);
    }
    CHECK(a.stats == b.stats);
  }
  SUBCASE("the adjusted statistics are the clamped estimates") {
    // every posterior low -> acc clamps at 0
    std::vector<ClassifierOutput> low;
    for (int i = 0; i < 10; ++i) {
      ClassifierOutput o;
      o.posterior_positive = 0.05;
      o.embedding = {0.0};
      o.hard_prediction = Label::Negative;
      low.push_back(o);
    }
    auto input = build_input(low, plain_rates());
    CHECK(input.stats[1] == 0.0);  // (0 - 0.1) / 0.8 clamped
  }
  SUBCASE("empty outputs are rejected") {
    CHECK_THROWS_AS(build_input({}, plain_rates()), std::invalid_argument);
  }
}

TEST_CASE("model construction wires the fused width") {
  Rng rng(7);
  QuaNetConfig cfg;
  cfg.embedding_dim = 16;
  cfg.lstm_hidden = 16;
  cfg.dense_dims = {128, 64};
  auto model = init_quanet(cfg, rng);
  CHECK(model.dense[0].weights->shape == std::vector<std::size_t>{128, 2 * 16 + 8});
  CHECK(model.output.weights->shape == std::vector<std::size_t>{2, 64});
  CHECK(model.fwd.input_dim == 17);
  CHECK(model.parameters().size() == 2 * 8 + 2 * 2 + 2);

  SUBCASE("paper preset dims") {
    auto paper = quanet_paper_config(100);
    CHECK(paper.fused_dim() == 136);
    CHECK(paper.dense_dims == std::vector<std::size_t>{1024, 512});
    CHECK(paper.lstm_hidden == 64);
  }
  SUBCASE("a paper-scale forward pass produces a distribution") {
    Rng paper_rng(8);
    auto paper_model = init_quanet(quanet_paper_config(10), paper_rng);
    auto outputs = random_outputs(20, 10, paper_rng);
    auto e = quanet_forward(paper_model, build_input(outputs, plain_rates()));
    CHECK(std::abs(e.p_positive + e.p_negative - 1.0) < 1e-9);
    CHECK(e.p_positive > 0.0);
  }
}

TEST_CASE("quanet forward") {
  Rng rng(11);
  auto model = init_quanet(tiny_config(3), rng);
  auto outputs = random_outputs(15, 3, rng);
  auto input = build_input(outputs, plain_rates());

  SUBCASE("softmax output is a distribution") {
    auto e = quanet_forward(model, input);
    CHECK(e.p_positive > 0.0);
    CHECK(e.p_positive < 1.0);
    CHECK(e.p_negative > 0.0);
    CHECK(std::abs(e.p_positive + e.p_negative - 1.0) < 1e-9);
    CHECK(e.method == "quanet");
  }
  SUBCASE("evaluation mode is deterministic") {
    auto a = quanet_forward(model, input);
    auto b = quanet_forward(model, input);
    CHECK(a.p_positive == b.p_positive);
  }
  SUBCASE("document permutation leaves the estimate bit-identical") {
    auto base = quanet_forward(model, input);
    Rng perm(13);
    for (int trial = 0; trial < 10; ++trial) {
      auto shuffled = outputs;
      perm.shuffle(shuffled);
      auto e = quanet_forward(model, build_input(shuffled, plain_rates()));
      CHECK(e.p_positive == base.p_positive);
    }
  }
  SUBCASE("embedding width mismatches are rejected") {
    auto bad = random_outputs(5, 7, rng);
    auto bad_input = build_input(bad, plain_rates());
    CHECK_THROWS_AS(quanet_forward(model, bad_input), std::invalid_argument);
  }
  SUBCASE("training mode needs a generator and perturbs the output") {
    CHECK_THROWS_AS(quanet_forward(model, input, true, nullptr), std::invalid_argument);
    auto eval = quanet_forward(model, input);
    Rng dropout_rng(17);
    bool any_different = false;
    for (int i = 0; i < 5; ++i) {
      auto e = quanet_forward(model, input, true, &dropout_rng);
      if (e.p_positive != eval.p_positive) any_different = true;
    }
    CHECK(any_different);
  }
}

TEST_CASE("quanet gradients match finite differences at desk dimensions") {
  Rng rng(19);
  QuaNetConfig cfg;
  cfg.embedding_dim = 16;
  cfg.lstm_hidden = 16;
  cfg.dense_dims = {128, 64};
  auto model = init_quanet(cfg, rng);
  auto outputs = random_outputs(8, 16, rng);
  auto input = build_input(outputs, plain_rates());
  auto target = Tensor::vector({0.3, 0.7});
  auto report = gradient_check(
      [&] { return mse_loss(quanet_forward_tensor(model, input, false, nullptr), target); },
      model.parameters(), 1e-3, rng, 10);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("training batches") {
  SyntheticGenerator gen(3, 4.0, 23);
  auto pool = gen.generate(600, 0.5, 1);
  BayesPosteriorClassifier clf(gen, 0.5);
  auto rates = plain_rates();

  SUBCASE("batch size is honored and targets match composition") {
    auto batch = make_training_batch(pool, clf, rates, 25, 40, 9);
    CHECK(batch.size() == 25);
    double mean_target = 0.0;
    for (const auto& ex : batch) {
      CHECK(ex.target[0] >= 0.0);
      CHECK(ex.target[0] <= 1.0);
      CHECK(ex.target[0] + ex.target[1] == doctest::Approx(1.0));
      CHECK(ex.input.items.size() == 40);
      // realized prevalence times the sample size must be integral
      const double count = ex.target[0] * 40.0;
      CHECK(std::abs(count - std::round(count)) < 1e-9);
      mean_target += ex.target[0];
    }
    mean_target /= 25.0;
    CHECK(mean_target > 0.25);
    CHECK(mean_target < 0.75);
  }
  SUBCASE("a larger batch concentrates the mean target near one half") {
    auto batch = make_training_batch(pool, clf, rates, 100, 30, 31);
    CHECK(batch.size() == 100);
    double mean_target = 0.0;
    for (const auto& ex : batch) mean_target += ex.target[0];
    mean_target /= 100.0;
    CHECK(mean_target >= 0.45);
    CHECK(mean_target <= 0.55);
  }
  SUBCASE("cached outputs agree with the classifier overload") {
    PoolOutputs cached(clf, pool);
    auto a = make_training_batch(pool, cached, rates, 10, 20, 77);
    auto b = make_training_batch(pool, clf, rates, 10, 20, 77);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].target == b[i].target);
      REQUIRE(a[i].input.items.size() == b[i].input.items.size());
      for (std::size_t j = 0; j < a[i].input.items.size(); ++j) {
        CHECK(a[i].input.items[j].posterior == b[i].input.items[j].posterior);
      }
    }
  }
  SUBCASE("oversized compositions shrink to the feasible maximum") {
    auto tiny = gen.generate(30, 0.9, 5);  // only 3 negatives
    PoolOutputs cached(clf, tiny);
    auto batch = make_training_batch(tiny, cached, rates, 10, 25, 13);
    for (const auto& ex : batch) CHECK(ex.input.items.size() <= 25);
  }
}

TEST_CASE("quanet training loop on a tiny problem") {
  SyntheticGenerator gen(3, 4.0, 29);
  auto pool = gen.generate(400, 0.5, 1);
  BayesPosteriorClassifier clf(gen, 0.5);
  LabeledCorpus rate_corpus = gen.generate(400, 0.5, 2);
  auto rates = estimate_rates(clf, rate_corpus);

  QuaNetConfig cfg = tiny_config(clf.embedding_dim());
  QuaNetTrainConfig train_cfg;
  train_cfg.batch_size = 8;
  train_cfg.max_iterations = 60;
  train_cfg.validate_every = 20;
  train_cfg.patience = 2;
  train_cfg.sample_size = 25;
  train_cfg.learning_rate = 1e-3;
  train_cfg.seed = 5;
  train_cfg.validation_samples_per_grid_point = 1;

  auto result = train_quanet(pool, clf, rates, cfg, train_cfg);

  SUBCASE("terminates within the iteration bound") {
    CHECK(result.report.iterations <= train_cfg.max_iterations);
    CHECK(!result.report.validation_history.empty());
  }
  SUBCASE("the returned snapshot is at least as good as the first checkpoint") {
    CHECK(result.report.best_validation <= result.report.validation_history.front() + 1e-12);
  }
  SUBCASE("same config and seed reproduce the model") {
    auto again = train_quanet(pool, clf, rates, cfg, train_cfg);
    auto pa = result.model.parameters();
    auto pb = again.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      CHECK(pa[i]->values == pb[i]->values);
    }
  }
  SUBCASE("end-to-end estimation") {
    auto draw = draw_sample_at_prevalence(pool, 0.7, 30, 99);
    auto docs = materialize_sample(pool, draw);
    auto e = quanet_estimate(result.model, clf, rates, docs);
    CHECK(e.p_positive >= 0.0);
    CHECK(e.p_positive <= 1.0);
    CHECK(std::abs(e.p_positive + e.p_negative - 1.0) < 1e-9);

    SUBCASE("repeated calls and document order do not matter") {
      auto again = quanet_estimate(result.model, clf, rates, docs);
      CHECK(again.p_positive == e.p_positive);
      std::reverse(docs.begin(), docs.end());
      auto reversed = quanet_estimate(result.model, clf, rates, docs);
      CHECK(reversed.p_positive == e.p_positive);
    }
  }
  SUBCASE("empty document lists are rejected") {
    CHECK_THROWS_AS(quanet_estimate(result.model, clf, rates, {}), std::invalid_argument);
  }
  SUBCASE("quantifier adapter reports its name") {
    QuaNetQuantifier q(result.model, std::make_shared<BayesPosteriorClassifier>(gen, 0.5), rates);
    auto draw = draw_sample_at_prevalence(pool, 0.4, 30, 7);
    auto docs = materialize_sample(pool, draw);
    auto e = q.estimate(docs);
    CHECK(e.method == "quanet");
  }
  SUBCASE("model round-trips through the parameter container") {
    namespace fs = std::filesystem;
    const auto params_path = (fs::temp_directory_path() / "prevalens_qn.qnt").string();
    const auto config_path = (fs::temp_directory_path() / "prevalens_qn.meta").string();
    save_quanet(params_path, config_path, result.model);
    auto loaded = load_quanet(params_path, config_path);
    CHECK(loaded.config.lstm_hidden == cfg.lstm_hidden);
    CHECK(loaded.config.dense_dims == cfg.dense_dims);
    auto pa = result.model.parameters();
    auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->values == pb[i]->values);
    auto draw = draw_sample_at_prevalence(pool, 0.6, 30, 15);
    auto docs = materialize_sample(pool, draw);
    CHECK(quanet_estimate(loaded, clf, rates, docs).p_positive ==
          quanet_estimate(result.model, clf, rates, docs).p_positive);
    fs::remove(params_path);
    fs::remove(config_path);
  }
  SUBCASE("an empty pool class is rejected") {
    auto all_pos = gen.generate(50, 1.0, 9);
    CHECK_THROWS_AS(train_quanet(all_pos, clf, rates, cfg, train_cfg), std::runtime_error);
  }
  SUBCASE("classifier/config embedding mismatch is rejected") {
    QuaNetConfig bad = cfg;
    bad.embedding_dim = 5;
    CHECK_THROWS_AS(train_quanet(pool, clf, rates, bad, train_cfg), std::invalid_argument);
  }
}
