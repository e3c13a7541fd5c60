#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "prevalens/data.hpp"

using namespace prevalens;
namespace fs = std::filesystem;

namespace {
std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = (fs::temp_directory_path() / name).string();
  std::ofstream os(path);
  os << content;
  return path;
}
}  // namespace

TEST_CASE("load_corpus_tsv") {
  SUBCASE("two lines, balanced") {
    auto path = write_temp("prevalens_t1.tsv", "pos\tgood\nneg\tbad\n");
    auto corpus = load_corpus_tsv(path);
    CHECK(corpus.size() == 2);
    CHECK(corpus.positive_prevalence() == doctest::Approx(0.5));
    CHECK(corpus.docs()[0].id == 1);
    CHECK(corpus.docs()[0].text == "good");
    CHECK(corpus.docs()[1].label == Label::Negative);
    fs::remove(path);
  }
  SUBCASE("all positive lines") {
    auto path = write_temp("prevalens_t2.tsv", "pos\ta\nPOS\tb\nPos\tc\n");
    auto corpus = load_corpus_tsv(path);
    CHECK(corpus.positive_prevalence() == 1.0);
    fs::remove(path);
  }
  SUBCASE("missing tab names the line") {
    auto path = write_temp("prevalens_t3.tsv", "pos\ta\nneg no tab here\n");
    CHECK_THROWS_WITH_AS(load_corpus_tsv(path), doctest::Contains("line 2"), std::runtime_error);
    fs::remove(path);
  }
  SUBCASE("unknown label names the line") {
    auto path = write_temp("prevalens_t4.tsv", "maybe\ta\n");
    CHECK_THROWS_WITH_AS(load_corpus_tsv(path), doctest::Contains("line 1"), std::runtime_error);
    fs::remove(path);
  }
  SUBCASE("empty file is an error") {
    auto path = write_temp("prevalens_t5.tsv", "");
    CHECK_THROWS(load_corpus_tsv(path));
    fs::remove(path);
  }
}

TEST_CASE("hashed bag-of-words featurization") {
  SUBCASE("repeated token accumulates term frequency") {
    auto f = hash_features("good good", 64, BowScheme::Tf);
    REQUIRE(f.size() == 1);
    CHECK(f[0].second == 2.0);
  }
  SUBCASE("binary scheme caps at one") {
    auto f = hash_features("good good good", 64, BowScheme::Binary);
    REQUIRE(f.size() == 1);
    CHECK(f[0].second == 1.0);
  }
  SUBCASE("logtf is 1 + ln(count)") {
    auto f = hash_features("good good", 64, BowScheme::LogTf);
    REQUIRE(f.size() == 1);
    CHECK(f[0].second == doctest::Approx(1.0 + std::log(2.0)).epsilon(1e-12));
    CHECK(f[0].second == doctest::Approx(1.6931).epsilon(1e-4));
  }
  SUBCASE("featurization is a pure function of text") {
    auto a = hash_features("The Quick, brown FOX!", 128, BowScheme::Tf);
    auto b = hash_features("The Quick, brown FOX!", 128, BowScheme::Tf);
    CHECK(a == b);
  }
  SUBCASE("tokenization lowercases and splits on non-alphanumerics") {
    auto toks = tokenize("Good-bye, WORLD42!  ");
    REQUIRE(toks.size() == 3);
    CHECK(toks[0] == "good");
    CHECK(toks[1] == "bye");
    CHECK(toks[2] == "world42");
  }
  SUBCASE("hash_dim below 2 is rejected") {
    CHECK_THROWS_AS(hash_features("x", 1, BowScheme::Tf), std::invalid_argument);
  }
  SUBCASE("feature indices stay inside the hash space") {
    auto f = hash_features("a b c d e f g h i j k l m n o p", 8, BowScheme::Tf);
    for (const auto& [idx, w] : f) CHECK(idx < 8);
  }
}

namespace {
LabeledCorpus balanced_corpus(std::size_t n) {
  LabeledCorpus corpus;
  for (std::size_t i = 0; i < n; ++i) {
    Document d;
    d.id = static_cast<std::int64_t>(i);
    d.label = i % 2 == 0 ? Label::Positive : Label::Negative;
    corpus.add(d);
  }
  return corpus;
}
}  // namespace

TEST_CASE("split_train_val") {
  SUBCASE("stratification arithmetic at 60/40") {
    auto corpus = balanced_corpus(100);
    auto [train, val] = split_train_val(corpus, 0.6, 99);
    CHECK(train.size() == 60);
    CHECK(val.size() == 40);
    CHECK(train.positive_count() == 30);
    CHECK(val.positive_count() == 20);
  }
  SUBCASE("same seed reproduces the split") {
    auto corpus = balanced_corpus(50);
    auto [a_train, a_val] = split_train_val(corpus, 0.6, 7);
    auto [b_train, b_val] = split_train_val(corpus, 0.6, 7);
    REQUIRE(a_train.size() == b_train.size());
    for (std::size_t i = 0; i < a_train.size(); ++i) {
      CHECK(a_train.docs()[i].id == b_train.docs()[i].id);
    }
  }
  SUBCASE("partitions are disjoint and exhaustive") {
    auto corpus = balanced_corpus(101);
    auto [train, val] = split_train_val(corpus, 0.7, 3);
    std::set<std::int64_t> ids;
    for (const auto& d : train.docs()) ids.insert(d.id);
    for (const auto& d : val.docs()) ids.insert(d.id);
    CHECK(ids.size() == corpus.size());
    CHECK(train.size() + val.size() == corpus.size());
  }
  SUBCASE("tiny classes are rejected") {
    LabeledCorpus corpus;
    Document d;
    d.label = Label::Positive;
    corpus.add(d);
    d.label = Label::Negative;
    corpus.add(d);
    corpus.add(d);
    CHECK_THROWS_AS(split_train_val(corpus, 0.5, 1), std::runtime_error);
  }
}

TEST_CASE("draw_sample_at_prevalence") {
  auto pool = balanced_corpus(2000);

  SUBCASE("target 0.5 at size 500") {
    auto draw = draw_sample_at_prevalence(pool, 0.5, 500, 1);
    CHECK(draw.document_ids.size() == 500);
    std::size_t pos = 0;
    for (auto i : draw.indices)
      if (pool.docs()[i].label == Label::Positive) ++pos;
    CHECK(pos == 250);
    CHECK(draw.realized_prevalence == doctest::Approx(0.5));
  }
  SUBCASE("target 0.01 at size 500 rounds to 5 positives") {
    auto draw = draw_sample_at_prevalence(pool, 0.01, 500, 2);
    std::size_t pos = 0;
    for (auto i : draw.indices)
      if (pool.docs()[i].label == Label::Positive) ++pos;
    CHECK(pos == 5);
    CHECK(draw.indices.size() == 500);
  }
  SUBCASE("target 1.0 never touches the negative class") {
    LabeledCorpus all_pos;
    for (int i = 0; i < 50; ++i) {
      Document d;
      d.id = i;
      d.label = Label::Positive;
      all_pos.add(d);
    }
    auto draw = draw_sample_at_prevalence(all_pos, 1.0, 30, 3);
    CHECK(draw.indices.size() == 30);
    CHECK(draw.realized_prevalence == 1.0);
  }
  SUBCASE("insufficient documents name the deficit") {
    CHECK_THROWS_WITH_AS(draw_sample_at_prevalence(pool, 0.9, 2000, 4),
                         doctest::Contains("1800 positives"), std::runtime_error);
  }
  SUBCASE("draws are unique within a sample") {
    auto draw = draw_sample_at_prevalence(pool, 0.3, 800, 5);
    std::set<std::int64_t> ids(draw.document_ids.begin(), draw.document_ids.end());
    CHECK(ids.size() == draw.document_ids.size());
  }
  SUBCASE("realized prevalence is within rounding of the target") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
      const double target = rng.next_double();
      const std::size_t size = 1 + rng.next_index(300);
      if (feasible_sample_size(1000, 1000, target, size) != size) continue;
      auto draw = draw_sample_at_prevalence(pool, target, size, rng.next_u64());
      CHECK(std::abs(draw.realized_prevalence - target) <= 1.0 / static_cast<double>(size) + 1e-12);
    }
  }
  SUBCASE("same seed reproduces the draw") {
    auto a = draw_sample_at_prevalence(pool, 0.37, 200, 123);
    auto b = draw_sample_at_prevalence(pool, 0.37, 200, 123);
    CHECK(a.document_ids == b.document_ids);
  }
}

TEST_CASE("feasible_sample_size") {
  CHECK(feasible_sample_size(1000, 1000, 0.5, 500) == 500);
  CHECK(feasible_sample_size(50, 1000, 0.99, 500) == 51);   // round(51 * 0.99) = 50 positives
  CHECK(feasible_sample_size(0, 1000, 0.99, 500) == 0);
  CHECK(feasible_sample_size(0, 1000, 0.0, 500) == 500);
  CHECK(feasible_sample_size(10, 0, 1.0, 500) == 10);
}

TEST_CASE("prevalence grid") {
  const auto grid = prevalence_grid();
  REQUIRE(grid.size() == 21);
  CHECK(grid.front() == doctest::Approx(0.01));
  CHECK(grid.back() == doctest::Approx(0.99));
  CHECK(grid[5] - grid[4] == doctest::Approx(0.05));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    CHECK(std::abs(grid[i] + grid[grid.size() - 1 - i] - 1.0) < 1e-12);
  }
}

TEST_CASE("synthetic corpora") {
  SUBCASE("composition follows the requested prevalence") {
    auto corpus = synthetic_corpus(1000, 0.8, 2.0, 4, 11);
    CHECK(corpus.size() == 1000);
    CHECK(corpus.positive_count() == 800);
  }
  SUBCASE("generation is deterministic in the seed") {
    auto a = synthetic_corpus(50, 0.5, 2.0, 3, 5);
    auto b = synthetic_corpus(50, 0.5, 2.0, 3, 5);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a.docs()[i].id == b.docs()[i].id);
      CHECK(a.docs()[i].features == b.docs()[i].features);
    }
  }
  SUBCASE("bayes posterior matches the two-Gaussian-density computation") {
    SyntheticGenerator gen(2, 4.0, 17);
    const auto& u = gen.direction();
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
      Document doc;
      const double x0 = rng.uniform(-4.0, 4.0), x1 = rng.uniform(-4.0, 4.0);
      doc.features = {{0, x0}, {1, x1}};
      const double prior = rng.uniform(0.05, 0.95);
      // straight-line oracle: evaluate both Gaussian densities explicitly
      const double mu0 = 2.0 * u[0], mu1 = 2.0 * u[1];  // separation/2 = 2
      const double log_pos = -0.5 * ((x0 - mu0) * (x0 - mu0) + (x1 - mu1) * (x1 - mu1));
      const double log_neg = -0.5 * ((x0 + mu0) * (x0 + mu0) + (x1 + mu1) * (x1 + mu1));
      const double expected =
          prior * std::exp(log_pos) / (prior * std::exp(log_pos) + (1 - prior) * std::exp(log_neg));
      CHECK(gen.bayes_posterior(doc, prior) == doctest::Approx(expected).epsilon(1e-10));
    }
  }
  SUBCASE("separation zero means an uninformative posterior") {
    SyntheticGenerator gen(3, 0.0, 9);
    Document doc;
    doc.features = {{0, 1.5}, {1, -0.5}, {2, 0.25}};
    CHECK(gen.bayes_posterior(doc, 0.5) == doctest::Approx(0.5));
  }
}

TEST_CASE("synthetic corpora serialize to pseudo-text TSV plus sidecar") {
  auto corpus = synthetic_corpus(20, 0.5, 2.0, 3, 29);
  const auto tsv = (fs::temp_directory_path() / "prevalens_syn.tsv").string();
  const auto meta = (fs::temp_directory_path() / "prevalens_syn.meta").string();
  save_corpus_tsv(tsv, corpus);
  SyntheticGenerator(3, 2.0, 29).save_metadata(meta);

  auto reloaded = load_corpus_tsv(tsv);
  CHECK(reloaded.size() == corpus.size());
  CHECK(reloaded.positive_count() == corpus.positive_count());
  CHECK(reloaded.docs()[0].text.rfind("f0:", 0) == 0);

  std::ifstream is(meta);
  std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(all.find("dim: 3") != std::string::npos);
  CHECK(all.find("separation: 2") != std::string::npos);
  fs::remove(tsv);
  fs::remove(meta);
}
