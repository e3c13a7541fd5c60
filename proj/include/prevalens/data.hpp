#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prevalens/rng.hpp"

namespace prevalens {

enum class Label { Positive, Negative, Unknown };

// Sparse feature vector, sorted by feature index.
using SparseVec = std::vector<std::pair<std::uint32_t, double>>;

struct Document {
  std::int64_t id = 0;
  std::string text;
  SparseVec features;
  Label label = Label::Unknown;
};

class LabeledCorpus {
 public:
  LabeledCorpus() = default;
  explicit LabeledCorpus(std::vector<Document> docs);

  void add(Document doc);
  const std::vector<Document>& docs() const { return docs_; }
  std::vector<Document>& mutable_docs();  // invalidates the prevalence cache

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  std::size_t positive_count() const;
  double positive_prevalence() const;
  std::vector<std::size_t> indices_of(Label label) const;

 private:
  void recount() const;
  std::vector<Document> docs_;
  mutable std::size_t positive_count_ = 0;
  mutable bool dirty_ = false;
};

// One prevalence-controlled sample drawn from a pool.
struct SampleDraw {
  std::vector<std::int64_t> document_ids;
  std::vector<std::size_t> indices;  // positions in the source pool
  double target_prevalence = 0.0;
  double realized_prevalence = 0.0;
  std::size_t sample_size = 0;
  bool size_reduced = false;  // set when the pool forced a smaller sample
};

// ---- ingestion & featurization ----

// Lines of "<label>\t<text>" with label in {pos, neg}, case-insensitive.
// Document ids are 1-based line numbers.
LabeledCorpus load_corpus_tsv(const std::string& path);
void save_corpus_tsv(const std::string& path, const LabeledCorpus& corpus);

enum class BowScheme { Binary, Tf, LogTf };

BowScheme bow_scheme_from_string(const std::string& s);
std::string to_string(BowScheme s);

// Lowercases, splits on non-alphanumeric boundaries, hashes tokens into
// hash_dim buckets (FNV-1a 64, modulo) and aggregates per scheme
// (logtf = 1 + ln(count)). Pure function of (text, hash_dim, scheme).
void featurize_hashed_bow(LabeledCorpus& corpus, std::size_t hash_dim, BowScheme scheme);
SparseVec hash_features(const std::string& text, std::size_t hash_dim, BowScheme scheme);
std::vector<std::string> tokenize(const std::string& text);

// ---- splits & sampling ----

// Stratified random split; class proportions preserved within one document
// per class. Throws if a class has fewer than 2 documents.
std::pair<LabeledCorpus, LabeledCorpus> split_train_val(const LabeledCorpus& corpus,
                                                        double train_fraction,
                                                        std::uint64_t seed);

// Draws round(target*size) positives (round half up) and the complement of
// negatives, uniformly without replacement. Throws, naming the deficit, when
// the pool lacks documents of either class.
SampleDraw draw_sample_at_prevalence(const LabeledCorpus& pool, double target_prevalence,
                                     std::size_t sample_size, std::uint64_t seed);

// Largest n <= requested for which the pool can realize the target
// prevalence; 0 when a needed class is empty.
std::size_t feasible_sample_size(std::size_t pool_positives, std::size_t pool_negatives,
                                 double target_prevalence, std::size_t requested);

std::vector<Document> materialize_sample(const LabeledCorpus& pool, const SampleDraw& draw);

// {0.01, 0.05, 0.10, ..., 0.90, 0.95, 0.99}: 21 values.
std::vector<double> prevalence_grid();

// ---- synthetic data ----

// Two unit-covariance Gaussian clusters with means at +/-(separation/2)
// along a seed-determined random unit direction. Bayes-optimal posteriors
// are available in closed form for oracle tests.
class SyntheticGenerator {
 public:
  SyntheticGenerator(std::size_t dim, double separation, std::uint64_t seed);

  LabeledCorpus generate(std::size_t n, double positive_prevalence, std::uint64_t seed) const;

  // Pr(Positive | x) under the generative model and the given class prior.
  double bayes_posterior(const Document& doc, double positive_prior) const;

  std::size_t dim() const { return dim_; }
  double separation() const { return separation_; }
  const std::vector<double>& direction() const { return direction_; }

  // "key: value" sidecar recording the generator parameters
  void save_metadata(const std::string& path) const;

 private:
  std::size_t dim_;
  double separation_;
  std::uint64_t seed_;
  std::vector<double> direction_;  // unit vector
};

LabeledCorpus synthetic_corpus(std::size_t n, double positive_prevalence, double separation,
                               std::size_t dim, std::uint64_t seed);

std::size_t round_half_up(double x);

}  // namespace prevalens
