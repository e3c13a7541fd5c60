#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prevalens/data.hpp"
#include "prevalens/layers.hpp"
#include "prevalens/optim.hpp"
#include "prevalens/params_io.hpp"

namespace prevalens {

// The sole interface between any classifier and any quantifier: a posterior
// for the positive class plus a dense document representation.
struct ClassifierOutput {
  double posterior_positive = 0.0;
  std::vector<double> embedding;
  Label hard_prediction = Label::Unknown;
};

// threshold 0.5; ties go to Positive
inline Label hard_label_from_posterior(double p) {
  return p >= 0.5 ? Label::Positive : Label::Negative;
}

class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::vector<ClassifierOutput> predict(std::span<const Document> docs) const = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual std::string name() const = 0;

  std::vector<ClassifierOutput> predict_corpus(const LabeledCorpus& corpus) const {
    return predict(std::span<const Document>(corpus.docs()));
  }
};

// Shared iterate/validate/early-stop settings.
struct TrainControl {
  std::size_t batch_size = 100;
  std::size_t max_iterations = 20000;
  std::size_t validate_every = 100;
  std::size_t patience = 20;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
};

struct TrainReport {
  std::vector<double> validation_history;
  double best_validation = 0.0;
  std::size_t iterations = 0;
};

// ---- MLP over (hashed or synthetic) feature vectors ----

struct MlpConfig {
  std::size_t input_dim = 0;
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 16;  // exported as the document embedding
  double dropout = 0.5;
  double validation_fraction = 0.2;
  TrainControl train;
};

class MlpClassifier : public Classifier {
 public:
  MlpClassifier(MlpConfig config, Rng& rng);

  std::vector<ClassifierOutput> predict(std::span<const Document> docs) const override;
  std::size_t embedding_dim() const override { return config_.hidden2; }
  std::string name() const override { return "mlp"; }

  std::vector<TensorPtr> parameters() const;
  NamedParams named_parameters() const;
  const MlpConfig& config() const { return config_; }
  const TrainReport& train_report() const { return report_; }

  friend std::unique_ptr<MlpClassifier> train_mlp_classifier(const LabeledCorpus& train,
                                                             const MlpConfig& config,
                                                             std::uint64_t seed);

 private:
  MlpConfig config_;
  std::vector<DenseLayer> hidden_;  // two relu+dropout layers
  DenseLayer out_;                  // (2, hidden2), identity; softmax applied after
  TrainReport report_;
};

// Adam + MSE against one-hot targets, early-stopped on an internal
// stratified validation split; returns the best-validation snapshot.
std::unique_ptr<MlpClassifier> train_mlp_classifier(const LabeledCorpus& train,
                                                    const MlpConfig& config, std::uint64_t seed);

// ---- Multinomial naive Bayes ----

struct MnbModel {
  double alpha = 1.0;
  std::size_t vocab_size = 0;
  double log_prior_positive = 0.0;
  double log_prior_negative = 0.0;
  std::vector<double> log_likelihood_positive;  // length vocab_size
  std::vector<double> log_likelihood_negative;
};

// likelihood(f|c) = (count(f,c) + alpha) / (total(c) + alpha * vocab_size)
MnbModel train_mnb(const LabeledCorpus& train, double alpha, std::size_t vocab_size);

void save_mnb(const std::string& path, const MnbModel& model);
MnbModel load_mnb(const std::string& path);

class MnbClassifier : public Classifier {
 public:
  // embedding = normalized per-class log-likelihood pair, zero-padded
  MnbClassifier(MnbModel model, std::size_t embedding_dim = 2);

  std::vector<ClassifierOutput> predict(std::span<const Document> docs) const override;
  std::size_t embedding_dim() const override { return embedding_dim_; }
  std::string name() const override { return "mnb"; }
  const MnbModel& model() const { return model_; }

 private:
  MnbModel model_;
  std::size_t embedding_dim_;
};

// ---- Synthetic oracle with controllable hard rates ----

struct OracleConfig {
  double tpr_target = 0.9;
  double fpr_target = 0.1;
  std::uint64_t noise_seed = 0;
};

// Emits posteriors from the true labels: a document is "detected"
// (posterior ~ U[0.5,1)) with probability tpr for positives and fpr for
// negatives, else posterior ~ U[0,0.5). Deterministic per (seed, doc id).
class OracleClassifier : public Classifier {
 public:
  explicit OracleClassifier(OracleConfig config) : config_(config) {}

  std::vector<ClassifierOutput> predict(std::span<const Document> docs) const override;
  std::size_t embedding_dim() const override { return 2; }
  std::string name() const override { return "oracle"; }
  const OracleConfig& config() const { return config_; }

 private:
  OracleConfig config_;
};

std::vector<ClassifierOutput> oracle_predict(const OracleClassifier& oracle,
                                             std::span<const Document> docs);

// ---- Exact generative posteriors for synthetic corpora ----

class BayesPosteriorClassifier : public Classifier {
 public:
  BayesPosteriorClassifier(SyntheticGenerator generator, double positive_prior)
      : generator_(std::move(generator)), prior_(positive_prior) {}

  std::vector<ClassifierOutput> predict(std::span<const Document> docs) const override;
  std::size_t embedding_dim() const override { return 2; }
  std::string name() const override { return "bayes"; }

 private:
  SyntheticGenerator generator_;
  double prior_;
};

// ---- LSTM text classifier (word embeddings -> LSTM -> dense stack) ----

struct LstmClassifierConfig {
  std::size_t vocab_buckets = 2000;  // hashed embedding-table rows
  std::size_t word_embedding_dim = 100;
  std::size_t lstm_hidden = 128;
  std::size_t dense1 = 1024;
  std::size_t dense2 = 100;  // exported as the document embedding
  double dropout = 0.5;
  std::size_t max_tokens = 400;
  double validation_fraction = 0.2;
  TrainControl train;
};

class LstmTextClassifier : public Classifier {
 public:
  LstmTextClassifier(LstmClassifierConfig config, Rng& rng);

  std::vector<ClassifierOutput> predict(std::span<const Document> docs) const override;
  std::size_t embedding_dim() const override { return config_.dense2; }
  std::string name() const override { return "lstm"; }

  std::vector<TensorPtr> parameters() const;
  NamedParams named_parameters() const;
  const TrainReport& train_report() const { return report_; }

  friend std::unique_ptr<LstmTextClassifier> train_lstm_classifier(
      const LabeledCorpus& train, const LstmClassifierConfig& config, std::uint64_t seed);

 private:
  TensorPtr encode(const Document& doc, bool training, Rng* rng, TensorPtr* embedding_out) const;

  LstmClassifierConfig config_;
  TensorPtr word_embeddings_;  // (vocab_buckets, word_embedding_dim)
  LstmParams lstm_;
  std::vector<DenseLayer> hidden_;
  DenseLayer out_;
  TrainReport report_;
};

std::unique_ptr<LstmTextClassifier> train_lstm_classifier(const LabeledCorpus& train,
                                                          const LstmClassifierConfig& config,
                                                          std::uint64_t seed);

// ---- shared helpers ----

// index 0 is the positive class everywhere
std::array<double, 2> one_hot(Label label);

std::vector<Label> labels_of(std::span<const Document> docs);

double accuracy(const Classifier& classifier, const LabeledCorpus& corpus);

void save_classifier_params(const std::string& path, const Classifier& classifier);

}  // namespace prevalens
