#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prevalens/quantifiers.hpp"

namespace prevalens {

struct QuaNetItem {
  double posterior = 0.0;
  std::vector<double> embedding;
};

// Network input for one sample: items sorted ascending by posterior plus the
// eight aggregate statistics
// [cc, acc, pcc, pacc, tpr_hard, fpr_hard, tpr_soft, fpr_soft].
struct QuaNetInput {
  std::vector<QuaNetItem> items;
  std::array<double, 8> stats{};
};

struct QuaNetConfig {
  std::size_t embedding_dim = 16;  // must match the classifier
  std::size_t lstm_hidden = 16;
  std::vector<std::size_t> dense_dims{128, 64};
  double dropout = 0.5;

  std::size_t sequence_item_dim() const { return 1 + embedding_dim; }
  std::size_t fused_dim() const { return 2 * lstm_hidden + 8; }
};

// Paper-scale preset: 64 LSTM units, 1024/512 dense stack.
QuaNetConfig quanet_paper_config(std::size_t embedding_dim);

struct QuaNetModel {
  QuaNetConfig config;
  LstmParams fwd, bwd;
  std::vector<DenseLayer> dense;  // relu + dropout layers
  DenseLayer output;              // (2, last dense dim); softmax applied in the forward pass

  std::vector<TensorPtr> parameters() const;
  NamedParams named_parameters() const;
};

QuaNetModel init_quanet(const QuaNetConfig& config, Rng& rng);

void save_quanet(const std::string& params_path, const std::string& config_path,
                 const QuaNetModel& model);
QuaNetModel load_quanet(const std::string& params_path, const std::string& config_path);

// Computes the four classify-and-count statistics (adjusted ones use the
// supplied rates, clamped), sorts items ascending by posterior (stable), and
// assembles the 8-stat vector.
QuaNetInput build_input(std::span<const ClassifierOutput> outputs, const RateEstimates& rates);

// biLSTM over [posterior ; embedding] items -> concat with stats -> dense
// stack -> size-2 softmax. rng is only needed when training (dropout).
PrevalenceEstimate quanet_forward(const QuaNetModel& model, const QuaNetInput& input,
                                  bool training = false, Rng* rng = nullptr);
TensorPtr quanet_forward_tensor(const QuaNetModel& model, const QuaNetInput& input, bool training,
                                Rng* rng);

struct QuaNetTrainConfig {
  std::size_t batch_size = 100;
  std::size_t max_iterations = 20000;
  std::size_t validate_every = 100;
  std::size_t patience = 20;
  std::size_t sample_size = 500;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  std::size_t validation_samples_per_grid_point = 5;
};

struct QuaNetTrainExample {
  QuaNetInput input;
  std::array<double, 2> target;  // [p, 1-p] of the realized prevalence
};

// Classifier outputs for every pool document, index-aligned with the pool.
class PoolOutputs {
 public:
  PoolOutputs(const Classifier& classifier, const LabeledCorpus& pool);
  const ClassifierOutput& at(std::size_t pool_index) const { return outputs_[pool_index]; }
  std::vector<ClassifierOutput> gather(const SampleDraw& draw) const;

 private:
  std::vector<ClassifierOutput> outputs_;
};

// Draws batch_size prevalence-controlled samples with target prevalences
// uniform on [0.01, 0.99]; each sample pairs a QuaNetInput with its realized
// prevalence. Samples whose composition the pool cannot realize are reduced
// to the feasible maximum size.
std::vector<QuaNetTrainExample> make_training_batch(const LabeledCorpus& pool,
                                                    const PoolOutputs& outputs,
                                                    const RateEstimates& rates,
                                                    std::size_t batch_size,
                                                    std::size_t sample_size, std::uint64_t seed);
std::vector<QuaNetTrainExample> make_training_batch(const LabeledCorpus& pool,
                                                    const Classifier& classifier,
                                                    const RateEstimates& rates,
                                                    std::size_t batch_size,
                                                    std::size_t sample_size, std::uint64_t seed);

struct QuaNetTrainResult {
  QuaNetModel model;
  TrainReport report;
};

// Adam on the MSE between predicted and true distribution 2-vectors.
// Early stopping validates on a fixed, seed-determined set of grid samples
// (21 prevalences x validation_samples_per_grid_point).
QuaNetTrainResult train_quanet(const LabeledCorpus& pool, const Classifier& classifier,
                               const RateEstimates& rates, const QuaNetConfig& config,
                               const QuaNetTrainConfig& train_config);

// End-to-end inference: classify docs, build the input, run the network in
// evaluation mode.
PrevalenceEstimate quanet_estimate(const QuaNetModel& model, const Classifier& classifier,
                                   const RateEstimates& rates, std::span<const Document> docs);

class QuaNetQuantifier : public Quantifier {
 public:
  QuaNetQuantifier(QuaNetModel model, std::shared_ptr<const Classifier> classifier,
                   RateEstimates rates, std::string name = "quanet")
      : model_(std::move(model)), classifier_(std::move(classifier)), rates_(rates),
        name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  QuaNetModel model_;
  std::shared_ptr<const Classifier> classifier_;
  RateEstimates rates_;
  std::string name_;
};

}  // namespace prevalens
