#include "prevalens/quanet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace prevalens {

QuaNetConfig quanet_paper_config(std::size_t embedding_dim) {
  QuaNetConfig cfg;
  cfg.embedding_dim = embedding_dim;
  cfg.lstm_hidden = 64;
  cfg.dense_dims = {1024, 512};
  cfg.dropout = 0.5;
  return cfg;
}

std::vector<TensorPtr> QuaNetModel::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& p : fwd.parameters()) out.push_back(p);
  for (const auto& p : bwd.parameters()) out.push_back(p);
  for (const auto& l : dense) {
    out.push_back(l.weights);
    out.push_back(l.bias);
  }
  out.push_back(output.weights);
  out.push_back(output.bias);
  return out;
}

NamedParams QuaNetModel::named_parameters() const {
  NamedParams out;
  const char* gate_names[] = {"w_input", "w_forget", "w_output", "w_candidate",
                              "b_input", "b_forget", "b_output", "b_candidate"};
  auto add_lstm = [&](const char* prefix, const LstmParams& p) {
    auto params = p.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.emplace_back(std::string("quanet.") + prefix + "." + gate_names[i], params[i]);
    }
  };
  add_lstm("lstm_fwd", fwd);
  add_lstm("lstm_bwd", bwd);
  for (std::size_t i = 0; i < dense.size(); ++i) {
    out.emplace_back("quanet.dense" + std::to_string(i + 1) + ".weights", dense[i].weights);
    out.emplace_back("quanet.dense" + std::to_string(i + 1) + ".bias", dense[i].bias);
  }
  out.emplace_back("quanet.out.weights", output.weights);
  out.emplace_back("quanet.out.bias", output.bias);
  return out;
}

QuaNetModel init_quanet(const QuaNetConfig& config, Rng& rng) {
  if (config.dense_dims.empty()) {
    throw std::invalid_argument("init_quanet: at least one dense layer required");
  }
  QuaNetModel model;
  model.config = config;
  model.fwd = init_lstm(config.sequence_item_dim(), config.lstm_hidden, rng);
  model.bwd = init_lstm(config.sequence_item_dim(), config.lstm_hidden, rng);
  std::size_t in_dim = config.fused_dim();
  for (auto out_dim : config.dense_dims) {
    model.dense.push_back(init_dense(in_dim, out_dim, Activation::Relu, config.dropout, rng));
    in_dim = out_dim;
  }
  model.output = init_dense(in_dim, 2, Activation::Identity, 0.0, rng);
  return model;
}

void save_quanet(const std::string& params_path, const std::string& config_path,
                 const QuaNetModel& model) {
  save_params(params_path, model.named_parameters());
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("embedding_dim", std::to_string(model.config.embedding_dim));
  kv.emplace_back("lstm_hidden", std::to_string(model.config.lstm_hidden));
  std::string dims;
  for (auto d : model.config.dense_dims) dims += (dims.empty() ? "" : ",") + std::to_string(d);
  kv.emplace_back("dense_dims", dims);
  kv.emplace_back("dropout", std::to_string(model.config.dropout));
  save_kv(config_path, kv);
}

QuaNetModel load_quanet(const std::string& params_path, const std::string& config_path) {
  QuaNetConfig config;
  config.dense_dims.clear();
  for (const auto& [k, v] : load_kv(config_path)) {
    if (k == "embedding_dim") config.embedding_dim = std::stoul(v);
    if (k == "lstm_hidden") config.lstm_hidden = std::stoul(v);
    if (k == "dropout") config.dropout = std::stod(v);
    if (k == "dense_dims") {
      std::size_t start = 0;
      while (start < v.size()) {
        auto comma = v.find(',', start);
        if (comma == std::string::npos) comma = v.size();
        config.dense_dims.push_back(std::stoul(v.substr(start, comma - start)));
        start = comma + 1;
      }
    }
  }
  Rng rng(0);
  QuaNetModel model = init_quanet(config, rng);
  auto loaded = load_params(params_path);
  auto expected = model.named_parameters();
  if (loaded.size() != expected.size()) {
    throw std::runtime_error(params_path + ": expected " + std::to_string(expected.size()) +
                             " parameters, found " + std::to_string(loaded.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (loaded[i].first != expected[i].first ||
        loaded[i].second->shape != expected[i].second->shape) {
      throw std::runtime_error(params_path + ": parameter mismatch at " + loaded[i].first);
    }
    expected[i].second->values = loaded[i].second->values;
  }
  return model;
}

QuaNetInput build_input(std::span<const ClassifierOutput> outputs, const RateEstimates& rates) {
  if (outputs.empty()) throw std::invalid_argument("build_input: empty outputs");
  // The statistics are computed on the sorted copy so that the whole input
  // is a pure function of the output multiset; summing posteriors in
  // document order would leak the permutation through rounding.
  std::vector<ClassifierOutput> sorted(outputs.begin(), outputs.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.posterior_positive < b.posterior_positive;
  });
  QuaNetInput input;
  std::span<const ClassifierOutput> view(sorted);
  input.stats = {cc(view).p_positive,           acc(view, rates).p_positive,
                 pcc(view).p_positive,          pacc(view, rates).p_positive,
                 rates.tpr_hard, rates.fpr_hard, rates.tpr_soft, rates.fpr_soft};
  input.items.reserve(sorted.size());
  for (auto& o : sorted) input.items.push_back({o.posterior_positive, std::move(o.embedding)});
  return input;
}

TensorPtr quanet_forward_tensor(const QuaNetModel& model, const QuaNetInput& input, bool training,
                                Rng* rng) {
  if (input.items.empty()) throw std::invalid_argument("quanet_forward: empty input");
  const auto& cfg = model.config;
  std::vector<TensorPtr> sequence;
  sequence.reserve(input.items.size());
  for (const auto& item : input.items) {
    if (item.embedding.size() != cfg.embedding_dim) {
      throw std::invalid_argument("quanet_forward: item embedding has length " +
                                  std::to_string(item.embedding.size()) + ", model expects " +
                                  std::to_string(cfg.embedding_dim));
    }
    std::vector<double> v;
    v.reserve(cfg.sequence_item_dim());
    v.push_back(item.posterior);
    v.insert(v.end(), item.embedding.begin(), item.embedding.end());
    sequence.push_back(Tensor::vector(std::move(v)));
  }
  auto encoded = bilstm_encode(model.fwd, model.bwd, sequence);
  auto stats = Tensor::vector(std::vector<double>(input.stats.begin(), input.stats.end()));
  auto fused = concat({encoded, stats});
  auto refined = dense_dropout_stack(fused, model.dense, training, rng);
  return softmax(dense_dropout_stack(refined, {model.output}, training, rng));
}

PrevalenceEstimate quanet_forward(const QuaNetModel& model, const QuaNetInput& input,
                                  bool training, Rng* rng) {
  auto probs = quanet_forward_tensor(model, input, training, rng);
  auto estimate = make_estimate(probs->values[0], "quanet");
  estimate.p_negative = probs->values[1];
  release_graph(probs);
  return estimate;
}

PoolOutputs::PoolOutputs(const Classifier& classifier, const LabeledCorpus& pool)
    : outputs_(classifier.predict_corpus(pool)) {}

std::vector<ClassifierOutput> PoolOutputs::gather(const SampleDraw& draw) const {
  std::vector<ClassifierOutput> out;
  out.reserve(draw.indices.size());
  for (auto i : draw.indices) out.push_back(outputs_[i]);
  return out;
}

namespace {

SampleDraw draw_feasible(const LabeledCorpus& pool, std::size_t pool_pos, std::size_t pool_neg,
                         double target, std::size_t sample_size, std::uint64_t seed) {
  const std::size_t feasible = feasible_sample_size(pool_pos, pool_neg, target, sample_size);
  if (feasible == 0) {
    throw std::runtime_error("pool cannot realize prevalence " + std::to_string(target) +
                             ": a class is empty");
  }
  auto draw = draw_sample_at_prevalence(pool, target, feasible, seed);
  draw.size_reduced = feasible != sample_size;
  return draw;
}

QuaNetTrainExample example_from_draw(const PoolOutputs& outputs,
                                     const RateEstimates& rates, const SampleDraw& draw) {
  QuaNetTrainExample ex;
  ex.input = build_input(outputs.gather(draw), rates);
  ex.target = {draw.realized_prevalence, 1.0 - draw.realized_prevalence};
  return ex;
}

}  // namespace

std::vector<QuaNetTrainExample> make_training_batch(const LabeledCorpus& pool,
                                                    const PoolOutputs& outputs,
                                                    const RateEstimates& rates,
                                                    std::size_t batch_size,
                                                    std::size_t sample_size, std::uint64_t seed) {
  const std::size_t pool_pos = pool.positive_count();
  const std::size_t pool_neg = pool.size() - pool_pos;
  Rng rng(mix_seed(seed, 0xba7c));
  std::vector<QuaNetTrainExample> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const double target = rng.uniform(0.01, 0.99);
    const auto draw =
        draw_feasible(pool, pool_pos, pool_neg, target, sample_size, rng.next_u64());
    batch.push_back(example_from_draw(outputs, rates, draw));
  }
  return batch;
}

std::vector<QuaNetTrainExample> make_training_batch(const LabeledCorpus& pool,
                                                    const Classifier& classifier,
                                                    const RateEstimates& rates,
                                                    std::size_t batch_size,
                                                    std::size_t sample_size, std::uint64_t seed) {
  PoolOutputs outputs(classifier, pool);
  return make_training_batch(pool, outputs, rates, batch_size, sample_size, seed);
}

QuaNetTrainResult train_quanet(const LabeledCorpus& pool, const Classifier& classifier,
                               const RateEstimates& rates, const QuaNetConfig& config,
                               const QuaNetTrainConfig& train_config) {
  const std::size_t pool_pos = pool.positive_count();
  const std::size_t pool_neg = pool.size() - pool_pos;
  if (pool_pos == 0 || pool_neg == 0) {
    throw std::runtime_error("train_quanet: pool has an empty class");
  }
  if (config.embedding_dim != classifier.embedding_dim()) {
    throw std::invalid_argument("train_quanet: config embedding_dim " +
                                std::to_string(config.embedding_dim) +
                                " does not match classifier embedding_dim " +
                                std::to_string(classifier.embedding_dim()));
  }

  Rng master(mix_seed(train_config.seed, 0x9a7e7));
  Rng init_rng = master.fork(1);
  Rng dropout_rng = master.fork(2);
  const std::uint64_t batch_stream = master.next_u64();
  const std::uint64_t validation_stream = master.next_u64();

  QuaNetTrainResult result;
  result.model = init_quanet(config, init_rng);
  auto params = result.model.parameters();

  PoolOutputs outputs(classifier, pool);

  // fixed validation set: grid prevalences x per-point samples
  std::vector<QuaNetTrainExample> validation;
  {
    const auto grid = prevalence_grid();
    for (std::size_t g = 0; g < grid.size(); ++g) {
      for (std::size_t s = 0; s < train_config.validation_samples_per_grid_point; ++s) {
        const auto draw = draw_feasible(pool, pool_pos, pool_neg, grid[g],
                                        train_config.sample_size,
                                        mix_seed(validation_stream, g * 1000 + s));
        validation.push_back(example_from_draw(outputs, rates, draw));
      }
    }
  }

  AdamState adam;
  adam.learning_rate = train_config.learning_rate;
  adam.weight_decay = train_config.weight_decay;

  TrainControl control;
  control.batch_size = train_config.batch_size;
  control.max_iterations = train_config.max_iterations;
  control.validate_every = train_config.validate_every;
  control.patience = train_config.patience;
  control.learning_rate = train_config.learning_rate;
  control.weight_decay = train_config.weight_decay;

  std::vector<std::vector<double>> best;
  best.reserve(params.size());
  for (const auto& p : params) best.push_back(p->values);

  const double inv_batch = 1.0 / static_cast<double>(train_config.batch_size);
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t bad_validations = 0;
  TrainReport report;

  auto validate = [&] {
    double total = 0.0;
    for (const auto& ex : validation) {
      auto probs = quanet_forward_tensor(result.model, ex.input, false, nullptr);
      const double d0 = probs->values[0] - ex.target[0];
      const double d1 = probs->values[1] - ex.target[1];
      total += (d0 * d0 + d1 * d1) / 2.0;
      release_graph(probs);
    }
    return total / static_cast<double>(validation.size());
  };

  for (std::size_t iter = 1; iter <= train_config.max_iterations; ++iter) {
    auto batch = make_training_batch(pool, outputs, rates, train_config.batch_size,
                                     train_config.sample_size, mix_seed(batch_stream, iter));
    zero_grads(params);
    for (const auto& ex : batch) {
      auto probs = quanet_forward_tensor(result.model, ex.input, true, &dropout_rng);
      auto target = Tensor::vector({ex.target[0], ex.target[1]});
      backward(scale(mse_loss(probs, target), inv_batch));
    }
    adam_step(params, adam);
    report.iterations = iter;

    if (iter % train_config.validate_every == 0) {
      const double score = validate();
      report.validation_history.push_back(score);
      if (score < best_score) {
        best_score = score;
        bad_validations = 0;
        for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i]->values;
      } else if (++bad_validations >= train_config.patience) {
        break;
      }
    }
  }
  report.best_validation = best_score;
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = best[i];
  result.report = std::move(report);
  return result;
}

PrevalenceEstimate quanet_estimate(const QuaNetModel& model, const Classifier& classifier,
                                   const RateEstimates& rates, std::span<const Document> docs) {
  if (docs.empty()) throw std::invalid_argument("quanet_estimate: empty document list");
  return quanet_forward(model, build_input(classifier.predict(docs), rates), false, nullptr);
}

PrevalenceEstimate QuaNetQuantifier::estimate(std::span<const Document> docs) const {
  auto e = quanet_estimate(model_, *classifier_, rates_, docs);
  e.method = name_;
  return e;
}

}  // namespace prevalens
