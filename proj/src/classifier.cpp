#include "prevalens/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace prevalens {

std::array<double, 2> one_hot(Label label) {
  if (label == Label::Positive) return {1.0, 0.0};
  if (label == Label::Negative) return {0.0, 1.0};
  throw std::invalid_argument("one_hot: unlabeled document");
}

std::vector<Label> labels_of(std::span<const Document> docs) {
  std::vector<Label> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(d.label);
  return out;
}

double accuracy(const Classifier& classifier, const LabeledCorpus& corpus) {
  const auto outputs = classifier.predict_corpus(corpus);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].hard_prediction == corpus.docs()[i].label) ++hits;
  }
  return corpus.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(corpus.size());
}

namespace {

// Generic iterate / validate / keep-best / stop-on-patience loop.
TrainReport run_early_stopped(const TrainControl& control,
                              const std::function<void(std::size_t)>& train_step,
                              const std::function<double()>& validate,
                              const std::function<void()>& snapshot) {
  TrainReport report;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_validations = 0;
  for (std::size_t iter = 1; iter <= control.max_iterations; ++iter) {
    train_step(iter);
    report.iterations = iter;
    if (iter % control.validate_every == 0) {
      const double score = validate();
      report.validation_history.push_back(score);
      if (score < best) {
        best = score;
        bad_validations = 0;
        snapshot();
      } else if (++bad_validations >= control.patience) {
        break;
      }
    }
  }
  report.best_validation = best;
  return report;
}

std::vector<std::vector<double>> copy_values(const std::vector<TensorPtr>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->values);
  return out;
}

void restore_values(const std::vector<TensorPtr>& params,
                    const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->values = saved[i];
}

// dense (n_docs, input_dim) matrix from sparse features
TensorPtr dense_matrix(std::span<const Document> docs, std::size_t input_dim) {
  std::vector<double> values(docs.size() * input_dim, 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& [idx, w] : docs[i].features) {
      if (idx >= input_dim) {
        throw std::invalid_argument("feature index " + std::to_string(idx) +
                                    " exceeds classifier input dimension " +
                                    std::to_string(input_dim));
      }
      values[i * input_dim + idx] = w;
    }
  }
  return Tensor::create({docs.size(), input_dim}, std::move(values));
}

TensorPtr one_hot_matrix(std::span<const Document> docs) {
  std::vector<double> values(docs.size() * 2, 0.0);
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto t = one_hot(docs[i].label);
    values[i * 2] = t[0];
    values[i * 2 + 1] = t[1];
  }
  return Tensor::create({docs.size(), 2}, std::move(values));
}

std::vector<Document> sample_batch(const LabeledCorpus& corpus, std::size_t batch_size, Rng& rng) {
  std::vector<Document> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    batch.push_back(corpus.docs()[rng.next_index(corpus.size())]);
  }
  return batch;
}

}  // namespace

// ---- MLP ----

MlpClassifier::MlpClassifier(MlpConfig config, Rng& rng) : config_(config) {
  if (config_.input_dim == 0) throw std::invalid_argument("MlpClassifier: input_dim must be set");
  hidden_.push_back(
      init_dense(config_.input_dim, config_.hidden1, Activation::Relu, config_.dropout, rng));
  hidden_.push_back(
      init_dense(config_.hidden1, config_.hidden2, Activation::Relu, config_.dropout, rng));
  out_ = init_dense(config_.hidden2, 2, Activation::Identity, 0.0, rng);
}

std::vector<TensorPtr> MlpClassifier::parameters() const {
  std::vector<TensorPtr> out;
  for (const auto& l : hidden_) {
    out.push_back(l.weights);
    out.push_back(l.bias);
  }
  out.push_back(out_.weights);
  out.push_back(out_.bias);
  return out;
}

NamedParams MlpClassifier::named_parameters() const {
  NamedParams out;
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    out.emplace_back("mlp.hidden" + std::to_string(i + 1) + ".weights", hidden_[i].weights);
    out.emplace_back("mlp.hidden" + std::to_string(i + 1) + ".bias", hidden_[i].bias);
  }
  out.emplace_back("mlp.out.weights", out_.weights);
  out.emplace_back("mlp.out.bias", out_.bias);
  return out;
}

std::vector<ClassifierOutput> MlpClassifier::predict(std::span<const Document> docs) const {
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(docs.size());
  const std::size_t chunk = 512;
  for (std::size_t start = 0; start < docs.size(); start += chunk) {
    const auto part = docs.subspan(start, std::min(chunk, docs.size() - start));
    auto x = dense_matrix(part, config_.input_dim);
    auto emb = dense_dropout_stack(x, hidden_, /*training=*/false, nullptr);
    auto probs = softmax(dense_dropout_stack(emb, {out_}, false, nullptr));
    for (std::size_t i = 0; i < part.size(); ++i) {
      ClassifierOutput o;
      o.posterior_positive = probs->at(i, 0);
      o.embedding.assign(emb->values.begin() + i * config_.hidden2,
                         emb->values.begin() + (i + 1) * config_.hidden2);
      o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
      outputs.push_back(std::move(o));
    }
    release_graph(probs);
  }
  return outputs;
}

std::unique_ptr<MlpClassifier> train_mlp_classifier(const LabeledCorpus& train,
                                                    const MlpConfig& config, std::uint64_t seed) {
  if (train.positive_count() == 0 || train.positive_count() == train.size()) {
    throw std::runtime_error("train_mlp_classifier: training data has a single class");
  }
  Rng rng(mix_seed(seed, 0x310c));
  auto model = std::make_unique<MlpClassifier>(config, rng);
  auto [fit_part, val_part] =
      split_train_val(train, 1.0 - config.validation_fraction, mix_seed(seed, 0x5011));

  auto params = model->parameters();
  AdamState adam;
  adam.learning_rate = config.train.learning_rate;
  adam.weight_decay = config.train.weight_decay;

  const auto val_x = dense_matrix(std::span<const Document>(val_part.docs()), config.input_dim);
  const auto val_y = one_hot_matrix(std::span<const Document>(val_part.docs()));

  std::vector<std::vector<double>> best = copy_values(params);
  auto train_step = [&](std::size_t) {
    auto batch = sample_batch(fit_part, config.train.batch_size, rng);
    auto x = dense_matrix(std::span<const Document>(batch), config.input_dim);
    auto emb = dense_dropout_stack(x, model->hidden_, /*training=*/true, &rng);
    auto probs = softmax(dense_dropout_stack(emb, {model->out_}, true, &rng));
    auto loss = mse_loss(probs, one_hot_matrix(std::span<const Document>(batch)));
    zero_grads(params);
    backward(loss);
    adam_step(params, adam);
  };
  auto validate = [&] {
    auto emb = dense_dropout_stack(val_x, model->hidden_, false, nullptr);
    auto probs = softmax(dense_dropout_stack(emb, {model->out_}, false, nullptr));
    auto loss = mse_loss(probs, val_y);
    const double v = loss->item();
    release_graph(loss);
    return v;
  };
  auto snapshot = [&] { best = copy_values(params); };

  model->report_ = run_early_stopped(config.train, train_step, validate, snapshot);
  restore_values(params, best);
  return model;
}

// ---- MNB ----

MnbModel train_mnb(const LabeledCorpus& train, double alpha, std::size_t vocab_size) {
  if (alpha <= 0.0) throw std::invalid_argument("train_mnb: alpha must be > 0");
  if (vocab_size == 0) throw std::invalid_argument("train_mnb: vocab_size must be > 0");
  if (train.empty()) throw std::invalid_argument("train_mnb: empty corpus");

  MnbModel model;
  model.alpha = alpha;
  model.vocab_size = vocab_size;
  model.log_likelihood_positive.assign(vocab_size, 0.0);
  model.log_likelihood_negative.assign(vocab_size, 0.0);

  std::vector<double> count_pos(vocab_size, 0.0), count_neg(vocab_size, 0.0);
  double total_pos = 0.0, total_neg = 0.0;
  std::size_t docs_pos = 0, docs_neg = 0;
  for (const auto& doc : train.docs()) {
    auto& counts = doc.label == Label::Positive ? count_pos : count_neg;
    auto& total = doc.label == Label::Positive ? total_pos : total_neg;
    (doc.label == Label::Positive ? docs_pos : docs_neg) += 1;
    for (const auto& [idx, w] : doc.features) {
      if (w < 0.0) {
        throw std::invalid_argument("train_mnb: negative feature weight on document " +
                                    std::to_string(doc.id));
      }
      if (idx >= vocab_size) {
        throw std::invalid_argument("train_mnb: feature index " + std::to_string(idx) +
                                    " outside vocabulary of size " + std::to_string(vocab_size));
      }
      counts[idx] += w;
      total += w;
    }
  }
  if (docs_pos == 0 || docs_neg == 0) {
    throw std::runtime_error("train_mnb: training data has a single class");
  }

  model.log_prior_positive = std::log(static_cast<double>(docs_pos)) -
                             std::log(static_cast<double>(train.size()));
  model.log_prior_negative = std::log(static_cast<double>(docs_neg)) -
                             std::log(static_cast<double>(train.size()));
  const double denom_pos = total_pos + alpha * static_cast<double>(vocab_size);
  const double denom_neg = total_neg + alpha * static_cast<double>(vocab_size);
  for (std::size_t f = 0; f < vocab_size; ++f) {
    model.log_likelihood_positive[f] = std::log((count_pos[f] + alpha) / denom_pos);
    model.log_likelihood_negative[f] = std::log((count_neg[f] + alpha) / denom_neg);
  }
  return model;
}

void save_mnb(const std::string& path, const MnbModel& model) {
  NamedParams params;
  params.emplace_back("mnb.logprior",
                      Tensor::vector({model.log_prior_positive, model.log_prior_negative}));
  std::vector<double> lik(model.log_likelihood_positive);
  lik.insert(lik.end(), model.log_likelihood_negative.begin(),
             model.log_likelihood_negative.end());
  params.emplace_back("mnb.loglik", Tensor::create({2, model.vocab_size}, std::move(lik)));
  params.emplace_back("mnb.alpha", Tensor::scalar(model.alpha));
  save_params(path, params);
}

MnbModel load_mnb(const std::string& path) {
  const auto params = load_params(path);
  MnbModel model;
  for (const auto& [name, tensor] : params) {
    if (name == "mnb.logprior") {
      model.log_prior_positive = tensor->values.at(0);
      model.log_prior_negative = tensor->values.at(1);
    } else if (name == "mnb.loglik") {
      model.vocab_size = tensor->cols();
      model.log_likelihood_positive.assign(tensor->values.begin(),
                                           tensor->values.begin() + model.vocab_size);
      model.log_likelihood_negative.assign(tensor->values.begin() + model.vocab_size,
                                           tensor->values.end());
    } else if (name == "mnb.alpha") {
      model.alpha = tensor->item();
    }
  }
  if (model.vocab_size == 0) throw std::runtime_error(path + ": missing mnb.loglik record");
  return model;
}

MnbClassifier::MnbClassifier(MnbModel model, std::size_t embedding_dim)
    : model_(std::move(model)), embedding_dim_(std::max<std::size_t>(embedding_dim, 2)) {}

std::vector<ClassifierOutput> MnbClassifier::predict(std::span<const Document> docs) const {
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(docs.size());
  for (const auto& doc : docs) {
    double ll_pos = model_.log_prior_positive;
    double ll_neg = model_.log_prior_negative;
    for (const auto& [idx, w] : doc.features) {
      if (idx >= model_.vocab_size) {
        throw std::invalid_argument("mnb: feature index " + std::to_string(idx) +
                                    " outside vocabulary of size " +
                                    std::to_string(model_.vocab_size));
      }
      ll_pos += w * model_.log_likelihood_positive[idx];
      ll_neg += w * model_.log_likelihood_negative[idx];
    }
    // log-sum-exp normalization keeps long documents finite
    const double mx = std::max(ll_pos, ll_neg);
    const double lse = mx + std::log(std::exp(ll_pos - mx) + std::exp(ll_neg - mx));
    ClassifierOutput o;
    o.posterior_positive = std::exp(ll_pos - lse);
    o.embedding.assign(embedding_dim_, 0.0);
    o.embedding[0] = ll_pos - lse;
    o.embedding[1] = ll_neg - lse;
    o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
    outputs.push_back(std::move(o));
  }
  return outputs;
}

// ---- oracle ----

std::vector<ClassifierOutput> OracleClassifier::predict(std::span<const Document> docs) const {
  return oracle_predict(*this, docs);
}

std::vector<ClassifierOutput> oracle_predict(const OracleClassifier& oracle,
                                             std::span<const Document> docs) {
  const auto& cfg = oracle.config();
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(docs.size());
  for (const auto& doc : docs) {
    if (doc.label == Label::Unknown) {
      throw std::invalid_argument("oracle classifier needs labeled documents (doc " +
                                  std::to_string(doc.id) + " is unlabeled)");
    }
    // stable per-document stream: repeated predictions agree
    Rng rng(mix_seed(cfg.noise_seed, static_cast<std::uint64_t>(doc.id)));
    const double hit_rate = doc.label == Label::Positive ? cfg.tpr_target : cfg.fpr_target;
    const bool predicted_positive = rng.bernoulli(hit_rate);
    ClassifierOutput o;
    o.posterior_positive =
        predicted_positive ? rng.uniform(0.5, 1.0) : rng.uniform(0.0, 0.5);
    o.embedding = {o.posterior_positive, 1.0 - o.posterior_positive};
    o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
    outputs.push_back(std::move(o));
  }
  return outputs;
}

// ---- exact generative posteriors ----

std::vector<ClassifierOutput> BayesPosteriorClassifier::predict(
    std::span<const Document> docs) const {
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(docs.size());
  for (const auto& doc : docs) {
    ClassifierOutput o;
    o.posterior_positive = generator_.bayes_posterior(doc, prior_);
    o.embedding = {o.posterior_positive, 1.0 - o.posterior_positive};
    o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
    outputs.push_back(std::move(o));
  }
  return outputs;
}

// ---- LSTM text classifier ----

LstmTextClassifier::LstmTextClassifier(LstmClassifierConfig config, Rng& rng) : config_(config) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(config_.word_embedding_dim));
  word_embeddings_ = Tensor::uniform({config_.vocab_buckets, config_.word_embedding_dim}, -bound,
                                     bound, rng);
  lstm_ = init_lstm(config_.word_embedding_dim, config_.lstm_hidden, rng);
  hidden_.push_back(
      init_dense(config_.lstm_hidden, config_.dense1, Activation::Relu, config_.dropout, rng));
  hidden_.push_back(
      init_dense(config_.dense1, config_.dense2, Activation::Relu, config_.dropout, rng));
  out_ = init_dense(config_.dense2, 2, Activation::Identity, 0.0, rng);
}

std::vector<TensorPtr> LstmTextClassifier::parameters() const {
  std::vector<TensorPtr> out{word_embeddings_};
  for (const auto& p : lstm_.parameters()) out.push_back(p);
  for (const auto& l : hidden_) {
    out.push_back(l.weights);
    out.push_back(l.bias);
  }
  out.push_back(out_.weights);
  out.push_back(out_.bias);
  return out;
}

NamedParams LstmTextClassifier::named_parameters() const {
  NamedParams out;
  out.emplace_back("lstm_clf.word_embeddings", word_embeddings_);
  const char* gate_names[] = {"w_input", "w_forget", "w_output", "w_candidate",
                              "b_input", "b_forget", "b_output", "b_candidate"};
  auto gates = lstm_.parameters();
  for (std::size_t i = 0; i < gates.size(); ++i) {
    out.emplace_back(std::string("lstm_clf.lstm.") + gate_names[i], gates[i]);
  }
  for (std::size_t i = 0; i < hidden_.size(); ++i) {
    out.emplace_back("lstm_clf.dense" + std::to_string(i + 1) + ".weights", hidden_[i].weights);
    out.emplace_back("lstm_clf.dense" + std::to_string(i + 1) + ".bias", hidden_[i].bias);
  }
  out.emplace_back("lstm_clf.out.weights", out_.weights);
  out.emplace_back("lstm_clf.out.bias", out_.bias);
  return out;
}

namespace {
std::uint64_t fnv1a_token(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

TensorPtr LstmTextClassifier::encode(const Document& doc, bool training, Rng* rng,
                                     TensorPtr* embedding_out) const {
  auto tokens = tokenize(doc.text);
  if (tokens.size() > config_.max_tokens) tokens.resize(config_.max_tokens);
  TensorPtr encoded;
  if (tokens.empty()) {
    encoded = Tensor::zeros({config_.lstm_hidden});
  } else {
    std::vector<TensorPtr> items;
    items.reserve(tokens.size());
    for (const auto& tok : tokens) {
      items.push_back(row(word_embeddings_, fnv1a_token(tok) % config_.vocab_buckets));
    }
    encoded = lstm_encode(lstm_, items, /*reverse=*/false);
  }
  auto emb = dense_dropout_stack(encoded, hidden_, training, rng);
  if (embedding_out) *embedding_out = emb;
  return softmax(dense_dropout_stack(emb, {out_}, training, rng));
}

std::vector<ClassifierOutput> LstmTextClassifier::predict(std::span<const Document> docs) const {
  std::vector<ClassifierOutput> outputs;
  outputs.reserve(docs.size());
  for (const auto& doc : docs) {
    TensorPtr emb;
    auto probs = encode(doc, /*training=*/false, nullptr, &emb);
    ClassifierOutput o;
    o.posterior_positive = probs->values[0];
    o.embedding = emb->values;
    o.hard_prediction = hard_label_from_posterior(o.posterior_positive);
    outputs.push_back(std::move(o));
    release_graph(probs);
  }
  return outputs;
}

std::unique_ptr<LstmTextClassifier> train_lstm_classifier(const LabeledCorpus& train,
                                                          const LstmClassifierConfig& config,
                                                          std::uint64_t seed) {
  if (train.positive_count() == 0 || train.positive_count() == train.size()) {
    throw std::runtime_error("train_lstm_classifier: training data has a single class");
  }
  Rng rng(mix_seed(seed, 0x157e));
  auto model = std::make_unique<LstmTextClassifier>(config, rng);
  auto [fit_part, val_part] =
      split_train_val(train, 1.0 - config.validation_fraction, mix_seed(seed, 0x5012));

  auto params = model->parameters();
  AdamState adam;
  adam.learning_rate = config.train.learning_rate;
  adam.weight_decay = config.train.weight_decay;

  std::vector<std::vector<double>> best = copy_values(params);
  const double inv_batch = 1.0 / static_cast<double>(config.train.batch_size);
  auto train_step = [&](std::size_t) {
    auto batch = sample_batch(fit_part, config.train.batch_size, rng);
    zero_grads(params);
    for (const auto& doc : batch) {
      auto probs = model->encode(doc, /*training=*/true, &rng, nullptr);
      auto target = Tensor::vector({one_hot(doc.label)[0], one_hot(doc.label)[1]});
      backward(scale(mse_loss(probs, target), inv_batch));
    }
    adam_step(params, adam);
  };
  auto validate = [&] {
    double total = 0.0;
    for (const auto& doc : val_part.docs()) {
      auto probs = model->encode(doc, false, nullptr, nullptr);
      const auto t = one_hot(doc.label);
      const double d0 = probs->values[0] - t[0];
      const double d1 = probs->values[1] - t[1];
      total += (d0 * d0 + d1 * d1) / 2.0;
      release_graph(probs);
    }
    return total / static_cast<double>(val_part.size());
  };
  auto snapshot = [&] { best = copy_values(params); };

  model->report_ = run_early_stopped(config.train, train_step, validate, snapshot);
  restore_values(params, best);
  return model;
}

void save_classifier_params(const std::string& path, const Classifier& classifier) {
  if (const auto* mlp = dynamic_cast<const MlpClassifier*>(&classifier)) {
    save_params(path, mlp->named_parameters());
  } else if (const auto* lstm = dynamic_cast<const LstmTextClassifier*>(&classifier)) {
    save_params(path, lstm->named_parameters());
  } else if (const auto* mnb = dynamic_cast<const MnbClassifier*>(&classifier)) {
    save_mnb(path, mnb->model());
  } else {
    // oracle and bayes classifiers have no learned parameters
    save_params(path, {});
  }
}

}  // namespace prevalens
