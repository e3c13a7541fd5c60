#include "prevalens/quantifiers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prevalens {

namespace {
void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw std::invalid_argument("contingency: " + std::to_string(a) + " outputs vs " +
                                std::to_string(b) + " labels");
  }
}
}  // namespace

ContingencyTable hard_contingency(std::span<const ClassifierOutput> outputs,
                                  std::span<const Label> true_labels) {
  check_lengths(outputs.size(), true_labels.size());
  ContingencyTable t;
  t.kind = TableKind::Hard;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const bool predicted = outputs[i].hard_prediction == Label::Positive;
    const bool actual = true_labels[i] == Label::Positive;
    if (actual) {
      (predicted ? t.tp : t.fn) += 1.0;
    } else {
      (predicted ? t.fp : t.tn) += 1.0;
    }
  }
  return t;
}

ContingencyTable soft_contingency(std::span<const ClassifierOutput> outputs,
                                  std::span<const Label> true_labels) {
  check_lengths(outputs.size(), true_labels.size());
  ContingencyTable t;
  t.kind = TableKind::Soft;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const double p = outputs[i].posterior_positive;
    if (true_labels[i] == Label::Positive) {
      t.tp += p;
      t.fn += 1.0 - p;
    } else {
      t.fp += p;
      t.tn += 1.0 - p;
    }
  }
  return t;
}

Rates rates(const ContingencyTable& table) {
  Rates r;
  if (table.tp + table.fn > 0.0) {
    r.tpr = table.tp / (table.tp + table.fn);
  } else {
    r.tpr = 0.5;
    r.tpr_degenerate = true;
  }
  if (table.fp + table.tn > 0.0) {
    r.fpr = table.fp / (table.fp + table.tn);
  } else {
    r.fpr = 0.5;
    r.fpr_degenerate = true;
  }
  return r;
}

RateEstimates estimate_rates(const Classifier& classifier, const LabeledCorpus& validation) {
  if (validation.positive_count() == 0 || validation.positive_count() == validation.size()) {
    throw std::runtime_error("estimate_rates: validation set has a single class");
  }
  const auto outputs = classifier.predict_corpus(validation);
  const auto labels = labels_of(std::span<const Document>(validation.docs()));
  const auto hard = rates(hard_contingency(outputs, labels));
  const auto soft = rates(soft_contingency(outputs, labels));
  RateEstimates est;
  est.tpr_hard = hard.tpr;
  est.fpr_hard = hard.fpr;
  est.tpr_soft = soft.tpr;
  est.fpr_soft = soft.fpr;
  est.source = RateSource::HeldOut;
  est.sample_count = validation.size();
  return est;
}

RateEstimates estimate_rates_kfold(const ClassifierTrainer& trainer, const LabeledCorpus& corpus,
                                   std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("estimate_rates_kfold: k must be >= 2");
  auto pos = corpus.indices_of(Label::Positive);
  auto neg = corpus.indices_of(Label::Negative);
  if (pos.size() < k || neg.size() < k) {
    throw std::runtime_error("estimate_rates_kfold: each class needs at least k documents");
  }
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  // stratified fold assignment, round-robin
  std::vector<std::size_t> fold_of(corpus.size(), 0);
  for (std::size_t i = 0; i < pos.size(); ++i) fold_of[pos[i]] = i % k;
  for (std::size_t i = 0; i < neg.size(); ++i) fold_of[neg[i]] = i % k;

  ContingencyTable hard_total, soft_total;
  hard_total.kind = TableKind::Hard;
  soft_total.kind = TableKind::Soft;
  for (std::size_t fold = 0; fold < k; ++fold) {
    LabeledCorpus fit, held;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      (fold_of[i] == fold ? held : fit).add(corpus.docs()[i]);
    }
    auto model = trainer(fit);
    const auto outputs = model->predict_corpus(held);
    const auto labels = labels_of(std::span<const Document>(held.docs()));
    const auto h = hard_contingency(outputs, labels);
    const auto s = soft_contingency(outputs, labels);
    hard_total.tp += h.tp;
    hard_total.fp += h.fp;
    hard_total.fn += h.fn;
    hard_total.tn += h.tn;
    soft_total.tp += s.tp;
    soft_total.fp += s.fp;
    soft_total.fn += s.fn;
    soft_total.tn += s.tn;
  }
  const auto hard = rates(hard_total);
  const auto soft = rates(soft_total);
  RateEstimates est;
  est.tpr_hard = hard.tpr;
  est.fpr_hard = hard.fpr;
  est.tpr_soft = soft.tpr;
  est.fpr_soft = soft.fpr;
  est.source = RateSource::KFold;
  est.sample_count = corpus.size();
  return est;
}

PrevalenceEstimate make_estimate(double p_positive, std::string method) {
  PrevalenceEstimate e;
  e.p_positive = p_positive;
  e.p_negative = 1.0 - p_positive;
  e.method = std::move(method);
  return e;
}

PrevalenceEstimate cc(std::span<const ClassifierOutput> outputs) {
  if (outputs.empty()) throw std::invalid_argument("cc: empty input");
  std::size_t positives = 0;
  for (const auto& o : outputs)
    if (o.hard_prediction == Label::Positive) ++positives;
  return make_estimate(static_cast<double>(positives) / static_cast<double>(outputs.size()), "cc");
}

PrevalenceEstimate pcc(std::span<const ClassifierOutput> outputs) {
  if (outputs.empty()) throw std::invalid_argument("pcc: empty input");
  double total = 0.0;
  for (const auto& o : outputs) total += o.posterior_positive;
  return make_estimate(total / static_cast<double>(outputs.size()), "pcc");
}

namespace {
// shared adjustment: (base - fpr) / (tpr - fpr), clamped to [0,1];
// vanishing denominator falls back to the unadjusted estimate
PrevalenceEstimate adjust(double base, double tpr, double fpr, std::string method) {
  PrevalenceEstimate e;
  e.method = std::move(method);
  const double denom = tpr - fpr;
  if (std::abs(denom) < 1e-6) {
    e.p_positive = base;
    e.degenerate = true;
  } else {
    const double raw = (base - fpr) / denom;
    e.p_positive = std::clamp(raw, 0.0, 1.0);
    e.clipped = raw != e.p_positive;
  }
  e.p_negative = 1.0 - e.p_positive;
  return e;
}
}  // namespace

PrevalenceEstimate acc(std::span<const ClassifierOutput> outputs, const RateEstimates& rates) {
  return adjust(cc(outputs).p_positive, rates.tpr_hard, rates.fpr_hard, "acc");
}

PrevalenceEstimate pacc(std::span<const ClassifierOutput> outputs, const RateEstimates& rates) {
  return adjust(pcc(outputs).p_positive, rates.tpr_soft, rates.fpr_soft, "pacc");
}

std::vector<double> posteriors_of(std::span<const ClassifierOutput> outputs) {
  std::vector<double> out;
  out.reserve(outputs.size());
  for (const auto& o : outputs) out.push_back(o.posterior_positive);
  return out;
}

EmqResult emq(std::span<const double> posteriors, double train_prior, std::size_t max_iter,
              double tol) {
  if (train_prior <= 0.0 || train_prior >= 1.0) {
    throw std::invalid_argument("emq: train_prior must be in (0,1)");
  }
  if (posteriors.empty()) throw std::invalid_argument("emq: empty input");

  constexpr double kClamp = 1e-12;
  std::vector<double> post(posteriors.begin(), posteriors.end());
  for (auto& p : post) p = std::clamp(p, kClamp, 1.0 - kClamp);

  EmqResult result;
  result.corrected_posteriors = post;
  double prev = train_prior;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    double total = 0.0;
    for (std::size_t i = 0; i < post.size(); ++i) {
      const double w_pos = (prev / train_prior) * post[i];
      const double w_neg = ((1.0 - prev) / (1.0 - train_prior)) * (1.0 - post[i]);
      result.corrected_posteriors[i] = w_pos / (w_pos + w_neg);
      total += result.corrected_posteriors[i];
    }
    const double next = total / static_cast<double>(post.size());
    result.iterations = it;
    const bool converged = std::abs(next - prev) < tol;
    prev = next;
    if (converged) break;
  }
  result.estimate = make_estimate(prev, "emq");
  return result;
}

// ---- quantifier adapters ----

PrevalenceEstimate CcQuantifier::estimate(std::span<const Document> docs) const {
  auto e = cc(classifier_->predict(docs));
  e.method = name_;
  return e;
}

PrevalenceEstimate AccQuantifier::estimate(std::span<const Document> docs) const {
  auto e = acc(classifier_->predict(docs), rates_);
  e.method = name_;
  return e;
}

PrevalenceEstimate PccQuantifier::estimate(std::span<const Document> docs) const {
  auto e = pcc(classifier_->predict(docs));
  e.method = name_;
  return e;
}

PrevalenceEstimate PaccQuantifier::estimate(std::span<const Document> docs) const {
  auto e = pacc(classifier_->predict(docs), rates_);
  e.method = name_;
  return e;
}

PrevalenceEstimate EmqQuantifier::estimate(std::span<const Document> docs) const {
  const auto outputs = classifier_->predict(docs);
  auto result = emq(posteriors_of(outputs), train_prior_);
  result.estimate.method = name_;
  return result.estimate;
}

}  // namespace prevalens
