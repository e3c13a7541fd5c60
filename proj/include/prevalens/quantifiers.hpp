#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prevalens/classifier.hpp"

namespace prevalens {

enum class TableKind { Hard, Soft };

// Four cells of a binary contingency table; integer-valued for Hard tables,
// expected counts (sums of posteriors) for Soft ones.
struct ContingencyTable {
  double tp = 0.0, fp = 0.0, fn = 0.0, tn = 0.0;
  TableKind kind = TableKind::Hard;

  double total() const { return tp + fp + fn + tn; }
};

ContingencyTable hard_contingency(std::span<const ClassifierOutput> outputs,
                                  std::span<const Label> true_labels);
ContingencyTable soft_contingency(std::span<const ClassifierOutput> outputs,
                                  std::span<const Label> true_labels);

struct Rates {
  double tpr = 0.0;
  double fpr = 0.0;
  bool tpr_degenerate = false;  // empty positive class: tpr reported as 0.5
  bool fpr_degenerate = false;
};

// tpr = tp/(tp+fn), fpr = fp/(fp+tn); an empty denominator yields the
// uninformative 0.5 with the degenerate flag set.
Rates rates(const ContingencyTable& table);

enum class RateSource { HeldOut, KFold };

struct RateEstimates {
  double tpr_hard = 1.0, fpr_hard = 0.0;
  double tpr_soft = 1.0, fpr_soft = 0.0;
  RateSource source = RateSource::HeldOut;
  std::size_t sample_count = 0;
};

// Hard and soft rates of a trained classifier measured on a held-out set.
RateEstimates estimate_rates(const Classifier& classifier, const LabeledCorpus& validation);

// k-fold variant: retrains on k-1 folds, predicts the held fold, pools all
// predictions into single tables.
using ClassifierTrainer = std::function<std::unique_ptr<Classifier>(const LabeledCorpus&)>;
RateEstimates estimate_rates_kfold(const ClassifierTrainer& trainer, const LabeledCorpus& corpus,
                                   std::size_t k, std::uint64_t seed);

// Predicted class distribution over {Positive, Negative}.
struct PrevalenceEstimate {
  double p_positive = 0.0;
  double p_negative = 0.0;
  std::string method;
  bool clipped = false;     // raw estimate fell outside [0,1] before clamping
  bool degenerate = false;  // adjustment denominator vanished; fell back to the unadjusted value
};

PrevalenceEstimate make_estimate(double p_positive, std::string method);

// classify & count: fraction of hard-positive predictions
PrevalenceEstimate cc(std::span<const ClassifierOutput> outputs);
// adjusted classify & count: (cc - fpr) / (tpr - fpr) with hard rates
PrevalenceEstimate acc(std::span<const ClassifierOutput> outputs, const RateEstimates& rates);
// probabilistic classify & count: mean posterior
PrevalenceEstimate pcc(std::span<const ClassifierOutput> outputs);
// probabilistic adjusted classify & count, with soft rates
PrevalenceEstimate pacc(std::span<const ClassifierOutput> outputs, const RateEstimates& rates);

struct EmqResult {
  PrevalenceEstimate estimate;
  std::vector<double> corrected_posteriors;
  std::size_t iterations = 0;
};

// EM prior adjustment: rescales posteriors by the ratio of the current
// prevalence estimate to the training prior and re-estimates until the
// prevalence moves less than tol. Posteriors are clamped to
// [1e-12, 1 - 1e-12] before iterating.
EmqResult emq(std::span<const double> posteriors, double train_prior, std::size_t max_iter = 1000,
              double tol = 1e-6);

std::vector<double> posteriors_of(std::span<const ClassifierOutput> outputs);

// ---- protocol-facing estimator interface ----

class Quantifier {
 public:
  virtual ~Quantifier() = default;
  virtual PrevalenceEstimate estimate(std::span<const Document> docs) const = 0;
  virtual std::string name() const = 0;
};

class CcQuantifier : public Quantifier {
 public:
  CcQuantifier(std::shared_ptr<const Classifier> classifier, std::string name = "cc")
      : classifier_(std::move(classifier)), name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  std::shared_ptr<const Classifier> classifier_;
  std::string name_;
};

class AccQuantifier : public Quantifier {
 public:
  AccQuantifier(std::shared_ptr<const Classifier> classifier, RateEstimates rates,
                std::string name = "acc")
      : classifier_(std::move(classifier)), rates_(rates), name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  std::shared_ptr<const Classifier> classifier_;
  RateEstimates rates_;
  std::string name_;
};

class PccQuantifier : public Quantifier {
 public:
  PccQuantifier(std::shared_ptr<const Classifier> classifier, std::string name = "pcc")
      : classifier_(std::move(classifier)), name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  std::shared_ptr<const Classifier> classifier_;
  std::string name_;
};

class PaccQuantifier : public Quantifier {
 public:
  PaccQuantifier(std::shared_ptr<const Classifier> classifier, RateEstimates rates,
                 std::string name = "pacc")
      : classifier_(std::move(classifier)), rates_(rates), name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  std::shared_ptr<const Classifier> classifier_;
  RateEstimates rates_;
  std::string name_;
};

class EmqQuantifier : public Quantifier {
 public:
  EmqQuantifier(std::shared_ptr<const Classifier> classifier, double train_prior,
                std::string name = "emq")
      : classifier_(std::move(classifier)), train_prior_(train_prior), name_(std::move(name)) {}
  PrevalenceEstimate estimate(std::span<const Document> docs) const override;
  std::string name() const override { return name_; }

 private:
  std::shared_ptr<const Classifier> classifier_;
  double train_prior_;
  std::string name_;
};

}  // namespace prevalens
