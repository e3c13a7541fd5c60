#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "prevalens/quantifiers.hpp"

namespace prevalens {

enum class Metric { AE, RAE, KLD };
std::string to_string(Metric m);

struct MetricValue {
  Metric metric = Metric::AE;
  double value = 0.0;
  bool smoothed = false;
};

// Additive smoothing with eps = 1/(2 * sample_size):
// p_s(c) = (p(c) + eps) / (1 + 2 * eps). Output is strictly positive and
// sums to 1.
std::array<double, 2> smooth(const std::array<double, 2>& p, std::size_t sample_size);

// absolute error: mean over classes of |est - true|; defined everywhere,
// no smoothing
MetricValue ae(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p);
// relative absolute error on smoothed distributions
MetricValue rae(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p,
                std::size_t sample_size);
// Kullback-Leibler divergence (natural log) on smoothed distributions
MetricValue kld(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p,
                std::size_t sample_size);

struct ProtocolRow {
  std::string method;
  double target_prevalence = 0.0;
  std::size_t trial = 0;
  double estimated_prevalence = 0.0;
  double ae = 0.0;
  double rae = 0.0;
  double kld = 0.0;
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;
};

struct ProtocolResult {
  std::vector<ProtocolRow> rows;
};

// Artificial-prevalence protocol: for every grid prevalence x trial, draws a
// sample (seed derived from (seed, prevalence index, trial), so different
// methods see identical samples), runs the quantifier and scores it.
// Cells run on `threads` workers (0 = PREVALENS_THREADS or hardware
// concurrency); results are identical to sequential execution.
ProtocolResult run_protocol(const Quantifier& quantifier, const LabeledCorpus& test_pool,
                            const std::vector<double>& grid, std::size_t trials,
                            std::size_t sample_size, std::uint64_t seed, std::size_t threads = 0);

std::uint64_t protocol_cell_seed(std::uint64_t seed, std::size_t prevalence_index,
                                 std::size_t trial);

struct SummaryRow {
  std::string method;
  Metric metric = Metric::AE;
  double mean = 0.0;
  double std_dev = 0.0;
};

struct PlotRow {
  std::string method;
  double target_prevalence = 0.0;
  double mean_estimate = 0.0;
  double std_estimate = 0.0;
};

struct Summary {
  std::vector<SummaryRow> rows;   // method x {AE, RAE, KLD}
  std::vector<PlotRow> plot;      // method x grid prevalence
};

Summary summarize(const std::vector<ProtocolResult>& results);

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  bool degenerate = false;  // all differences were exactly zero
};

// Two-tailed paired t-test; the t-distribution CDF is evaluated via the
// regularized incomplete beta function (continued fraction).
TTestResult paired_ttest(std::span<const double> a, std::span<const double> b);

double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_tailed_p(double t, double df);

// ---- CSV interfaces ----

// header: method,target_prev,trial,est_prev,ae,rae,kld,sample_size,seed
void write_results_csv(std::ostream& os, const std::vector<ProtocolResult>& results);
// header: method,metric,mean,std
void write_summary_csv(std::ostream& os, const Summary& summary);
// header: method,target_prev,mean_est,std_est
void write_plot_csv(std::ostream& os, const Summary& summary);

std::vector<ProtocolRow> read_results_csv(std::istream& is);

// shortest round-trip decimal rendering
std::string format_double(double v);

}  // namespace prevalens
