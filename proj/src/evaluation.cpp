#include "prevalens/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "prevalens/data.hpp"

namespace prevalens {

std::string to_string(Metric m) {
  switch (m) {
    case Metric::AE: return "ae";
    case Metric::RAE: return "rae";
    case Metric::KLD: return "kld";
  }
  return "?";
}

std::array<double, 2> smooth(const std::array<double, 2>& p, std::size_t sample_size) {
  if (sample_size == 0) throw std::invalid_argument("smooth: sample_size must be >= 1");
  const double eps = 1.0 / (2.0 * static_cast<double>(sample_size));
  return {(p[0] + eps) / (1.0 + 2.0 * eps), (p[1] + eps) / (1.0 + 2.0 * eps)};
}

MetricValue ae(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p) {
  MetricValue v;
  v.metric = Metric::AE;
  v.value = (std::abs(est_p[0] - true_p[0]) + std::abs(est_p[1] - true_p[1])) / 2.0;
  return v;
}

MetricValue rae(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p,
                std::size_t sample_size) {
  const auto ts = smooth(true_p, sample_size);
  const auto es = smooth(est_p, sample_size);
  MetricValue v;
  v.metric = Metric::RAE;
  v.smoothed = true;
  v.value = (std::abs(es[0] - ts[0]) / ts[0] + std::abs(es[1] - ts[1]) / ts[1]) / 2.0;
  return v;
}

MetricValue kld(const std::array<double, 2>& true_p, const std::array<double, 2>& est_p,
                std::size_t sample_size) {
  const auto ts = smooth(true_p, sample_size);
  const auto es = smooth(est_p, sample_size);
  MetricValue v;
  v.metric = Metric::KLD;
  v.smoothed = true;
  v.value = ts[0] * std::log(ts[0] / es[0]) + ts[1] * std::log(ts[1] / es[1]);
  return v;
}

std::uint64_t protocol_cell_seed(std::uint64_t seed, std::size_t prevalence_index,
                                 std::size_t trial) {
  return mix_seed(mix_seed(seed, 0xce11 + prevalence_index), trial);
}

ProtocolResult run_protocol(const Quantifier& quantifier, const LabeledCorpus& test_pool,
                            const std::vector<double>& grid, std::size_t trials,
                            std::size_t sample_size, std::uint64_t seed, std::size_t threads) {
  if (grid.empty() || trials == 0) {
    throw std::invalid_argument("run_protocol: empty grid or zero trials");
  }
  const std::size_t pool_pos = test_pool.positive_count();
  const std::size_t pool_neg = test_pool.size() - pool_pos;

  if (threads == 0) {
    if (const char* env = std::getenv("PREVALENS_THREADS")) {
      threads = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
    }
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  }

  ProtocolResult result;
  result.rows.resize(grid.size() * trials);
  const std::string method = quantifier.name();

  auto run_cell = [&](std::size_t g, std::size_t t) {
    const std::uint64_t cell_seed = protocol_cell_seed(seed, g, t);
    const std::size_t feasible =
        feasible_sample_size(pool_pos, pool_neg, grid[g], sample_size);
    if (feasible == 0) {
      throw std::runtime_error("run_protocol: pool cannot realize prevalence " +
                               std::to_string(grid[g]));
    }
    auto draw = draw_sample_at_prevalence(test_pool, grid[g], feasible, cell_seed);
    const auto docs = materialize_sample(test_pool, draw);
    const auto estimate = quantifier.estimate(std::span<const Document>(docs));
    const std::array<double, 2> true_p{draw.realized_prevalence,
                                       1.0 - draw.realized_prevalence};
    const std::array<double, 2> est_p{estimate.p_positive, estimate.p_negative};
    ProtocolRow row;
    row.method = method;
    row.target_prevalence = grid[g];
    row.trial = t;
    row.estimated_prevalence = estimate.p_positive;
    row.ae = ae(true_p, est_p).value;
    row.rae = rae(true_p, est_p, feasible).value;
    row.kld = kld(true_p, est_p, feasible).value;
    row.sample_size = feasible;
    row.seed = cell_seed;
    result.rows[g * trials + t] = std::move(row);
  };

  const std::size_t cells = grid.size() * trials;
  if (threads <= 1 || cells <= 1) {
    for (std::size_t g = 0; g < grid.size(); ++g)
      for (std::size_t t = 0; t < trials; ++t) run_cell(g, t);
    return result;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        while (true) {
          const std::size_t cell = next.fetch_add(1);
          if (cell >= cells) break;
          run_cell(cell / trials, cell % trials);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& worker : workers) worker.join();
  for (const auto& err : errors)
    if (err) std::rethrow_exception(err);
  return result;
}

Summary summarize(const std::vector<ProtocolResult>& results) {
  if (results.empty()) throw std::invalid_argument("summarize: no results");

  struct Acc {
    std::vector<double> ae, rae, kld;
    std::map<double, std::vector<double>> est_by_prev;
    std::size_t order = 0;
  };
  std::map<std::string, Acc> by_method;
  std::size_t order = 0;
  for (const auto& result : results) {
    for (const auto& row : result.rows) {
      auto [it, inserted] = by_method.try_emplace(row.method);
      if (inserted) it->second.order = order++;
      it->second.ae.push_back(row.ae);
      it->second.rae.push_back(row.rae);
      it->second.kld.push_back(row.kld);
      it->second.est_by_prev[row.target_prevalence].push_back(row.estimated_prevalence);
    }
  }

  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  std::vector<std::pair<std::string, const Acc*>> ordered;
  for (const auto& [name, acc] : by_method) ordered.emplace_back(name, &acc);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto& a, const auto& b) { return a.second->order < b.second->order; });

  Summary summary;
  for (const auto& [name, acc] : ordered) {
    for (auto [metric, xs] : {std::pair<Metric, const std::vector<double>*>{Metric::AE, &acc->ae},
                              {Metric::RAE, &acc->rae},
                              {Metric::KLD, &acc->kld}}) {
      auto [mean, sd] = mean_std(*xs);
      summary.rows.push_back({name, metric, mean, sd});
    }
    for (const auto& [prev, ests] : acc->est_by_prev) {
      auto [mean, sd] = mean_std(ests);
      summary.plot.push_back({name, prev, mean, sd});
    }
  }
  return summary;
}

// ---- t-test machinery ----

namespace {

// continued fraction for the incomplete beta function (modified Lentz)
double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete beta: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x);
  const double bt = std::exp(ln_bt);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return bt * betacf(a, b, x) / a;
  }
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_tailed_p(double t, double df) {
  if (df <= 0.0) throw std::invalid_argument("student_t: df must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return regularized_incomplete_beta(df / 2.0, 0.5, x);
}

TTestResult paired_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_ttest: length mismatch");
  if (a.size() < 2) throw std::invalid_argument("paired_ttest: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> diffs(n);
  bool all_zero = true;
  for (std::size_t i = 0; i < n; ++i) {
    diffs[i] = a[i] - b[i];
    if (diffs[i] != 0.0) all_zero = false;
  }
  TTestResult result;
  if (all_zero) {
    result.degenerate = true;
    result.t = 0.0;
    result.p_value = 1.0;
    return result;
  }
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double d : diffs) var += (d - mean) * (d - mean);
  var /= static_cast<double>(n - 1);
  const double sd = std::sqrt(var);
  if (sd == 0.0) {
    result.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                          : -std::numeric_limits<double>::infinity();
    result.p_value = 0.0;
    return result;
  }
  result.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  result.p_value = student_t_two_tailed_p(result.t, static_cast<double>(n - 1));
  return result;
}

// ---- CSV ----

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_results_csv(std::ostream& os, const std::vector<ProtocolResult>& results) {
  os << "method,target_prev,trial,est_prev,ae,rae,kld,sample_size,seed\n";
  for (const auto& result : results) {
    for (const auto& row : result.rows) {
      os << row.method << ',' << format_double(row.target_prevalence) << ',' << row.trial << ','
         << format_double(row.estimated_prevalence) << ',' << format_double(row.ae) << ','
         << format_double(row.rae) << ',' << format_double(row.kld) << ',' << row.sample_size
         << ',' << row.seed << '\n';
    }
  }
}

void write_summary_csv(std::ostream& os, const Summary& summary) {
  os << "method,metric,mean,std\n";
  for (const auto& row : summary.rows) {
    os << row.method << ',' << to_string(row.metric) << ',' << format_double(row.mean) << ','
       << format_double(row.std_dev) << '\n';
  }
}

void write_plot_csv(std::ostream& os, const Summary& summary) {
  os << "method,target_prev,mean_est,std_est\n";
  for (const auto& row : summary.plot) {
    os << row.method << ',' << format_double(row.target_prevalence) << ','
       << format_double(row.mean_estimate) << ',' << format_double(row.std_estimate) << '\n';
  }
}

std::vector<ProtocolRow> read_results_csv(std::istream& is) {
  std::vector<ProtocolRow> rows;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("results csv: empty file");
  if (line.rfind("method,target_prev", 0) != 0) {
    throw std::runtime_error("results csv: unexpected header '" + line + "'");
  }
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) {
      throw std::runtime_error("results csv line " + std::to_string(line_no) + ": expected 9 fields");
    }
    ProtocolRow row;
    row.method = fields[0];
    row.target_prevalence = std::stod(fields[1]);
    row.trial = std::stoul(fields[2]);
    row.estimated_prevalence = std::stod(fields[3]);
    row.ae = std::stod(fields[4]);
    row.rae = std::stod(fields[5]);
    row.kld = std::stod(fields[6]);
    row.sample_size = std::stoul(fields[7]);
    row.seed = std::stoull(fields[8]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace prevalens
