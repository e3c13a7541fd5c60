#include "prevalens/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace prevalens {

LabeledCorpus::LabeledCorpus(std::vector<Document> docs) : docs_(std::move(docs)), dirty_(true) {}

void LabeledCorpus::add(Document doc) {
  if (!dirty_ && doc.label == Label::Positive) ++positive_count_;
  docs_.push_back(std::move(doc));
}

std::vector<Document>& LabeledCorpus::mutable_docs() {
  dirty_ = true;
  return docs_;
}

void LabeledCorpus::recount() const {
  positive_count_ = 0;
  for (const auto& d : docs_)
    if (d.label == Label::Positive) ++positive_count_;
  dirty_ = false;
}

std::size_t LabeledCorpus::positive_count() const {
  if (dirty_) recount();
  return positive_count_;
}

double LabeledCorpus::positive_prevalence() const {
  if (docs_.empty()) return 0.0;
  return static_cast<double>(positive_count()) / static_cast<double>(docs_.size());
}

std::vector<std::size_t> LabeledCorpus::indices_of(Label label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < docs_.size(); ++i)
    if (docs_[i].label == label) out.push_back(i);
  return out;
}

std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

// ---- ingestion ----

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

Label parse_label(const std::string& raw, std::size_t line_no) {
  const std::string s = lower(raw);
  if (s == "pos") return Label::Positive;
  if (s == "neg") return Label::Negative;
  throw std::runtime_error("line " + std::to_string(line_no) + ": unknown label '" + raw +
                           "' (expected pos or neg)");
}

}  // namespace

LabeledCorpus load_corpus_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  LabeledCorpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": missing tab separator");
    }
    Document doc;
    doc.id = static_cast<std::int64_t>(line_no);
    doc.label = parse_label(line.substr(0, tab), line_no);
    doc.text = line.substr(tab + 1);
    corpus.add(std::move(doc));
  }
  if (corpus.empty()) throw std::runtime_error(path + ": empty corpus");
  return corpus;
}

void save_corpus_tsv(const std::string& path, const LabeledCorpus& corpus) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& doc : corpus.docs()) {
    os << (doc.label == Label::Positive ? "pos" : "neg") << '\t';
    if (!doc.text.empty()) {
      os << doc.text;
    } else {
      // pseudo-text carrying the feature vector
      bool first = true;
      std::ostringstream text;
      for (const auto& [idx, w] : doc.features) {
        if (!first) text << ' ';
        first = false;
        text << 'f' << idx << ':' << w;
      }
      os << text.str();
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

// ---- featurization ----

BowScheme bow_scheme_from_string(const std::string& s) {
  if (s == "binary") return BowScheme::Binary;
  if (s == "tf") return BowScheme::Tf;
  if (s == "logtf") return BowScheme::LogTf;
  throw std::invalid_argument("unknown feature scheme '" + s + "' (binary, tf, logtf)");
}

std::string to_string(BowScheme s) {
  switch (s) {
    case BowScheme::Binary: return "binary";
    case BowScheme::Tf: return "tf";
    case BowScheme::LogTf: return "logtf";
  }
  return "?";
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

SparseVec hash_features(const std::string& text, std::size_t hash_dim, BowScheme scheme) {
  if (hash_dim < 2) throw std::invalid_argument("hash_dim must be >= 2");
  std::map<std::uint32_t, double> counts;
  for (const auto& tok : tokenize(text)) {
    counts[static_cast<std::uint32_t>(fnv1a(tok) % hash_dim)] += 1.0;
  }
  SparseVec out;
  out.reserve(counts.size());
  for (auto& [idx, count] : counts) {
    double w = count;
    if (scheme == BowScheme::Binary) w = 1.0;
    if (scheme == BowScheme::LogTf) w = 1.0 + std::log(count);
    out.emplace_back(idx, w);
  }
  return out;
}

void featurize_hashed_bow(LabeledCorpus& corpus, std::size_t hash_dim, BowScheme scheme) {
  for (auto& doc : corpus.mutable_docs()) {
    doc.features = hash_features(doc.text, hash_dim, scheme);
  }
}

// ---- splits & sampling ----

std::pair<LabeledCorpus, LabeledCorpus> split_train_val(const LabeledCorpus& corpus,
                                                        double train_fraction,
                                                        std::uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0) {
    throw std::invalid_argument("train_fraction must be in (0,1)");
  }
  auto pos = corpus.indices_of(Label::Positive);
  auto neg = corpus.indices_of(Label::Negative);
  if (pos.size() < 2 || neg.size() < 2) {
    throw std::runtime_error("split_train_val: each class needs at least 2 documents (have " +
                             std::to_string(pos.size()) + " pos, " + std::to_string(neg.size()) +
                             " neg)");
  }
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  LabeledCorpus train, val;
  auto take = [&](std::vector<std::size_t>& idx) {
    std::size_t n_train = round_half_up(train_fraction * static_cast<double>(idx.size()));
    n_train = std::min(std::max<std::size_t>(n_train, 1), idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < n_train ? train : val).add(corpus.docs()[idx[i]]);
    }
  };
  take(pos);
  take(neg);
  return {std::move(train), std::move(val)};
}

std::size_t feasible_sample_size(std::size_t pool_positives, std::size_t pool_negatives,
                                 double target_prevalence, std::size_t requested) {
  for (std::size_t n = requested; n > 0; --n) {
    const std::size_t need_pos = round_half_up(target_prevalence * static_cast<double>(n));
    if (need_pos <= pool_positives && (n - need_pos) <= pool_negatives) return n;
  }
  return 0;
}

namespace {
// first k elements of a seeded partial Fisher-Yates over idx
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> idx, std::size_t k,
                                                    Rng& rng) {
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.next_index(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}
}  // namespace

SampleDraw draw_sample_at_prevalence(const LabeledCorpus& pool, double target_prevalence,
                                     std::size_t sample_size, std::uint64_t seed) {
  if (sample_size == 0) throw std::invalid_argument("sample_size must be positive");
  if (target_prevalence < 0.0 || target_prevalence > 1.0) {
    throw std::invalid_argument("target prevalence must be in [0,1]");
  }
  const std::size_t need_pos = round_half_up(target_prevalence * static_cast<double>(sample_size));
  const std::size_t need_neg = sample_size - need_pos;
  auto pos = pool.indices_of(Label::Positive);
  auto neg = pool.indices_of(Label::Negative);
  if (pos.size() < need_pos) {
    throw std::runtime_error("sample needs " + std::to_string(need_pos) + " positives, pool has " +
                             std::to_string(pos.size()));
  }
  if (neg.size() < need_neg) {
    throw std::runtime_error("sample needs " + std::to_string(need_neg) + " negatives, pool has " +
                             std::to_string(neg.size()));
  }
  Rng rng(seed);
  SampleDraw draw;
  draw.target_prevalence = target_prevalence;
  draw.sample_size = sample_size;
  draw.realized_prevalence = static_cast<double>(need_pos) / static_cast<double>(sample_size);
  draw.indices = sample_without_replacement(std::move(pos), need_pos, rng);
  auto neg_idx = sample_without_replacement(std::move(neg), need_neg, rng);
  draw.indices.insert(draw.indices.end(), neg_idx.begin(), neg_idx.end());
  draw.document_ids.reserve(draw.indices.size());
  for (auto i : draw.indices) draw.document_ids.push_back(pool.docs()[i].id);
  return draw;
}

std::vector<Document> materialize_sample(const LabeledCorpus& pool, const SampleDraw& draw) {
  std::vector<Document> docs;
  docs.reserve(draw.indices.size());
  for (auto i : draw.indices) docs.push_back(pool.docs()[i]);
  return docs;
}

std::vector<double> prevalence_grid() {
  std::vector<double> grid;
  grid.push_back(0.01);
  for (int k = 1; k <= 19; ++k) grid.push_back(0.05 * k);
  grid.push_back(0.99);
  return grid;
}

// ---- synthetic data ----

SyntheticGenerator::SyntheticGenerator(std::size_t dim, double separation, std::uint64_t seed)
    : dim_(dim), separation_(separation), seed_(seed) {
  if (dim == 0) throw std::invalid_argument("synthetic dim must be >= 1");
  if (separation < 0.0) throw std::invalid_argument("separation must be >= 0");
  Rng rng(mix_seed(seed, 0x5eed));
  direction_.resize(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& x : direction_) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (auto& x : direction_) x /= norm;
}

LabeledCorpus SyntheticGenerator::generate(std::size_t n, double positive_prevalence,
                                           std::uint64_t seed) const {
  if (n < 2) throw std::invalid_argument("synthetic corpus needs n >= 2");
  if (positive_prevalence < 0.0 || positive_prevalence > 1.0) {
    throw std::invalid_argument("prevalence must be in [0,1]");
  }
  const std::size_t n_pos = round_half_up(positive_prevalence * static_cast<double>(n));
  Rng rng(mix_seed(seed, 0xda7a));
  std::vector<Document> docs;
  docs.reserve(n);
  const double half = separation_ / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    Document doc;
    doc.id = static_cast<std::int64_t>(i);
    doc.label = i < n_pos ? Label::Positive : Label::Negative;
    const double sign = doc.label == Label::Positive ? +1.0 : -1.0;
    doc.features.reserve(dim_);
    for (std::size_t d = 0; d < dim_; ++d) {
      const double x = sign * half * direction_[d] + rng.normal();
      doc.features.emplace_back(static_cast<std::uint32_t>(d), x);
    }
    docs.push_back(std::move(doc));
  }
  Rng order_rng(mix_seed(seed, 0x0cde));
  order_rng.shuffle(docs);
  return LabeledCorpus(std::move(docs));
}

double SyntheticGenerator::bayes_posterior(const Document& doc, double positive_prior) const {
  if (positive_prior <= 0.0 || positive_prior >= 1.0) {
    throw std::invalid_argument("prior must be in (0,1)");
  }
  // log-likelihood ratio reduces to separation * <direction, x> for the
  // symmetric unit-covariance pair of means
  double proj = 0.0;
  for (const auto& [idx, w] : doc.features) {
    if (idx < dim_) proj += direction_[idx] * w;
  }
  const double llr = separation_ * proj;
  const double logit_prior = std::log(positive_prior / (1.0 - positive_prior));
  return 1.0 / (1.0 + std::exp(-(llr + logit_prior)));
}

void SyntheticGenerator::save_metadata(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "generator: gaussian-pair\n";
  os << "dim: " << dim_ << "\n";
  os << "separation: " << separation_ << "\n";
  os << "seed: " << seed_ << "\n";
  if (!os) throw std::runtime_error("write failed for " + path);
}

LabeledCorpus synthetic_corpus(std::size_t n, double positive_prevalence, double separation,
                               std::size_t dim, std::uint64_t seed) {
  SyntheticGenerator gen(dim, separation, seed);
  return gen.generate(n, positive_prevalence, mix_seed(seed, 1));
}

}  // namespace prevalens
