#include "prevalens/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "prevalens/quanet.hpp"

namespace prevalens {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',' || c == ' ') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_list(const std::vector<std::string>& xs) {
  std::string out;
  for (const auto& x : xs) out += (out.empty() ? "" : ",") + x;
  return out;
}

bool parse_bool(const std::string& v) {
  return v == "true" || v == "1" || v == "yes" || v == "on";
}

}  // namespace

ExperimentConfig config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv) {
  ExperimentConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "dataset") c.dataset_path = value;
    else if (key == "testset") c.testset_path = value;
    else if (key == "synthetic") c.synthetic = parse_bool(value);
    else if (key == "synthetic_train_n") c.synthetic_train_n = std::stoul(value);
    else if (key == "synthetic_test_n") c.synthetic_test_n = std::stoul(value);
    else if (key == "synthetic_dim") c.synthetic_dim = std::stoul(value);
    else if (key == "synthetic_separation") c.synthetic_separation = std::stod(value);
    else if (key == "synthetic_prevalence") c.synthetic_prevalence = std::stod(value);
    else if (key == "synthetic_seed") c.synthetic_seed = std::stoull(value);
    else if (key == "hash_dim") c.hash_dim = std::stoul(value);
    else if (key == "scheme") c.scheme = value;
    else if (key == "split_fraction") c.split_fraction = std::stod(value);
    else if (key == "classifier") c.classifier = value;
    else if (key == "oracle_tpr") c.oracle_tpr = std::stod(value);
    else if (key == "oracle_fpr") c.oracle_fpr = std::stod(value);
    else if (key == "mnb_alpha") c.mnb_alpha = std::stod(value);
    else if (key == "mnb_alpha_sweep") c.mnb_alpha_sweep = parse_bool(value);
    else if (key == "quantifiers") c.quantifiers = split_list(value);
    else if (key == "grid") {
      c.grid.clear();
      for (const auto& x : split_list(value)) c.grid.push_back(std::stod(x));
    } else if (key == "trials") c.trials = std::stoul(value);
    else if (key == "sample_size") c.sample_size = std::stoul(value);
    else if (key == "seeds") {
      c.seeds.clear();
      for (const auto& x : split_list(value)) c.seeds.push_back(std::stoull(x));
    } else if (key == "quanet_max_iterations") c.quanet_max_iterations = std::stoul(value);
    else if (key == "quanet_patience") c.quanet_patience = std::stoul(value);
    else if (key == "scale") c.scale = value;
    else if (key == "output") c.output_dir = value;
    else if (key == "version") {
      // manifest echo; accepted so manifests can be re-run as configs
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> config_to_kv(const ExperimentConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("dataset", c.dataset_path);
  kv.emplace_back("testset", c.testset_path);
  kv.emplace_back("synthetic", c.synthetic ? "true" : "false");
  kv.emplace_back("synthetic_train_n", std::to_string(c.synthetic_train_n));
  kv.emplace_back("synthetic_test_n", std::to_string(c.synthetic_test_n));
  kv.emplace_back("synthetic_dim", std::to_string(c.synthetic_dim));
  kv.emplace_back("synthetic_separation", format_double(c.synthetic_separation));
  kv.emplace_back("synthetic_prevalence", format_double(c.synthetic_prevalence));
  kv.emplace_back("synthetic_seed", std::to_string(c.synthetic_seed));
  kv.emplace_back("hash_dim", std::to_string(c.hash_dim));
  kv.emplace_back("scheme", c.scheme);
  kv.emplace_back("split_fraction", format_double(c.split_fraction));
  kv.emplace_back("classifier", c.classifier);
  kv.emplace_back("oracle_tpr", format_double(c.oracle_tpr));
  kv.emplace_back("oracle_fpr", format_double(c.oracle_fpr));
  kv.emplace_back("mnb_alpha", format_double(c.mnb_alpha));
  kv.emplace_back("mnb_alpha_sweep", c.mnb_alpha_sweep ? "true" : "false");
  kv.emplace_back("quantifiers", join_list(c.quantifiers));
  if (!c.grid.empty()) {
    std::vector<std::string> gs;
    for (double g : c.grid) gs.push_back(format_double(g));
    kv.emplace_back("grid", join_list(gs));
  }
  kv.emplace_back("trials", std::to_string(c.trials));
  kv.emplace_back("sample_size", std::to_string(c.sample_size));
  std::vector<std::string> seeds;
  for (auto s : c.seeds) seeds.push_back(std::to_string(s));
  kv.emplace_back("seeds", join_list(seeds));
  kv.emplace_back("quanet_max_iterations", std::to_string(c.quanet_max_iterations));
  kv.emplace_back("quanet_patience", std::to_string(c.quanet_patience));
  kv.emplace_back("scale", c.scale);
  kv.emplace_back("output", c.output_dir);
  return kv;
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_kv(load_kv(path));
}

namespace {

struct ScalePreset {
  std::size_t mlp_hidden1, mlp_hidden2;
  std::size_t quanet_lstm_hidden;
  std::vector<std::size_t> quanet_dense;
  LstmClassifierConfig lstm_config;
};

ScalePreset preset_for(const std::string& scale) {
  if (scale == "paper") {
    ScalePreset p;
    p.mlp_hidden1 = 1024;
    p.mlp_hidden2 = 100;
    p.quanet_lstm_hidden = 64;
    p.quanet_dense = {1024, 512};
    p.lstm_config.word_embedding_dim = 100;
    p.lstm_config.lstm_hidden = 128;
    p.lstm_config.dense1 = 1024;
    p.lstm_config.dense2 = 100;
    return p;
  }
  if (scale == "desk") {
    ScalePreset p;
    p.mlp_hidden1 = 64;
    p.mlp_hidden2 = 16;
    p.quanet_lstm_hidden = 16;
    p.quanet_dense = {128, 64};
    p.lstm_config.vocab_buckets = 2000;
    p.lstm_config.word_embedding_dim = 16;
    p.lstm_config.lstm_hidden = 16;
    p.lstm_config.dense1 = 64;
    p.lstm_config.dense2 = 16;
    return p;
  }
  throw std::invalid_argument("unknown scale '" + scale + "' (desk or paper)");
}

// All trained state one run needs to build its quantifier set.
struct RunArtifacts {
  std::shared_ptr<const Classifier> classifier;
  RateEstimates rates;
  double train_prior = 0.5;
  std::unique_ptr<QuaNetModel> quanet;
};

std::shared_ptr<const Classifier> train_classifier_stage(const ExperimentConfig& config,
                                                         const ScalePreset& preset,
                                                         const LabeledCorpus& train,
                                                         const LabeledCorpus& validation,
                                                         std::size_t feature_dim,
                                                         std::uint64_t seed) {
  if (config.classifier == "mlp") {
    MlpConfig mlp;
    mlp.input_dim = feature_dim;
    mlp.hidden1 = preset.mlp_hidden1;
    mlp.hidden2 = preset.mlp_hidden2;
    return train_mlp_classifier(train, mlp, seed);
  }
  if (config.classifier == "mnb") {
    double alpha = config.mnb_alpha;
    if (config.mnb_alpha_sweep) {
      double best_acc = -1.0;
      for (double candidate : {1e-4, 1e-2, 1.0, 1e2, 1e4}) {
        MnbClassifier probe(train_mnb(train, candidate, feature_dim));
        const double a = accuracy(probe, validation);
        if (a > best_acc) {
          best_acc = a;
          alpha = candidate;
        }
      }
    }
    return std::make_shared<MnbClassifier>(train_mnb(train, alpha, feature_dim));
  }
  if (config.classifier == "lstm") {
    LstmClassifierConfig lstm = preset.lstm_config;
    return train_lstm_classifier(train, lstm, seed);
  }
  if (config.classifier == "oracle") {
    OracleConfig oracle;
    oracle.tpr_target = config.oracle_tpr;
    oracle.fpr_target = config.oracle_fpr;
    oracle.noise_seed = mix_seed(seed, 0x0bac1e);
    return std::make_shared<OracleClassifier>(oracle);
  }
  throw std::invalid_argument("unknown classifier '" + config.classifier +
                              "' (mlp, mnb, lstm, oracle)");
}

std::vector<std::unique_ptr<Quantifier>> build_quantifiers(
    const std::vector<std::string>& names, const RunArtifacts& artifacts,
    const std::string& suffix) {
  std::vector<std::unique_ptr<Quantifier>> out;
  for (const auto& base : names) {
    const std::string label = suffix.empty() ? base : base + "@" + suffix;
    if (base == "cc") {
      out.push_back(std::make_unique<CcQuantifier>(artifacts.classifier, label));
    } else if (base == "acc") {
      out.push_back(std::make_unique<AccQuantifier>(artifacts.classifier, artifacts.rates, label));
    } else if (base == "pcc") {
      out.push_back(std::make_unique<PccQuantifier>(artifacts.classifier, label));
    } else if (base == "pacc") {
      out.push_back(
          std::make_unique<PaccQuantifier>(artifacts.classifier, artifacts.rates, label));
    } else if (base == "emq") {
      out.push_back(std::make_unique<EmqQuantifier>(artifacts.classifier, artifacts.train_prior,
                                                    label));
    } else if (base == "quanet") {
      if (!artifacts.quanet) {
        throw std::logic_error("quanet quantifier requested but no model was trained");
      }
      out.push_back(std::make_unique<QuaNetQuantifier>(*artifacts.quanet, artifacts.classifier,
                                                       artifacts.rates, label));
    } else {
      throw std::invalid_argument("unknown quantifier '" + base +
                                  "' (cc, acc, pcc, pacc, emq, quanet)");
    }
  }
  return out;
}

void write_failed_marker(const fs::path& dir, const std::string& stage, const std::string& what) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream os(dir / "FAILED");
  os << "stage: " << stage << "\n" << "error: " << what << "\n";
}

void print_summary_table(std::ostream& os, const Summary& summary) {
  os << "\n  method            AE        RAE       KLD\n";
  std::map<std::string, std::map<std::string, double>> table;
  std::vector<std::string> order;
  for (const auto& row : summary.rows) {
    if (table.find(row.method) == table.end()) order.push_back(row.method);
    table[row.method][to_string(row.metric)] = row.mean;
  }
  for (const auto& method : order) {
    char line[160];
    std::snprintf(line, sizeof(line), "  %-16s  %-8.4f  %-8.4f  %-8.4f\n", method.c_str(),
                  table[method]["ae"], table[method]["rae"], table[method]["kld"]);
    os << line;
  }
}

}  // namespace

int run_experiment(const ExperimentConfig& config) {
  const fs::path out_dir(config.output_dir);
  std::string stage = "configure";
  try {
    if (config.quantifiers.empty()) throw std::invalid_argument("no quantifiers selected");
    for (const auto& name : config.quantifiers) {
      static const std::set<std::string> known{"cc", "acc", "pcc", "pacc", "emq", "quanet"};
      if (!known.count(name)) {
        throw std::invalid_argument("unknown quantifier '" + name +
                                    "' (cc, acc, pcc, pacc, emq, quanet)");
      }
    }
    const ScalePreset preset = preset_for(config.scale);
    const std::vector<double> grid = config.grid.empty() ? prevalence_grid() : config.grid;

    fs::create_directories(out_dir);

    stage = "data";
    LabeledCorpus full_train, test_pool;
    std::size_t feature_dim = 0;
    std::unique_ptr<SyntheticGenerator> generator;
    if (config.synthetic) {
      generator = std::make_unique<SyntheticGenerator>(config.synthetic_dim,
                                                       config.synthetic_separation,
                                                       config.synthetic_seed);
      full_train = generator->generate(config.synthetic_train_n, config.synthetic_prevalence,
                                       mix_seed(config.synthetic_seed, 1));
      test_pool = generator->generate(config.synthetic_test_n, 0.5,
                                      mix_seed(config.synthetic_seed, 2));
      feature_dim = config.synthetic_dim;
      generator->save_metadata((out_dir / "synthetic_meta.txt").string());
    } else {
      if (config.dataset_path.empty() || config.testset_path.empty()) {
        throw std::invalid_argument("dataset and testset paths are required when synthetic=false");
      }
      full_train = load_corpus_tsv(config.dataset_path);
      test_pool = load_corpus_tsv(config.testset_path);
      const auto scheme = bow_scheme_from_string(config.scheme);
      featurize_hashed_bow(full_train, config.hash_dim, scheme);
      featurize_hashed_bow(test_pool, config.hash_dim, scheme);
      feature_dim = config.hash_dim;
    }

    std::vector<ProtocolResult> all_results;
    for (const auto run_seed : config.seeds) {
      stage = "split";
      auto [train, validation] =
          split_train_val(full_train, config.split_fraction, mix_seed(run_seed, 0x5b11));

      stage = "classifier";
      RunArtifacts artifacts;
      artifacts.classifier = train_classifier_stage(config, preset, train, validation,
                                                    feature_dim, mix_seed(run_seed, 0xc1f));
      artifacts.train_prior = train.positive_prevalence();
      save_classifier_params(
          (out_dir / ("classifier_seed" + std::to_string(run_seed) + ".qnt")).string(),
          *artifacts.classifier);

      stage = "rates";
      artifacts.rates = estimate_rates(*artifacts.classifier, validation);

      const bool wants_quanet =
          std::find(config.quantifiers.begin(), config.quantifiers.end(), "quanet") !=
          config.quantifiers.end();
      if (wants_quanet) {
        stage = "quanet";
        QuaNetConfig qcfg;
        qcfg.embedding_dim = artifacts.classifier->embedding_dim();
        qcfg.lstm_hidden = preset.quanet_lstm_hidden;
        qcfg.dense_dims = preset.quanet_dense;
        QuaNetTrainConfig qtrain;
        qtrain.sample_size = config.sample_size;
        qtrain.max_iterations = config.quanet_max_iterations;
        qtrain.patience = config.quanet_patience;
        qtrain.seed = mix_seed(run_seed, 0x9e7);
        auto trained = train_quanet(validation, *artifacts.classifier, artifacts.rates, qcfg,
                                    qtrain);
        artifacts.quanet = std::make_unique<QuaNetModel>(std::move(trained.model));
        const std::string base = (out_dir / ("quanet_seed" + std::to_string(run_seed))).string();
        save_quanet(base + ".qnt", base + ".meta", *artifacts.quanet);
      }

      stage = "protocol";
      auto quantifiers = build_quantifiers(config.quantifiers, artifacts, "");
      std::vector<ProtocolResult> run_results;
      for (const auto& q : quantifiers) {
        run_results.push_back(run_protocol(*q, test_pool, grid, config.trials,
                                           config.sample_size, mix_seed(run_seed, 0x960)));
      }

      stage = "write";
      std::ofstream os(out_dir / ("results_seed" + std::to_string(run_seed) + ".csv"));
      write_results_csv(os, run_results);
      for (auto& r : run_results) all_results.push_back(std::move(r));
    }

    stage = "summarize";
    const Summary summary = summarize(all_results);
    {
      std::ofstream os(out_dir / "summary.csv");
      write_summary_csv(os, summary);
    }
    {
      std::ofstream os(out_dir / "plot.csv");
      write_plot_csv(os, summary);
    }

    stage = "manifest";
    auto manifest = config_to_kv(config);
    manifest.emplace_back("version", kVersion);
    save_kv((out_dir / "manifest.txt").string(), manifest);

    print_summary_table(std::cout, summary);
    return 0;
  } catch (const std::exception& e) {
    write_failed_marker(out_dir, stage, e.what());
    std::cerr << "error [" << stage << "]: " << e.what() << "\n";
    return 1;
  }
}

int report_results(const std::string& results_dir) {
  try {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(results_dir)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("results_", 0) == 0 && entry.path().extension() == ".csv") {
        files.push_back(entry.path());
      }
    }
    if (files.empty()) {
      throw std::runtime_error("no results_*.csv files in " + results_dir);
    }
    std::sort(files.begin(), files.end());

    // one ProtocolResult per file = one run
    std::vector<ProtocolResult> runs;
    for (const auto& file : files) {
      std::ifstream is(file);
      if (!is) throw std::runtime_error("cannot open " + file.string());
      ProtocolResult result;
      result.rows = read_results_csv(is);
      runs.push_back(std::move(result));
    }

    const Summary summary = summarize(runs);

    // per-run per-method means, for pairing across runs
    std::map<std::string, std::map<std::string, std::vector<double>>> per_run;  // metric->method
    std::vector<std::string> methods;
    for (const auto& run : runs) {
      std::map<std::string, std::array<std::pair<double, std::size_t>, 3>> acc;
      for (const auto& row : run.rows) {
        auto& a = acc[row.method];
        a[0].first += row.ae;
        a[1].first += row.rae;
        a[2].first += row.kld;
        for (auto& x : a) ++x.second;
      }
      for (const auto& [method, sums] : acc) {
        if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
          methods.push_back(method);
        }
        const char* names[3] = {"ae", "rae", "kld"};
        for (int m = 0; m < 3; ++m) {
          per_run[names[m]][method].push_back(sums[m].first /
                                              static_cast<double>(sums[m].second));
        }
      }
    }

    std::map<std::string, std::map<std::string, double>> means;
    for (const auto& row : summary.rows) {
      means[to_string(row.metric)][row.method] = row.mean;
    }
    const char* metric_names[3] = {"ae", "rae", "kld"};
    std::map<std::string, std::string> best_of;
    for (const auto* metric : metric_names) {
      std::string best;
      double best_value = 0.0;
      for (const auto& [method, value] : means[metric]) {
        if (best.empty() || value < best_value) {
          best = method;
          best_value = value;
        }
      }
      best_of[metric] = best;
    }

    std::cout << "runs: " << runs.size() << "\n\n";
    std::cout << "  method            AE            RAE           KLD\n";
    for (const auto& method : methods) {
      std::cout << "  " << method;
      for (std::size_t pad = method.size(); pad < 16; ++pad) std::cout << ' ';
      for (const auto* metric : metric_names) {
        char cell[48];
        std::string mark;
        if (best_of[metric] == method) {
          mark = "*";
        } else if (runs.size() >= 2) {
          const auto& a = per_run[metric][method];
          const auto& b = per_run[metric][best_of[metric]];
          if (a.size() == b.size() && a.size() >= 2) {
            const auto tt = paired_ttest(a, b);
            if (tt.p_value > 0.05) {
              mark = "+";  // not distinguishable from the best at alpha=0.05
            } else if (tt.p_value > 0.005) {
              mark = "~";  // distinguishable at 0.05 but not at 0.005
            }
          }
        }
        std::snprintf(cell, sizeof(cell), "  %-9.4f%-3s", means[metric][method], mark.c_str());
        std::cout << cell;
      }
      std::cout << "\n";
    }
    std::cout << "\n  * best per column";
    if (runs.size() >= 2) {
      std::cout << "; + p>0.05 vs best, ~ 0.005<p<=0.05 (paired t-test over "
                << runs.size() << " runs)";
    }
    std::cout << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error [report]: " << e.what() << "\n";
    return 1;
  }
}

int run_demo(std::uint64_t seed, const std::string& output_dir) {
  try {
    const fs::path out_dir(output_dir);
    fs::create_directories(out_dir);

    // shared synthetic data
    SyntheticGenerator generator(16, 4.0, mix_seed(seed, 0xdead));
    auto full_train = generator.generate(4000, 0.5, mix_seed(seed, 1));
    auto test_pool = generator.generate(4000, 0.5, mix_seed(seed, 2));
    auto [train, validation] = split_train_val(full_train, 0.6, mix_seed(seed, 0x5b11));

    const auto grid = prevalence_grid();
    const std::size_t trials = 10;
    const std::size_t sample_size = 100;
    const std::uint64_t protocol_seed = mix_seed(seed, 0x960);
    std::vector<ProtocolResult> all_results;

    // oracle classifier: the quantifier family in isolation
    {
      RunArtifacts oracle;
      OracleConfig ocfg;
      ocfg.noise_seed = mix_seed(seed, 0x0bac1e);
      oracle.classifier = std::make_shared<OracleClassifier>(ocfg);
      oracle.rates = estimate_rates(*oracle.classifier, validation);
      oracle.train_prior = train.positive_prevalence();
      auto quantifiers =
          build_quantifiers({"cc", "acc", "pcc", "pacc", "emq"}, oracle, "oracle");
      for (const auto& q : quantifiers) {
        all_results.push_back(
            run_protocol(*q, test_pool, grid, trials, sample_size, protocol_seed));
      }
    }

    // trained mlp classifier, including the quantification network
    {
      RunArtifacts mlp_run;
      MlpConfig mlp;
      mlp.input_dim = 16;
      mlp_run.classifier = train_mlp_classifier(train, mlp, mix_seed(seed, 0xc1f));
      mlp_run.rates = estimate_rates(*mlp_run.classifier, validation);
      mlp_run.train_prior = train.positive_prevalence();

      QuaNetConfig qcfg;
      qcfg.embedding_dim = mlp_run.classifier->embedding_dim();
      QuaNetTrainConfig qtrain;
      qtrain.sample_size = sample_size;
      qtrain.seed = mix_seed(seed, 0x9e7);
      auto trained =
          train_quanet(validation, *mlp_run.classifier, mlp_run.rates, qcfg, qtrain);
      mlp_run.quanet = std::make_unique<QuaNetModel>(std::move(trained.model));

      auto quantifiers =
          build_quantifiers({"cc", "acc", "pcc", "pacc", "emq", "quanet"}, mlp_run, "mlp");
      for (const auto& q : quantifiers) {
        all_results.push_back(
            run_protocol(*q, test_pool, grid, trials, sample_size, protocol_seed));
      }
    }

    {
      std::ofstream os(out_dir / ("results_seed" + std::to_string(seed) + ".csv"));
      write_results_csv(os, all_results);
    }
    const Summary summary = summarize(all_results);
    {
      std::ofstream os(out_dir / "summary.csv");
      write_summary_csv(os, summary);
    }
    {
      std::ofstream os(out_dir / "plot.csv");
      write_plot_csv(os, summary);
    }
    print_summary_table(std::cout, summary);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error [demo]: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace prevalens
