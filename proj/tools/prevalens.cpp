#include <CLI11.hpp>

#include <cstdint>
#include <string>
#include <vector>

#include "prevalens/pipeline.hpp"

using prevalens::ExperimentConfig;

namespace {

// --config is applied before the flag defaults are bound, so explicit flags
// override file values
std::string prescan_config_path(int argc, char** argv) {
  for (int i = 1; i < argc - 1; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" || arg == "-c") return argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) return arg.substr(9);
  }
  return {};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prevalens: class-prevalence estimation toolkit"};
  app.require_subcommand(1);

  ExperimentConfig config;
  const std::string config_path = prescan_config_path(argc, argv);
  if (!config_path.empty()) {
    try {
      config = prevalens::load_config(config_path);
    } catch (const std::exception& e) {
      std::cerr << "error [configure]: " << e.what() << "\n";
      return 1;
    }
  }

  auto* run = app.add_subcommand("run", "run the full pipeline and write result CSVs");
  std::string config_path_sink;
  std::string quantifiers_csv, seeds_csv, grid_csv;
  run->add_option("-c,--config", config_path_sink, "config file (key: value lines)");
  run->add_option("--dataset", config.dataset_path, "training TSV (<label>\\t<text>)");
  run->add_option("--testset", config.testset_path, "test-pool TSV");
  run->add_flag("--synthetic,!--no-synthetic", config.synthetic,
                "generate Gaussian synthetic data instead of loading TSVs");
  run->add_option("--synthetic-train-n", config.synthetic_train_n);
  run->add_option("--synthetic-test-n", config.synthetic_test_n);
  run->add_option("--synthetic-dim", config.synthetic_dim);
  run->add_option("--synthetic-separation", config.synthetic_separation);
  run->add_option("--synthetic-prevalence", config.synthetic_prevalence);
  run->add_option("--synthetic-seed", config.synthetic_seed);
  run->add_option("--hash-dim", config.hash_dim, "hashed bag-of-words buckets");
  run->add_option("--scheme", config.scheme, "binary | tf | logtf");
  run->add_option("--split-fraction", config.split_fraction);
  run->add_option("--classifier", config.classifier, "mlp | mnb | lstm | oracle");
  run->add_option("--oracle-tpr", config.oracle_tpr);
  run->add_option("--oracle-fpr", config.oracle_fpr);
  run->add_option("--mnb-alpha", config.mnb_alpha);
  run->add_flag("--mnb-alpha-sweep", config.mnb_alpha_sweep,
                "pick alpha from {1e-4,1e-2,1,1e2,1e4} by validation accuracy");
  run->add_option("--quantifiers", quantifiers_csv, "comma list of cc,acc,pcc,pacc,emq,quanet");
  run->add_option("--grid", grid_csv, "comma list of target prevalences (default 21-point grid)");
  run->add_option("--trials", config.trials);
  run->add_option("--sample-size", config.sample_size);
  run->add_option("--seeds", seeds_csv, "comma list of run seeds");
  run->add_option("--quanet-max-iterations", config.quanet_max_iterations);
  run->add_option("--quanet-patience", config.quanet_patience);
  run->add_option("--scale", config.scale, "desk | paper");
  run->add_option("-o,--output", config.output_dir);

  auto* report = app.add_subcommand("report", "summarize result CSVs from a run directory");
  std::string report_dir;
  report->add_option("dir", report_dir, "directory holding results_*.csv")->required();

  auto* demo = app.add_subcommand("demo", "desk-scale synthetic end-to-end smoke run");
  std::uint64_t demo_seed = 1;
  std::string demo_out = "demo_out";
  demo->add_option("--seed", demo_seed);
  demo->add_option("-o,--output", demo_out);

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    try {
      auto split_commas = [](const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
          if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
          } else {
            cur.push_back(c);
          }
        }
        if (!cur.empty()) out.push_back(cur);
        return out;
      };
      if (!quantifiers_csv.empty()) config.quantifiers = split_commas(quantifiers_csv);
      if (!seeds_csv.empty()) {
        config.seeds.clear();
        for (const auto& s : split_commas(seeds_csv)) config.seeds.push_back(std::stoull(s));
      }
      if (!grid_csv.empty()) {
        config.grid.clear();
        for (const auto& s : split_commas(grid_csv)) config.grid.push_back(std::stod(s));
      }
    } catch (const std::exception& e) {
      std::cerr << "error [configure]: " << e.what() << "\n";
      return 1;
    }
    return prevalens::run_experiment(config);
  }
  if (report->parsed()) return prevalens::report_results(report_dir);
  if (demo->parsed()) return prevalens::run_demo(demo_seed, demo_out);
  return 1;
}
