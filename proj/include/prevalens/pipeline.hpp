#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prevalens/data.hpp"
#include "prevalens/evaluation.hpp"

namespace prevalens {

// Everything a run needs; serializes to/from flat "key: value" text.
struct ExperimentConfig {
  // data: a TSV pair, or the synthetic generator
  std::string dataset_path;
  std::string testset_path;
  bool synthetic = true;
  std::size_t synthetic_train_n = 5000;
  std::size_t synthetic_test_n = 5000;
  std::size_t synthetic_dim = 16;
  double synthetic_separation = 4.0;
  double synthetic_prevalence = 0.5;
  std::uint64_t synthetic_seed = 7;
  std::size_t hash_dim = 512;
  std::string scheme = "tf";  // binary | tf | logtf
  double split_fraction = 0.6;

  // classifier
  std::string classifier = "mlp";  // mlp | mnb | lstm | oracle
  double oracle_tpr = 0.9;
  double oracle_fpr = 0.1;
  double mnb_alpha = 1.0;
  bool mnb_alpha_sweep = false;

  // quantifiers & protocol
  std::vector<std::string> quantifiers{"cc", "acc", "pcc", "pacc", "emq", "quanet"};
  std::vector<double> grid;  // empty = standard 21-point grid
  std::size_t trials = 100;
  std::size_t sample_size = 500;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string scale = "desk";  // desk | paper
  std::string output_dir = "out";

  // training-loop overrides, mainly for quick runs
  std::size_t quanet_max_iterations = 20000;
  std::size_t quanet_patience = 20;
};

ExperimentConfig config_from_kv(const std::vector<std::pair<std::string, std::string>>& kv);
std::vector<std::pair<std::string, std::string>> config_to_kv(const ExperimentConfig& config);
ExperimentConfig load_config(const std::string& path);

// Full pipeline: ingest -> split -> train classifier -> estimate rates ->
// train quanet (if selected) -> protocol -> CSVs + manifest. One results CSV
// per seed; on failure a FAILED marker file names the stage.
int run_experiment(const ExperimentConfig& config);

// Aggregates the results CSVs in a run directory into a method x metric
// table with best-per-column marks and, given >= 2 seed runs, paired t-test
// annotations against the best method.
int report_results(const std::string& results_dir);

// Desk-scale synthetic smoke run: oracle + mlp classifiers, all six
// quantification methods, 21-point grid x 10 trials x samples of 100.
int run_demo(std::uint64_t seed, const std::string& output_dir);

}  // namespace prevalens
