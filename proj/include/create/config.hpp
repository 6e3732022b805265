#pragma once

#include <cstdint>
#include <string>

#include "create/dataset.hpp"
#include "create/memory.hpp"
#include "create/model.hpp"
#include "create/trainer.hpp"

namespace create {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | idx | table
  std::uint64_t seed = 1;
  // synthetic generator
  int num_classes = 10;
  int clusters_per_class = 2;
  int dim = 32;
  int samples_per_class = 200;
  double cluster_spread = 0.5;
  double cluster_separation = 6.0;
  // idx files
  std::string train_images, train_labels, test_images, test_labels;
  // textual tables
  std::string train_table, test_table;

  SplitDataset load() const;
};

/// Flat key = value configuration with dotted section prefixes. Every key has
/// a default; unknown keys are fatal. echo() emits the canonical listing,
/// which re-parses to an identical config.
struct ExperimentConfig {
  DatasetConfig dataset;
  TaskProtocol protocol;
  SelectionRule selection = SelectionRule::Herding;
  ModelConfig model;
  TrainConfig train;
  Ablation ablation = Ablation::Full;

  static ExperimentConfig parse_file(const std::string& path);
  static ExperimentConfig parse_text(const std::string& text, const std::string& origin);
  std::string echo() const;
  /// Single-seed override: dataset, protocol and train seeds all set to s.
  void apply_seed(std::uint64_t s);

  RunRecord run(const PhaseHook& on_phase = {}) const;
};

}  // namespace create
