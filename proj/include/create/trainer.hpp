#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "create/dataset.hpp"
#include "create/eval.hpp"
#include "create/losses.hpp"
#include "create/memory.hpp"
#include "create/model.hpp"
#include "create/rng.hpp"

namespace create {

enum class Ablation { Full, AeOnly, Nme };
std::string ablation_name(Ablation a);
Ablation parse_ablation(const std::string& name);

struct TrainConfig {
  int initial_epochs = 60;
  int incremental_epochs = 40;
  int finetune_epochs = 20;
  int batch_size = 64;
  double learning_rate = 0.1;
  double finetune_lr = 0.0;  // 0: learning_rate / 10
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::vector<double> lr_milestones = {0.6, 0.8};  // fractions of the budget
  double lr_gamma = 0.1;
  LossConfig loss;
  std::uint64_t seed = 1;
  std::size_t finetune_per_class = 0;  // 0: the memory quota
  bool verbose = true;

  void validate() const;
};

/// Milestone decay: rate = initial * gamma^(milestones passed).
struct LrSchedule {
  double initial = 0.1;
  double gamma = 0.1;
  std::vector<int> milestones;  // epoch indices, ascending

  static LrSchedule from_fractions(double initial, double gamma,
                                   const std::vector<double>& fractions, int budget);
  double at(int epoch) const;
};

struct EpochLog {
  int phase = 0;
  int epoch = 0;
  bool finetune = false;
  double lr = 0, ce = 0, kd = 0, cr = 0, total = 0, accuracy = 0;
};

struct ContinualState {
  FeatureExtractor extractor;
  AutoEncoderBank bank;
  std::optional<FeatureExtractor> old_extractor;  // frozen snapshot, t > 1
  std::optional<AutoEncoderBank> old_bank;
  ExemplarMemory memory;
  int phase = 0;  // completed tasks
  Rng rng{1};
};

ContinualState init_state(std::size_t input_dim, const ModelConfig& model,
                          const MemoryPolicy& policy, SelectionRule selection,
                          std::uint64_t seed);

/// One pass of Algorithm 1: snapshot (t>1), grow the bank, train on
/// D_t union M_t, balanced fine-tuning of the bank (t>1), memory update.
std::vector<EpochLog> train_task(ContinualState& state, const Task& task,
                                 const TrainConfig& config);

using PhaseHook = std::function<void(const ContinualState&, const PhaseRecord&)>;

RunRecord run_experiment(const SplitDataset& data, const TaskProtocol& protocol,
                         const ModelConfig& model, const TrainConfig& config,
                         SelectionRule selection, Ablation ablation,
                         const std::string& config_echo, const PhaseHook& on_phase = {});

}  // namespace create
