#include <doctest.h>

#include <cmath>
#include <vector>

#include "create/dataset.hpp"
#include "create/errors.hpp"
#include "create/trainer.hpp"
#include "test_util.hpp"

using namespace create;

namespace {

SplitDataset blobs(std::uint64_t seed, int classes, int dim, int per_class) {
  return gen_synthetic_manifolds(seed, classes, 1, dim, per_class, 0.4, 6.0).data;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.hidden = {16};
  m.feature_dim = 8;
  m.latent_dim = 4;
  return m;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.initial_epochs = 6;
  c.incremental_epochs = 4;
  c.finetune_epochs = 2;
  c.batch_size = 16;
  c.verbose = false;
  c.seed = 3;
  return c;
}

std::vector<Tensor> values_of(const std::vector<Var>& params) {
  std::vector<Tensor> out;
  for (const Var& p : params) out.push_back(p.value());
  return out;
}

}  // namespace

TEST_CASE("trainer: a separable two-class task trains to high accuracy") {
  const SplitDataset data = blobs(21, 2, 4, 40);
  TaskProtocol proto;
  proto.base_classes = 0;
  proto.increment = 2;
  proto.memory = MemoryPolicy::per_class(5);
  proto.seed = 21;
  const TaskStream stream = split_tasks(data, proto, proto.seed);
  REQUIRE(stream.tasks.size() == 1);

  ContinualState state =
      init_state(data.train.dim(), tiny_model(), proto.memory, SelectionRule::Herding, 3);
  TrainConfig cfg = tiny_config();
  cfg.initial_epochs = 30;
  const auto logs = train_task(state, stream.tasks[0], cfg);
  REQUIRE(logs.size() == 30);  // no fine-tuning on the first task
  CHECK(logs.back().accuracy >= 99.0);
  CHECK(logs.back().total < logs.front().total);
  CHECK(logs.front().lr == cfg.learning_rate);
  CHECK(state.phase == 1);
  CHECK(state.bank.size() == 2);
  CHECK(state.memory.num_classes() == 2);
  CHECK_FALSE(state.old_bank.has_value());
  for (const EpochLog& log : logs) {
    CHECK(log.phase == 1);
    CHECK_FALSE(log.finetune);
    CHECK(log.kd == 0.0);  // nothing to distill from
  }
}

TEST_CASE("trainer: distillation engages and snapshots stay frozen") {
  const SplitDataset data = blobs(22, 4, 6, 30);
  TaskProtocol proto;
  proto.base_classes = 0;
  proto.increment = 2;
  proto.memory = MemoryPolicy::per_class(4);
  proto.seed = 22;
  const TaskStream stream = split_tasks(data, proto, proto.seed);
  REQUIRE(stream.tasks.size() == 2);

  ContinualState state =
      init_state(data.train.dim(), tiny_model(), proto.memory, SelectionRule::Herding, 5);
  const TrainConfig cfg = tiny_config();
  train_task(state, stream.tasks[0], cfg);
  const std::vector<Tensor> phase1_bank = values_of(state.bank.parameters());
  const std::vector<Tensor> phase1_ext = values_of(state.extractor.parameters());

  TrainConfig second = cfg;
  second.loss.lambda = 0.0;  // isolate the distillation term
  const auto logs = train_task(state, stream.tasks[1], second);
  REQUIRE(logs.size() == cfg.incremental_epochs + cfg.finetune_epochs);
  CHECK(logs.front().epoch == 0);
  CHECK(logs.front().kd > 0.0);  // cross-entropy to the frozen teacher is positive
  for (const EpochLog& log : logs) CHECK(log.cr == 0.0);

  REQUIRE(state.old_bank.has_value());
  REQUIRE(state.old_extractor.has_value());
  const auto old_bank_vals = values_of(state.old_bank->parameters());
  REQUIRE(old_bank_vals.size() == phase1_bank.size());
  for (std::size_t i = 0; i < old_bank_vals.size(); ++i)
    CHECK(old_bank_vals[i].data == phase1_bank[i].data);
  const auto old_ext_vals = values_of(state.old_extractor->parameters());
  REQUIRE(old_ext_vals.size() == phase1_ext.size());
  for (std::size_t i = 0; i < old_ext_vals.size(); ++i)
    CHECK(old_ext_vals[i].data == phase1_ext[i].data);

  // the live model kept training while the snapshot did not
  const auto live = values_of(state.bank.parameters());
  bool changed = false;
  for (std::size_t i = 0; i < old_bank_vals.size() && !changed; ++i)
    changed = live[i].data != old_bank_vals[i].data;
  CHECK(changed);

  int finetune_epochs = 0;
  for (const EpochLog& log : logs) finetune_epochs += log.finetune ? 1 : 0;
  CHECK(finetune_epochs == cfg.finetune_epochs);
  for (const EpochLog& log : logs)
    if (log.finetune && log.epoch == 0)
      CHECK(log.lr == second.learning_rate * 0.1);  // default fine-tune rate
}

TEST_CASE("trainer: milestone learning-rate schedule") {
  const LrSchedule s = LrSchedule::from_fractions(0.1, 0.1, {0.8, 0.6}, 100);
  CHECK(s.milestones == std::vector<int>{60, 80});
  CHECK(s.at(0) == 0.1);
  CHECK(s.at(59) == 0.1);
  CHECK(std::fabs(s.at(70) - 0.01) <= 1e-15);
  CHECK(std::fabs(s.at(90) - 0.001) <= 1e-15);
  CHECK_THROWS_AS(s.at(-1), Error);

  const LrSchedule flat = LrSchedule::from_fractions(0.05, 0.1, {}, 10);
  CHECK(flat.at(9) == 0.05);
}

TEST_CASE("trainer: base-0 increment-2 experiment structure") {
  const SplitDataset data = blobs(31, 10, 6, 20);
  TaskProtocol proto;
  proto.base_classes = 0;
  proto.increment = 2;
  proto.memory = MemoryPolicy::per_class(4);
  proto.seed = 31;
  const ModelConfig model = tiny_model();
  const RunRecord rec = run_experiment(data, proto, model, tiny_config(),
                                       SelectionRule::Herding, Ablation::Full, "cfg");
  REQUIRE(rec.phases.size() == 5);
  double sum = 0.0;
  for (int t = 0; t < 5; ++t) {
    CHECK(rec.phases[t].phase == t + 1);
    CHECK(rec.phases[t].classes_seen == 2 * (t + 1));
    CHECK(rec.phases[t].accuracy >= 0.0);
    CHECK(rec.phases[t].accuracy <= 100.0);
    sum += rec.phases[t].accuracy;
  }
  CHECK(std::fabs(rec.avg_incremental - sum / 5.0) <= 1e-12);
  CHECK_FALSE(rec.phases[0].old_acc.has_value());  // nothing precedes the first task
  CHECK(rec.phases[0].new_acc.has_value());
  for (int t = 1; t < 5; ++t) {
    CHECK(rec.phases[t].old_acc.has_value());
    CHECK(rec.phases[t].new_acc.has_value());
  }
  CHECK(rec.phases[0].confusion.has_value());
  CHECK(rec.class_order.size() == 10);
  CHECK(rec.ablation == "full");
  CHECK(rec.config_echo == "cfg");
  CHECK(rec.phases[4].params.head ==
        head_param_count(10, model.feature_dim, model.latent_dim, true));
  CHECK(rec.phases[4].params.total ==
        rec.phases[4].params.backbone + rec.phases[4].params.head);
}

TEST_CASE("trainer: a warm start runs the base task then single increments") {
  const SplitDataset data = blobs(32, 10, 6, 20);
  TaskProtocol proto;
  proto.base_classes = 5;
  proto.increment = 1;
  proto.memory = MemoryPolicy::per_class(4);
  proto.seed = 32;
  const RunRecord rec = run_experiment(data, proto, tiny_model(), tiny_config(),
                                       SelectionRule::Herding, Ablation::AeOnly, "");
  REQUIRE(rec.phases.size() == 6);
  CHECK(rec.phases[0].classes_seen == 5);
  CHECK(rec.phases[5].classes_seen == 10);
  CHECK(rec.ablation == "ae_only");
}

TEST_CASE("trainer: runs are reproducible under the seed") {
  const SplitDataset data = blobs(33, 4, 6, 20);
  TaskProtocol proto;
  proto.base_classes = 0;
  proto.increment = 2;
  proto.memory = MemoryPolicy::per_class(4);
  proto.seed = 33;
  auto once = [&] {
    return run_experiment(data, proto, tiny_model(), tiny_config(), SelectionRule::Herding,
                          Ablation::Full, "");
  };
  const RunRecord a = once();
  const RunRecord b = once();
  CHECK(a.accuracy_csv() == b.accuracy_csv());
  REQUIRE(a.phases.size() == b.phases.size());
  for (std::size_t t = 0; t < a.phases.size(); ++t) {
    CHECK(a.phases[t].accuracy == b.phases[t].accuracy);
    CHECK(a.phases[t].old_acc == b.phases[t].old_acc);
    CHECK(a.phases[t].new_acc == b.phases[t].new_acc);
    REQUIRE(a.phases[t].confusion.has_value() == b.phases[t].confusion.has_value());
    if (a.phases[t].confusion.has_value())
      CHECK(a.phases[t].confusion->mean == b.phases[t].confusion->mean);
  }
}

TEST_CASE("trainer: task and config validation") {
  ContinualState state =
      init_state(4, tiny_model(), MemoryPolicy::per_class(2), SelectionRule::Herding, 1);

  Task empty;
  empty.class_ids = {0};
  empty.train.samples = Tensor::zeros({0, 4});
  CHECK_THROWS_AS(train_task(state, empty, tiny_config()), Error);

  Rng rng(1);
  Task skip;
  skip.class_ids = {1};  // does not extend the empty bank contiguously
  skip.train.samples = rand_tensor(rng, {4, 4});
  skip.train.labels = {1, 1, 1, 1};
  skip.train.num_classes = 2;
  CHECK_THROWS_AS(train_task(state, skip, tiny_config()), Error);

  TrainConfig bad = tiny_config();
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = tiny_config();
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = tiny_config();
  bad.momentum = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = tiny_config();
  bad.lr_milestones = {1.5};
  CHECK_THROWS_AS(bad.validate(), Error);

  CHECK(ablation_name(parse_ablation("ae_only")) == "ae_only");
  CHECK(ablation_name(parse_ablation("nme")) == "nme");
  CHECK(ablation_name(parse_ablation("full")) == "full");
  CHECK_THROWS_AS(parse_ablation("none"), Error);
}
