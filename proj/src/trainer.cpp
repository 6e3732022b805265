#include "create/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>

#include "create/errors.hpp"
#include "create/optim.hpp"

namespace create {

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::AeOnly: return "ae_only";
    case Ablation::Nme: return "nme";
  }
  throw Error("unknown ablation");
}

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::Full;
  if (name == "ae_only") return Ablation::AeOnly;
  if (name == "nme") return Ablation::Nme;
  throw Error("unknown ablation '" + name + "' (use nme, ae_only or full)");
}

void TrainConfig::validate() const {
  if (initial_epochs < 1 || incremental_epochs < 1)
    throw Error("epoch counts must be at least 1");
  if (finetune_epochs < 0) throw Error("finetune_epochs must be non-negative");
  if (batch_size < 2) throw Error("batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (finetune_lr < 0.0) throw Error("finetune_lr must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw Error("weight_decay must be non-negative");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw Error("lr_gamma must be in (0, 1]");
  for (double f : lr_milestones)
    if (!(f > 0.0 && f < 1.0)) throw Error("lr milestones must be fractions in (0, 1)");
  loss.validate();
}

LrSchedule LrSchedule::from_fractions(double initial, double gamma,
                                      const std::vector<double>& fractions, int budget) {
  LrSchedule s;
  s.initial = initial;
  s.gamma = gamma;
  for (double f : fractions)
    s.milestones.push_back(static_cast<int>(f * static_cast<double>(budget)));
  std::sort(s.milestones.begin(), s.milestones.end());
  return s;
}

double LrSchedule::at(int epoch) const {
  if (epoch < 0) throw Error("lr schedule: negative epoch");
  double rate = initial;
  for (int m : milestones)
    if (epoch >= m) rate *= gamma;
  return rate;
}

ContinualState init_state(std::size_t input_dim, const ModelConfig& model,
                          const MemoryPolicy& policy, SelectionRule selection,
                          std::uint64_t seed) {
  model.validate();
  ContinualState state;
  state.rng = Rng(seed);
  std::vector<std::size_t> widths = model.hidden;
  widths.push_back(model.feature_dim);
  state.extractor = FeatureExtractor(input_dim, std::move(widths), state.rng);
  state.bank = AutoEncoderBank(model.feature_dim, model.latent_dim, model.decoder_tanh,
                               model.squared_errors);
  state.memory.policy = policy;
  state.memory.selection = selection;
  return state;
}

namespace {

Tensor gather_rows(const Tensor& src, const std::vector<std::size_t>& rows) {
  const std::size_t d = src.cols();
  Tensor out = Tensor::zeros({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.data.begin() + rows[i] * d, d, out.data.begin() + i * d);
  return out;
}

struct EpochStats {
  double ce = 0, kd = 0, cr = 0, total = 0;
  std::size_t correct = 0, count = 0;

  void add(double ce_v, double kd_v, double cr_v, double total_v, std::size_t ok,
           std::size_t n) {
    const double w = static_cast<double>(n);
    ce += ce_v * w;
    kd += kd_v * w;
    cr += cr_v * w;
    total += total_v * w;
    correct += ok;
    count += n;
  }
};

/// One optimization pass over the given rows; returns epoch-mean stats.
EpochStats run_epoch(ContinualState& state, const Tensor& inputs,
                     const std::vector<int>& labels, std::vector<std::size_t>& order,
                     SgdState& opt, std::vector<Var>& params, const TrainConfig& cfg,
                     int phase, int epoch, bool finetune) {
  state.rng.shuffle(order);
  const std::size_t n = order.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t c_old = state.old_bank ? state.old_bank->size() : 0;
  const bool use_cr = cfg.loss.lambda > 0.0;

  EpochStats stats;
  for (std::size_t begin = 0, batch_index = 0; begin < n; begin += bs, ++batch_index) {
    const std::size_t end = std::min(n, begin + bs);
    std::vector<std::size_t> rows(order.begin() + begin, order.begin() + end);
    Tensor xb = gather_rows(inputs, rows);
    std::vector<int> yb(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) yb[i] = labels[rows[i]];

    auto context = [&](const char* component) {
      return std::string(component) + " at phase " + std::to_string(phase) +
             (finetune ? " finetune" : "") + " epoch " + std::to_string(epoch) + " batch " +
             std::to_string(batch_index);
    };

    Var ce, total;
    std::optional<Var> kd, cr;
    Tensor eps_values;
    try {
      Var h = state.extractor.forward(constant(xb));
      Var eps = state.bank.reconstruction_errors(h);
      eps_values = eps.value();
      try {
        ce = ce_loss(predict_proba(eps, cfg.loss.alpha), yb);
      } catch (const NonFiniteError& e) {
        throw Error("non-finite " + context("L_CE") + ": " + e.what());
      }
      if (c_old > 0) {
        try {
          Tensor eps_old;
          {
            NoGradGuard guard;
            eps_old = state.old_bank->reconstruction_errors(state.old_extractor->features(xb));
          }
          std::vector<std::size_t> old_cols(c_old);
          std::iota(old_cols.begin(), old_cols.end(), 0);
          kd = kd_loss(select_cols(eps, old_cols), eps_old, cfg.loss.alpha, cfg.loss.tau_d);
        } catch (const NonFiniteError& e) {
          throw Error("non-finite " + context("L_KD") + ": " + e.what());
        }
      }
      if (use_cr) {
        try {
          cr = cr_loss([&](std::size_t cid) { return state.bank.latent_codes(h, cid); }, yb,
                       eps, cfg.loss);
        } catch (const NonFiniteError& e) {
          throw Error("non-finite " + context("L_CR") + ": " + e.what());
        }
      }
      total = total_loss(ce, kd, cr, cfg.loss.lambda);
      zero_grads(params);
      backward(total);
      opt.step(params);
    } catch (const NonFiniteError& e) {
      throw Error("non-finite " + context("loss") + ": " + e.what());
    }

    const auto preds = classify_from_errors(eps_values);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < yb.size(); ++i)
      if (preds[i] == yb[i]) ++ok;
    stats.add(ce.value().at(0), kd ? kd->value().at(0) : 0.0, cr ? cr->value().at(0) : 0.0,
              total.value().at(0), ok, yb.size());
  }
  return stats;
}

EpochLog log_epoch(const EpochStats& stats, int phase, int epoch, bool finetune, double lr,
                   bool verbose) {
  const double n = static_cast<double>(stats.count);
  EpochLog log;
  log.phase = phase;
  log.epoch = epoch;
  log.finetune = finetune;
  log.lr = lr;
  log.ce = stats.ce / n;
  log.kd = stats.kd / n;
  log.cr = stats.cr / n;
  log.total = stats.total / n;
  log.accuracy = 100.0 * static_cast<double>(stats.correct) / n;
  if (verbose) {
    std::printf("phase=%d stage=%s epoch=%d lr=%.6g ce=%.6g kd=%.6g cr=%.6g total=%.6g "
                "train_acc=%.2f\n",
                phase, finetune ? "finetune" : "main", epoch, lr, log.ce, log.kd, log.cr,
                log.total, log.accuracy);
    std::fflush(stdout);
  }
  return log;
}

}  // namespace

std::vector<EpochLog> train_task(ContinualState& state, const Task& task,
                                 const TrainConfig& config) {
  config.validate();
  if (task.train.size() == 0) throw Error("train_task: empty task");
  const std::size_t c_before = state.bank.size();
  for (std::size_t i = 0; i < task.class_ids.size(); ++i)
    if (task.class_ids[i] != static_cast<int>(c_before + i))
      throw Error("task classes must extend the seen classes contiguously");
  for (int y : task.train.labels)
    if (y < static_cast<int>(c_before))
      throw Error("task training data contains already-seen class " + std::to_string(y));

  const bool first = state.phase == 0;
  if (first) {
    state.old_extractor.reset();
    state.old_bank.reset();
  } else {
    state.old_extractor = state.extractor.clone();
    state.old_bank = state.bank.clone();
  }
  state.bank.append_classes(task.class_ids.size(), state.rng);

  // D_t union M_t, memory rows appended after the task's own data.
  Tensor inputs = task.train.samples;
  std::vector<int> labels = task.train.labels;
  for (const auto& [class_id, store] : state.memory.per_class) {
    inputs.data.insert(inputs.data.end(), store.samples.data.begin(), store.samples.data.end());
    inputs.shape[0] += store.size();
    labels.insert(labels.end(), store.size(), class_id);
  }

  const int phase = state.phase + 1;
  const int epochs = first ? config.initial_epochs : config.incremental_epochs;
  const LrSchedule schedule =
      LrSchedule::from_fractions(config.learning_rate, config.lr_gamma, config.lr_milestones,
                                 epochs);

  std::vector<Var> params = state.extractor.parameters();
  {
    const auto bank_params = state.bank.parameters();
    params.insert(params.end(), bank_params.begin(), bank_params.end());
  }
  SgdState opt(schedule.at(0), config.momentum, config.weight_decay, params);

  std::vector<EpochLog> logs;
  std::vector<std::size_t> order(inputs.rows());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = schedule.at(epoch);
    opt.set_learning_rate(lr);
    const EpochStats stats =
        run_epoch(state, inputs, labels, order, opt, params, config, phase, epoch, false);
    logs.push_back(log_epoch(stats, phase, epoch, false, lr, config.verbose));
  }

  if (!first && config.finetune_epochs > 0) {
    std::size_t per_class = config.finetune_per_class;
    if (per_class == 0) per_class = std::max<std::size_t>(1, state.memory.policy.quota(
                                                                 state.bank.size()));
    Tensor ft_inputs;
    std::vector<int> ft_labels;
    balanced_subset(state.memory, task.train.samples, task.train.labels, per_class,
                    state.rng.next_u64(), ft_inputs, ft_labels);
    if (ft_labels.empty()) throw Error("fine-tuning subset is empty");

    const double ft_lr =
        config.finetune_lr > 0.0 ? config.finetune_lr : config.learning_rate * 0.1;
    const LrSchedule ft_schedule = LrSchedule::from_fractions(
        ft_lr, config.lr_gamma, config.lr_milestones, config.finetune_epochs);
    state.extractor.set_trainable(false);
    std::vector<Var> bank_params = state.bank.parameters();
    SgdState ft_opt(ft_schedule.at(0), config.momentum, config.weight_decay, bank_params);
    std::vector<std::size_t> ft_order(ft_labels.size());
    std::iota(ft_order.begin(), ft_order.end(), 0);
    for (int epoch = 0; epoch < config.finetune_epochs; ++epoch) {
      const double lr = ft_schedule.at(epoch);
      ft_opt.set_learning_rate(lr);
      const EpochStats stats = run_epoch(state, ft_inputs, ft_labels, ft_order, ft_opt,
                                         bank_params, config, phase, epoch, true);
      logs.push_back(log_epoch(stats, phase, epoch, true, lr, config.verbose));
    }
    state.extractor.set_trainable(true);
  }

  std::vector<NewClassData> fresh;
  for (int class_id : task.class_ids) {
    NewClassData cls;
    cls.class_id = class_id;
    cls.samples = gather_rows(task.train.samples, rows_with_label(task.train, class_id));
    fresh.push_back(std::move(cls));
  }
  update_memory(state.memory, fresh,
                [&](const Tensor& x) { return state.extractor.features(x); }, state.rng);

  state.phase += 1;
  return logs;
}

RunRecord run_experiment(const SplitDataset& data, const TaskProtocol& protocol,
                         const ModelConfig& model, const TrainConfig& config,
                         SelectionRule selection, Ablation ablation,
                         const std::string& config_echo, const PhaseHook& on_phase) {
  TaskStream stream = split_tasks(data, protocol, protocol.seed);

  TrainConfig effective = config;
  if (ablation != Ablation::Full) effective.loss.lambda = 0.0;

  ContinualState state =
      init_state(data.train.dim(), model, protocol.memory, selection, config.seed);

  RunRecord record;
  record.ablation = ablation_name(ablation);
  record.class_order = stream.class_order;
  record.config_echo = config_echo;

  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const auto start = std::chrono::steady_clock::now();
    const int boundary = static_cast<int>(state.bank.size());  // classes before this task
    train_task(state, stream.tasks[t], effective);

    const LabeledDataset& test = stream.cumulative_test[t];
    std::unique_ptr<Classifier> clf;
    if (ablation == Ablation::Nme)
      clf = std::make_unique<NmeClassifier>(state.extractor, state.memory, state.bank.size());
    else
      clf = std::make_unique<AeClassifier>(state.extractor, state.bank);

    PhaseRecord phase;
    phase.phase = static_cast<int>(t) + 1;
    phase.classes_seen = static_cast<int>(state.bank.size());
    const OldNewAccuracy split_acc = old_new_accuracy(*clf, test, boundary);
    phase.accuracy = split_acc.total;
    phase.old_acc = split_acc.old_acc;
    phase.new_acc = split_acc.new_acc;
    if (state.bank.size() >= 2) phase.confusion = confusion_stats(*clf, test);
    phase.params = count_params(state.extractor, state.bank);
    phase.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (on_phase) on_phase(state, phase);
    record.phases.push_back(phase);
  }

  double sum = 0.0;
  for (const PhaseRecord& p : record.phases) sum += p.accuracy;
  record.avg_incremental = sum / static_cast<double>(record.phases.size());
  return record;
}

}  // namespace create
