#include "create/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "CLI11.hpp"

#include "create/config.hpp"
#include "create/errors.hpp"
#include "create/gradcheck.hpp"

namespace create {

namespace {

namespace fs = std::filesystem;

void prepare_out_dir(const std::string& dir, bool overwrite) {
  fs::path path(dir);
  if (fs::exists(path)) {
    if (!fs::is_directory(path)) throw Error("output path '" + dir + "' is not a directory");
    if (!fs::is_empty(path) && !overwrite)
      throw Error("output directory '" + dir + "' is not empty (pass --overwrite to reuse it)");
  } else {
    fs::create_directories(path);
  }
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out << content;
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

void save_phase_checkpoint(const fs::path& dir, const ContinualState& state,
                           const std::vector<int>& class_order, int phase) {
  Checkpoint ckpt;
  state.extractor.save(ckpt);
  state.bank.save(ckpt);
  state.memory.save(ckpt);
  Tensor order = Tensor::zeros({class_order.size()});
  for (std::size_t i = 0; i < class_order.size(); ++i)
    order.at(i) = static_cast<double>(class_order[i]);
  ckpt.put("meta/class_order", std::move(order));
  char name[32];
  std::snprintf(name, sizeof(name), "phase_%02d.ckpt", phase);
  ckpt.save((dir / name).string());
}

RunRecord run_into_dir(const ExperimentConfig& cfg, const std::string& out_dir,
                       bool overwrite) {
  prepare_out_dir(out_dir, overwrite);
  const fs::path dir(out_dir);
  const SplitDataset data = cfg.dataset.load();
  TaskStream stream = split_tasks(data, cfg.protocol, cfg.protocol.seed);
  RunRecord record = run_experiment(
      data, cfg.protocol, cfg.model, cfg.train, cfg.selection, cfg.ablation, cfg.echo(),
      [&](const ContinualState& state, const PhaseRecord& phase) {
        save_phase_checkpoint(dir, state, stream.class_order, phase.phase);
      });
  write_file(dir / "run_record.json", record.to_json());
  write_file(dir / "accuracy.csv", record.accuracy_csv());
  write_file(dir / "config.txt", record.config_echo);
  return record;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            std::optional<std::uint64_t> seed, bool overwrite) {
  ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
  if (seed) cfg.apply_seed(*seed);
  const RunRecord record = run_into_dir(cfg, out_dir, overwrite);
  std::printf("run complete: ablation=%s phases=%zu final_acc=%.2f avg_acc=%.2f\n",
              record.ablation.c_str(), record.phases.size(), record.phases.back().accuracy,
              record.avg_incremental);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const GradCheckBattery battery = run_gradcheck_battery(seed);
  for (const char* name : {"L_CE", "L_KD", "L_CST", "L_CR", "total"})
    std::printf("gradcheck %-5s max relative error %.3e (tolerance %.0e)\n", name,
                battery.worst(name), battery.tolerance);
  for (const GradCheckCase& c : battery.cases) {
    if (c.pass) continue;
    std::printf("FAIL %s config %d: relative error %.3e at parameter %zu entry %zu\n",
                c.loss_name.c_str(), c.config_index, c.report.max_rel_error,
                c.report.param_index, c.report.entry_index);
  }
  std::printf("gradcheck %s\n", battery.all_pass() ? "PASS" : "FAIL");
  return battery.all_pass() ? 0 : 1;
}

int cmd_export(const std::string& ckpt_path, const std::string& config_path,
               const std::string& space_text, const std::string& split,
               const std::string& out_path, bool overwrite) {
  ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
  Checkpoint ckpt;
  try {
    ckpt = Checkpoint::load(ckpt_path);
  } catch (const FormatError& e) {
    throw Error(std::string(e.what()) + " (supported checkpoint version: " +
                std::to_string(Checkpoint::kVersion) + ")");
  }
  const FeatureExtractor extractor = FeatureExtractor::load(ckpt);
  const AutoEncoderBank bank = AutoEncoderBank::load(ckpt);
  const Tensor order = ckpt.get("meta/class_order");

  const SplitDataset data = cfg.dataset.load();
  if (split != "train" && split != "test")
    throw Error("unknown split '" + split + "' (use train or test)");
  const LabeledDataset& source = split == "train" ? data.train : data.test;

  // Relabel to the learned class order and keep only classes the checkpoint
  // has seen.
  std::vector<int> engine_of(static_cast<std::size_t>(source.num_classes), -1);
  for (std::size_t e = 0; e < order.numel() && e < bank.size(); ++e) {
    const int original = static_cast<int>(order.at(e));
    if (original < 0 || original >= source.num_classes)
      throw Error("checkpoint class order does not match the dataset");
    engine_of[original] = static_cast<int>(e);
  }
  std::vector<std::size_t> keep;
  std::vector<int> labels;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const int e = engine_of[source.labels[i]];
    if (e >= 0) {
      keep.push_back(i);
      labels.push_back(e);
    }
  }
  if (keep.empty()) throw Error("no samples of the checkpoint's classes in split " + split);
  LabeledDataset seen = take_rows(source, keep);
  seen.labels = std::move(labels);
  seen.num_classes = static_cast<int>(bank.size());

  if (fs::exists(out_path) && !overwrite)
    throw Error("output file '" + out_path + "' exists (pass --overwrite to replace it)");
  export_embeddings(extractor, bank, seen, out_path, ExportSpace::parse(space_text));
  std::printf("exported %zu rows to %s\n", seen.size(), out_path.c_str());
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed, bool overwrite) {
  ExperimentConfig cfg = ExperimentConfig::parse_file(config_path);
  if (seed) cfg.apply_seed(*seed);
  prepare_out_dir(out_dir, overwrite);

  std::vector<RunRecord> records;
  for (Ablation a : {Ablation::Nme, Ablation::AeOnly, Ablation::Full}) {
    ExperimentConfig variant = cfg;
    variant.ablation = a;
    records.push_back(
        run_into_dir(variant, (fs::path(out_dir) / ablation_name(a)).string(), overwrite));
  }

  const std::size_t phases = records.front().phases.size();
  std::string table = "ablation";
  for (std::size_t t = 1; t <= phases; ++t) table += ",phase_" + std::to_string(t);
  table += ",avg\n";
  char buf[32];
  for (const RunRecord& rec : records) {
    table += rec.ablation;
    for (const PhaseRecord& p : rec.phases) {
      std::snprintf(buf, sizeof(buf), ",%.2f", p.accuracy);
      table += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%.2f", rec.avg_incremental);
    table += buf;
    table += "\n";
  }
  write_file(fs::path(out_dir) / "ablation.csv", table);
  std::fputs(table.c_str(), stdout);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"continual class-incremental learner with per-class auto-encoders"};
  app.require_subcommand(1);

  std::string config_path, out_path, space_text = "feature", split = "test", ckpt_path;
  std::optional<std::uint64_t> seed_override;
  std::uint64_t gradcheck_seed = 1;
  bool overwrite = false;

  CLI::App* run = app.add_subcommand("run", "train and evaluate one experiment");
  run->add_option("--config", config_path, "experiment config file")->required();
  run->add_option("--out", out_path, "output directory")->required();
  run->add_option("--seed", seed_override, "override dataset/protocol/train seeds");
  run->add_flag("--overwrite", overwrite, "allow writing into a non-empty directory");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference loss audit");
  gradcheck->add_option("--seed", gradcheck_seed, "battery seed");

  CLI::App* exp = app.add_subcommand("export", "export embeddings from a checkpoint");
  exp->add_option("--checkpoint", ckpt_path, "phase checkpoint file")->required();
  exp->add_option("--config", config_path, "config providing the dataset section")->required();
  exp->add_option("--space", space_text, "feature or latent:<class id>");
  exp->add_option("--split", split, "train or test");
  exp->add_option("--out", out_path, "output table path")->required();
  exp->add_flag("--overwrite", overwrite, "replace an existing output file");

  CLI::App* ablate = app.add_subcommand("ablate", "run nme, ae_only and full on one config");
  ablate->add_option("--config", config_path, "experiment config file")->required();
  ablate->add_option("--out", out_path, "output directory")->required();
  ablate->add_option("--seed", seed_override, "override dataset/protocol/train seeds");
  ablate->add_flag("--overwrite", overwrite, "allow writing into a non-empty directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_path, seed_override, overwrite);
    if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seed);
    if (exp->parsed())
      return cmd_export(ckpt_path, config_path, space_text, split, out_path, overwrite);
    if (ablate->parsed()) return cmd_ablate(config_path, out_path, seed_override, overwrite);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace create
