#include "create/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "create/errors.hpp"

namespace create {

SplitDataset DatasetConfig::load() const {
  if (kind == "synthetic") {
    return gen_synthetic_manifolds(seed, num_classes, clusters_per_class, dim,
                                   samples_per_class, cluster_spread, cluster_separation)
        .data;
  }
  SplitDataset out;
  if (kind == "idx") {
    out.train = load_idx(train_images, train_labels, "train");
    out.test = load_idx(test_images, test_labels, "test");
  } else if (kind == "table") {
    out.train = load_table(train_table);
    out.test = load_table(test_table);
  } else {
    throw ConfigError("dataset.kind", "unknown dataset kind '" + kind + "'");
  }
  out.validate();
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T, typename Fmt>
std::string join(const std::vector<T>& v, Fmt fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

// One configuration key: a parser and a canonical printer over the config.
struct KeySpec {
  std::string name;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

long long parse_int(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + value + "'");
  }
  if (used != value.size()) throw ConfigError(key, "expected an integer, got '" + value + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  const long long v = parse_int(key, value);
  if (v < 0) throw ConfigError(key, "expected a non-negative integer");
  return static_cast<std::uint64_t>(v);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + value + "'");
  }
  if (used != value.size()) throw ConfigError(key, "expected a number, got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + value + "'");
}

template <typename T, typename Elem>
std::vector<T> parse_list(const std::string& key, const std::string& value, Elem elem) {
  std::vector<T> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(elem(key, trim(item)));
  return out;
}

std::vector<KeySpec> key_table() {
  std::vector<KeySpec> keys;
  auto add = [&](std::string name, auto set, auto get) {
    keys.push_back({std::move(name), set, get});
  };

  // dataset
  add("dataset.kind",
      [](ExperimentConfig& c, const std::string& v) {
        if (v != "synthetic" && v != "idx" && v != "table")
          throw ConfigError("dataset.kind", "expected synthetic, idx or table, got '" + v + "'");
        c.dataset.kind = v;
      },
      [](const ExperimentConfig& c) { return c.dataset.kind; });
  add("dataset.seed",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.seed = parse_u64("dataset.seed", v);
      },
      [](const ExperimentConfig& c) { return std::to_string(c.dataset.seed); });
  add("dataset.num_classes",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.num_classes = static_cast<int>(parse_int("dataset.num_classes", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.dataset.num_classes); });
  add("dataset.clusters_per_class",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.clusters_per_class = static_cast<int>(parse_int("dataset.clusters_per_class", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.dataset.clusters_per_class); });
  add("dataset.dim",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.dim = static_cast<int>(parse_int("dataset.dim", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.dataset.dim); });
  add("dataset.samples_per_class",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.samples_per_class = static_cast<int>(parse_int("dataset.samples_per_class", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.dataset.samples_per_class); });
  add("dataset.cluster_spread",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.cluster_spread = parse_double("dataset.cluster_spread", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.dataset.cluster_spread); });
  add("dataset.cluster_separation",
      [](ExperimentConfig& c, const std::string& v) {
        c.dataset.cluster_separation = parse_double("dataset.cluster_separation", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.dataset.cluster_separation); });
  add("dataset.train_images",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.train_images = v; },
      [](const ExperimentConfig& c) { return c.dataset.train_images; });
  add("dataset.train_labels",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.train_labels = v; },
      [](const ExperimentConfig& c) { return c.dataset.train_labels; });
  add("dataset.test_images",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.test_images = v; },
      [](const ExperimentConfig& c) { return c.dataset.test_images; });
  add("dataset.test_labels",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.test_labels = v; },
      [](const ExperimentConfig& c) { return c.dataset.test_labels; });
  add("dataset.train_table",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.train_table = v; },
      [](const ExperimentConfig& c) { return c.dataset.train_table; });
  add("dataset.test_table",
      [](ExperimentConfig& c, const std::string& v) { c.dataset.test_table = v; },
      [](const ExperimentConfig& c) { return c.dataset.test_table; });

  // protocol
  add("protocol.base",
      [](ExperimentConfig& c, const std::string& v) {
        c.protocol.base_classes = static_cast<int>(parse_int("protocol.base", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.protocol.base_classes); });
  add("protocol.increment",
      [](ExperimentConfig& c, const std::string& v) {
        c.protocol.increment = static_cast<int>(parse_int("protocol.increment", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.protocol.increment); });
  add("protocol.class_order",
      [](ExperimentConfig& c, const std::string& v) {
        c.protocol.class_order = parse_list<int>("protocol.class_order", v,
                                                 [](const std::string& k, const std::string& s) {
                                                   return static_cast<int>(parse_int(k, s));
                                                 });
      },
      [](const ExperimentConfig& c) {
        return join(c.protocol.class_order, [](int v) { return std::to_string(v); });
      });
  add("protocol.seed",
      [](ExperimentConfig& c, const std::string& v) {
        c.protocol.seed = parse_u64("protocol.seed", v);
      },
      [](const ExperimentConfig& c) { return std::to_string(c.protocol.seed); });
  add("protocol.memory_policy",
      [](ExperimentConfig& c, const std::string& v) {
        if (v == "per_class")
          c.protocol.memory.kind = MemoryPolicy::Kind::PerClass;
        else if (v == "fixed_total")
          c.protocol.memory.kind = MemoryPolicy::Kind::FixedTotal;
        else
          throw ConfigError("protocol.memory_policy",
                            "expected per_class or fixed_total, got '" + v + "'");
      },
      [](const ExperimentConfig& c) {
        return c.protocol.memory.kind == MemoryPolicy::Kind::PerClass
                   ? std::string("per_class")
                   : std::string("fixed_total");
      });
  add("protocol.memory_amount",
      [](ExperimentConfig& c, const std::string& v) {
        c.protocol.memory.amount =
            static_cast<std::size_t>(parse_u64("protocol.memory_amount", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.protocol.memory.amount); });
  add("protocol.selection",
      [](ExperimentConfig& c, const std::string& v) {
        if (v == "herding")
          c.selection = SelectionRule::Herding;
        else if (v == "random")
          c.selection = SelectionRule::Random;
        else
          throw ConfigError("protocol.selection", "expected herding or random, got '" + v + "'");
      },
      [](const ExperimentConfig& c) {
        return c.selection == SelectionRule::Herding ? std::string("herding")
                                                     : std::string("random");
      });

  // model
  add("model.hidden",
      [](ExperimentConfig& c, const std::string& v) {
        c.model.hidden = parse_list<std::size_t>(
            "model.hidden", v, [](const std::string& k, const std::string& s) {
              return static_cast<std::size_t>(parse_u64(k, s));
            });
      },
      [](const ExperimentConfig& c) {
        return join(c.model.hidden, [](std::size_t v) { return std::to_string(v); });
      });
  add("model.feature_dim",
      [](ExperimentConfig& c, const std::string& v) {
        c.model.feature_dim = static_cast<std::size_t>(parse_u64("model.feature_dim", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.model.feature_dim); });
  add("model.latent_dim",
      [](ExperimentConfig& c, const std::string& v) {
        c.model.latent_dim = static_cast<std::size_t>(parse_u64("model.latent_dim", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.model.latent_dim); });
  add("model.decoder_tanh",
      [](ExperimentConfig& c, const std::string& v) {
        c.model.decoder_tanh = parse_bool("model.decoder_tanh", v);
      },
      [](const ExperimentConfig& c) {
        return std::string(c.model.decoder_tanh ? "true" : "false");
      });
  add("model.squared_errors",
      [](ExperimentConfig& c, const std::string& v) {
        c.model.squared_errors = parse_bool("model.squared_errors", v);
      },
      [](const ExperimentConfig& c) {
        return std::string(c.model.squared_errors ? "true" : "false");
      });

  // train
  add("train.initial_epochs",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.initial_epochs = static_cast<int>(parse_int("train.initial_epochs", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.initial_epochs); });
  add("train.incremental_epochs",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.incremental_epochs = static_cast<int>(parse_int("train.incremental_epochs", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.incremental_epochs); });
  add("train.finetune_epochs",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.finetune_epochs = static_cast<int>(parse_int("train.finetune_epochs", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.finetune_epochs); });
  add("train.batch_size",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.batch_size = static_cast<int>(parse_int("train.batch_size", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.batch_size); });
  add("train.learning_rate",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.learning_rate = parse_double("train.learning_rate", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.learning_rate); });
  add("train.finetune_lr",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.finetune_lr = parse_double("train.finetune_lr", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.finetune_lr); });
  add("train.momentum",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.momentum = parse_double("train.momentum", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.momentum); });
  add("train.weight_decay",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.weight_decay = parse_double("train.weight_decay", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.weight_decay); });
  add("train.lr_milestones",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.lr_milestones = parse_list<double>(
            "train.lr_milestones", v,
            [](const std::string& k, const std::string& s) { return parse_double(k, s); });
      },
      [](const ExperimentConfig& c) {
        return join(c.train.lr_milestones, [](double v) { return fmt_double(v); });
      });
  add("train.lr_gamma",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.lr_gamma = parse_double("train.lr_gamma", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.lr_gamma); });
  add("train.seed",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.seed = parse_u64("train.seed", v);
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.seed); });
  add("train.finetune_per_class",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.finetune_per_class =
            static_cast<std::size_t>(parse_u64("train.finetune_per_class", v));
      },
      [](const ExperimentConfig& c) { return std::to_string(c.train.finetune_per_class); });
  add("train.verbose",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.verbose = parse_bool("train.verbose", v);
      },
      [](const ExperimentConfig& c) { return std::string(c.train.verbose ? "true" : "false"); });

  // loss
  add("loss.alpha",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.alpha = parse_double("loss.alpha", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.loss.alpha); });
  add("loss.tau_d",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.tau_d = parse_double("loss.tau_d", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.loss.tau_d); });
  add("loss.tau_r",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.tau_r = parse_double("loss.tau_r", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.loss.tau_r); });
  add("loss.beta",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.beta = parse_double("loss.beta", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.loss.beta); });
  add("loss.lambda",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.lambda = parse_double("loss.lambda", v);
      },
      [](const ExperimentConfig& c) { return fmt_double(c.train.loss.lambda); });
  add("loss.normalize_latents",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.normalize_latents = parse_bool("loss.normalize_latents", v);
      },
      [](const ExperimentConfig& c) {
        return std::string(c.train.loss.normalize_latents ? "true" : "false");
      });
  add("loss.include_anchor",
      [](ExperimentConfig& c, const std::string& v) {
        c.train.loss.include_anchor = parse_bool("loss.include_anchor", v);
      },
      [](const ExperimentConfig& c) {
        return std::string(c.train.loss.include_anchor ? "true" : "false");
      });

  add("ablation",
      [](ExperimentConfig& c, const std::string& v) {
        try {
          c.ablation = parse_ablation(v);
        } catch (const Error& e) {
          throw ConfigError("ablation", e.what());
        }
      },
      [](const ExperimentConfig& c) { return ablation_name(c.ablation); });

  return keys;
}

void validate_semantics(const ExperimentConfig& cfg) {
  auto wrap = [](const char* key, const std::function<void()>& check) {
    try {
      check();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  };
  wrap("train", [&] { cfg.train.validate(); });
  wrap("model", [&] { cfg.model.validate(); });
  wrap("protocol.increment", [&] {
    if (cfg.protocol.increment <= 0) throw Error("must be positive");
  });
  wrap("protocol.base", [&] {
    if (cfg.protocol.base_classes < 0) throw Error("must be non-negative");
  });
  wrap("protocol.memory_amount", [&] {
    if (cfg.protocol.memory.amount == 0) throw Error("must be positive");
  });
  if (cfg.dataset.kind == "idx") {
    if (cfg.dataset.train_images.empty() || cfg.dataset.train_labels.empty() ||
        cfg.dataset.test_images.empty() || cfg.dataset.test_labels.empty())
      throw ConfigError("dataset.train_images",
                        "idx datasets need all four image/label paths");
  }
  if (cfg.dataset.kind == "table") {
    if (cfg.dataset.train_table.empty() || cfg.dataset.test_table.empty())
      throw ConfigError("dataset.train_table", "table datasets need both table paths");
  }
  if (cfg.dataset.kind == "synthetic") {
    if (cfg.dataset.num_classes < 2) throw ConfigError("dataset.num_classes", "need at least 2");
    if (cfg.dataset.dim < 2) throw ConfigError("dataset.dim", "need at least 2");
    if (cfg.dataset.samples_per_class < 2)
      throw ConfigError("dataset.samples_per_class", "need at least 2");
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::parse_text(const std::string& text,
                                              const std::string& origin) {
  ExperimentConfig cfg;
  const auto keys = key_table();

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no),
                        "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));

    const KeySpec* spec = nullptr;
    for (const KeySpec& k : keys)
      if (k.name == key) {
        spec = &k;
        break;
      }
    if (!spec)
      throw ConfigError(origin + ":" + std::to_string(line_no), "unknown key '" + key + "'");
    try {
      spec->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no), e.what());
    }
  }
  validate_semantics(cfg);
  return cfg;
}

ExperimentConfig ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_text(text.str(), path);
}

std::string ExperimentConfig::echo() const {
  std::string out;
  for (const KeySpec& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  dataset.seed = s;
  protocol.seed = s;
  train.seed = s;
}

RunRecord ExperimentConfig::run(const PhaseHook& on_phase) const {
  const SplitDataset data = dataset.load();
  return run_experiment(data, protocol, model, train, selection, ablation, echo(), on_phase);
}

}  // namespace create
