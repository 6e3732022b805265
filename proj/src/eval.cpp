#include "create/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>

#include "json.hpp"

#include "create/errors.hpp"
#include "create/losses.hpp"
#include "create/parallel.hpp"

namespace create {

namespace {

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  const std::size_t d = t.cols();
  Tensor out = Tensor::zeros({end - begin, d});
  std::copy(t.data.begin() + begin * d, t.data.begin() + end * d, out.data.begin());
  return out;
}

}  // namespace

std::vector<int> Classifier::predict(const Tensor& inputs) const {
  if (inputs.rank() != 2) throw Error("predict expects an n x dim input matrix");
  std::vector<int> out(inputs.rows());
  parallel_chunks(inputs.rows(), 256, [&](std::size_t, std::size_t b, std::size_t e) {
    const auto preds = classify_from_errors(score_rows(slice_rows(inputs, b, e)));
    std::copy(preds.begin(), preds.end(), out.begin() + b);
  });
  return out;
}

AeClassifier::AeClassifier(const FeatureExtractor& extractor, const AutoEncoderBank& bank)
    : extractor_(&extractor), bank_(&bank) {
  if (bank.size() == 0) throw Error("AeClassifier over an empty bank");
}

Tensor AeClassifier::score_rows(const Tensor& inputs) const {
  return bank_->reconstruction_errors(extractor_->features(inputs));
}

NmeClassifier::NmeClassifier(const FeatureExtractor& extractor, const ExemplarMemory& memory,
                             std::size_t num_classes)
    : extractor_(&extractor) {
  if (num_classes == 0) throw Error("NmeClassifier needs at least one class");
  prototypes_ = Tensor::zeros({num_classes, extractor.feature_dim()});
  for (std::size_t c = 0; c < num_classes; ++c) {
    const ClassStore& store = memory.store(static_cast<int>(c));
    if (store.size() == 0)
      throw Error("class " + std::to_string(c) + " has no exemplars for NME");
    const Tensor feats = extractor.features(store.samples);
    for (std::size_t i = 0; i < feats.rows(); ++i)
      for (std::size_t j = 0; j < feats.cols(); ++j)
        prototypes_.at(c, j) += feats.at(i, j) / static_cast<double>(feats.rows());
  }
}

Tensor NmeClassifier::score_rows(const Tensor& inputs) const {
  const Tensor h = extractor_->features(inputs);
  const std::size_t n = h.rows(), c = prototypes_.rows(), d = h.cols();
  Tensor out = Tensor::zeros({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = h.at(i, j) - prototypes_.at(k, j);
        dist += diff * diff;
      }
      out.at(i, k) = std::sqrt(dist);
    }
  }
  return out;
}

double phase_accuracy(const Classifier& clf, const LabeledDataset& test) {
  if (test.size() == 0) throw Error("phase_accuracy on an empty test set");
  for (int y : test.labels)
    if (static_cast<std::size_t>(y) >= clf.num_classes())
      throw Error("test label " + std::to_string(y) + " outside the " +
                  std::to_string(clf.num_classes()) + " seen classes");
  const auto preds = clf.predict(test.samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == test.labels[i]) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(preds.size());
}

OldNewAccuracy old_new_accuracy(const Classifier& clf, const LabeledDataset& test,
                                int boundary) {
  if (test.size() == 0) throw Error("old_new_accuracy on an empty test set");
  const auto preds = clf.predict(test.samples);
  std::size_t old_n = 0, old_ok = 0, new_n = 0, new_ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool ok = preds[i] == test.labels[i];
    if (test.labels[i] < boundary) {
      ++old_n;
      old_ok += ok;
    } else {
      ++new_n;
      new_ok += ok;
    }
  }
  OldNewAccuracy out;
  if (old_n > 0) out.old_acc = 100.0 * static_cast<double>(old_ok) / static_cast<double>(old_n);
  if (new_n > 0) out.new_acc = 100.0 * static_cast<double>(new_ok) / static_cast<double>(new_n);
  out.total = 100.0 * static_cast<double>(old_ok + new_ok) / static_cast<double>(preds.size());
  return out;
}

double nme_baseline(const FeatureExtractor& extractor, const ExemplarMemory& memory,
                    const LabeledDataset& test, std::size_t num_classes) {
  NmeClassifier clf(extractor, memory, num_classes);
  return phase_accuracy(clf, test);
}

ConfusionSummary summarize_scores(std::vector<double> scores) {
  if (scores.empty()) throw Error("summarize_scores on an empty sample");
  std::sort(scores.begin(), scores.end());
  const std::size_t n = scores.size();
  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(h);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = h - static_cast<double>(lo);
    return scores[lo] + frac * (scores[hi] - scores[lo]);
  };
  ConfusionSummary s;
  s.min = scores.front();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.max = scores.back();
  double total = 0.0;
  for (double v : scores) total += v;
  s.mean = total / static_cast<double>(n);
  return s;
}

ConfusionSummary confusion_stats(const Classifier& clf, const LabeledDataset& test) {
  if (clf.num_classes() < 2) throw Error("confusion_stats needs at least two seen classes");
  if (test.size() == 0) throw Error("confusion_stats on an empty test set");
  std::vector<double> scores(test.size());
  parallel_chunks(test.size(), 256, [&](std::size_t, std::size_t b, std::size_t e) {
    const Tensor rows = clf.score_rows(slice_rows(test.samples, b, e));
    for (std::size_t i = b; i < e; ++i) {
      std::span<const double> row(rows.data.data() + (i - b) * rows.cols(), rows.cols());
      scores[i] = confusion_score(row);
    }
  });
  return summarize_scores(std::move(scores));
}

std::vector<MisclassifiedRecord> misclassified_error_report(const Classifier& clf,
                                                            const LabeledDataset& test) {
  const Tensor scores = clf.score_rows(test.samples);
  const auto preds = classify_from_errors(scores);
  std::vector<MisclassifiedRecord> out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] == test.labels[i]) continue;
    MisclassifiedRecord rec;
    rec.index = i;
    rec.true_class = test.labels[i];
    rec.pred_class = preds[i];
    rec.eps_true = scores.at(i, static_cast<std::size_t>(test.labels[i]));
    rec.eps_pred = scores.at(i, static_cast<std::size_t>(preds[i]));
    rec.margin = rec.eps_true - rec.eps_pred;
    out.push_back(rec);
  }
  return out;
}

ExportSpace ExportSpace::parse(const std::string& text) {
  ExportSpace space;
  if (text == "feature") {
    space.kind = Kind::Feature;
    return space;
  }
  if (text.rfind("latent:", 0) == 0) {
    space.kind = Kind::Latent;
    const std::string id = text.substr(7);
    if (id.empty() || id.find_first_not_of("0123456789") != std::string::npos)
      throw Error("bad latent class id in space selector '" + text + "'");
    space.class_id = static_cast<std::size_t>(std::stoull(id));
    return space;
  }
  throw Error("unknown embedding space '" + text + "' (use feature or latent:<class id>)");
}

void export_embeddings(const FeatureExtractor& extractor, const AutoEncoderBank& bank,
                       const LabeledDataset& ds, const std::string& path,
                       const ExportSpace& space) {
  if (ds.size() == 0) throw Error("export_embeddings on an empty dataset");
  Tensor emb = extractor.features(ds.samples);
  if (space.kind == ExportSpace::Kind::Latent) {
    if (space.class_id >= bank.size())
      throw Error("latent export: class " + std::to_string(space.class_id) +
                  " outside bank of size " + std::to_string(bank.size()));
    NoGradGuard guard;
    emb = bank.latent_codes(constant(std::move(emb)), space.class_id).value();
  }
  LabeledDataset table;
  table.samples = std::move(emb);
  table.labels = ds.labels;
  table.num_classes = ds.num_classes;
  table.split = ds.split;
  save_table(table, path);
}

namespace {

nlohmann::json summary_json(const ConfusionSummary& s) {
  return {{"min", s.min}, {"q1", s.q1},   {"median", s.median},
          {"q3", s.q3},   {"max", s.max}, {"mean", s.mean}};
}

ConfusionSummary summary_from_json(const nlohmann::json& j) {
  ConfusionSummary s;
  s.min = j.at("min");
  s.q1 = j.at("q1");
  s.median = j.at("median");
  s.q3 = j.at("q3");
  s.max = j.at("max");
  s.mean = j.at("mean");
  return s;
}

}  // namespace

std::string RunRecord::to_json() const {
  nlohmann::json j;
  j["ablation"] = ablation;
  j["avg_incremental"] = avg_incremental;
  j["class_order"] = class_order;
  j["config"] = config_echo;
  j["phases"] = nlohmann::json::array();
  for (const PhaseRecord& p : phases) {
    nlohmann::json jp;
    jp["phase"] = p.phase;
    jp["classes_seen"] = p.classes_seen;
    jp["accuracy"] = p.accuracy;
    jp["old_acc"] = p.old_acc ? nlohmann::json(*p.old_acc) : nlohmann::json(nullptr);
    jp["new_acc"] = p.new_acc ? nlohmann::json(*p.new_acc) : nlohmann::json(nullptr);
    jp["confusion"] = p.confusion ? summary_json(*p.confusion) : nlohmann::json(nullptr);
    jp["params"] = {{"backbone", p.params.backbone},
                    {"head", p.params.head},
                    {"head_bias_free", p.params.head_bias_free},
                    {"total", p.params.total}};
    jp["seconds"] = p.seconds;
    j["phases"].push_back(std::move(jp));
  }
  return j.dump(2) + "\n";
}

RunRecord RunRecord::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("run record", e.what());
  }
  RunRecord rec;
  rec.ablation = j.at("ablation");
  rec.avg_incremental = j.at("avg_incremental");
  rec.class_order = j.at("class_order").get<std::vector<int>>();
  rec.config_echo = j.at("config");
  for (const auto& jp : j.at("phases")) {
    PhaseRecord p;
    p.phase = jp.at("phase");
    p.classes_seen = jp.at("classes_seen");
    p.accuracy = jp.at("accuracy");
    if (!jp.at("old_acc").is_null()) p.old_acc = jp.at("old_acc").get<double>();
    if (!jp.at("new_acc").is_null()) p.new_acc = jp.at("new_acc").get<double>();
    if (!jp.at("confusion").is_null()) p.confusion = summary_from_json(jp.at("confusion"));
    p.params.backbone = jp.at("params").at("backbone");
    p.params.head = jp.at("params").at("head");
    p.params.head_bias_free = jp.at("params").at("head_bias_free");
    p.params.total = jp.at("params").at("total");
    p.seconds = jp.at("seconds");
    rec.phases.push_back(std::move(p));
  }
  return rec;
}

std::string RunRecord::accuracy_csv() const {
  std::string out = "phase,classes_seen,accuracy,old_acc,new_acc,mean_confusion\n";
  char buf[64];
  auto pct = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };
  for (const PhaseRecord& p : phases) {
    out += std::to_string(p.phase) + "," + std::to_string(p.classes_seen) + ",";
    out += pct(p.accuracy) + ",";
    out += (p.old_acc ? pct(*p.old_acc) : "") + ",";
    out += (p.new_acc ? pct(*p.new_acc) : "") + ",";
    if (p.confusion) {
      std::snprintf(buf, sizeof(buf), "%.6f", p.confusion->mean);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace create
