#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "create/dataset.hpp"
#include "create/errors.hpp"
#include "create/eval.hpp"
#include "create/memory.hpp"
#include "create/model.hpp"
#include "create/rng.hpp"
#include "test_util.hpp"

using namespace create;

namespace {

/// Scores come from a fixed matrix; the row index rides in feature 0 so
/// batched prediction still sees the right rows.
class StubClassifier : public Classifier {
 public:
  explicit StubClassifier(Tensor scores) : scores_(std::move(scores)) {}
  std::size_t num_classes() const override { return scores_.cols(); }
  Tensor score_rows(const Tensor& inputs) const override {
    Tensor out = Tensor::zeros({inputs.rows(), scores_.cols()});
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
      const auto row = static_cast<std::size_t>(inputs.at(i, 0));
      for (std::size_t j = 0; j < scores_.cols(); ++j) out.at(i, j) = scores_.at(row, j);
    }
    return out;
  }

 private:
  Tensor scores_;
};

LabeledDataset index_dataset(std::vector<int> labels, int num_classes) {
  LabeledDataset ds;
  const std::size_t n = labels.size();
  ds.samples = Tensor::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) ds.samples.at(i, 0) = static_cast<double>(i);
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.split = "test";
  return ds;
}

}  // namespace

TEST_CASE("eval: phase accuracy against a recount") {
  std::vector<int> labels;
  for (int c = 0; c < 10; ++c)
    for (int k = 0; k < 3; ++k) labels.push_back(c);
  const LabeledDataset ds = index_dataset(labels, 10);
  const std::size_t n = ds.size();

  Tensor perfect = Tensor::full({n, 10}, 1.0);
  for (std::size_t i = 0; i < n; ++i) perfect.at(i, static_cast<std::size_t>(labels[i])) = 0.0;
  CHECK(phase_accuracy(StubClassifier(perfect), ds) == 100.0);

  // constant rows always argmin to class 0; the set is balanced
  CHECK(phase_accuracy(StubClassifier(Tensor::full({n, 10}, 2.0)), ds) == 10.0);

  Rng rng(5);
  const Tensor scores = rand_tensor(rng, {n, 10}, 0.0, 1.0);
  const StubClassifier clf(scores);
  const auto preds = clf.predict(ds.samples);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < n; ++i) ok += preds[i] == labels[i] ? 1 : 0;
  CHECK(phase_accuracy(clf, ds) ==
        100.0 * static_cast<double>(ok) / static_cast<double>(n));

  CHECK_THROWS_AS(phase_accuracy(clf, index_dataset({}, 10)), Error);
  CHECK_THROWS_AS(phase_accuracy(clf, index_dataset({0, 10}, 11)), Error);
}

TEST_CASE("eval: old/new accuracy split") {
  // 10 old samples (classes 0-1) with 8 correct, 10 new (classes 2-3) with 6
  std::vector<int> labels;
  for (int i = 0; i < 10; ++i) labels.push_back(i % 2);
  for (int i = 0; i < 10; ++i) labels.push_back(2 + i % 2);
  const LabeledDataset ds = index_dataset(labels, 4);

  Tensor scores = Tensor::full({20, 4}, 1.0);
  auto predict_as = [&](std::size_t i, int c) { scores.at(i, static_cast<std::size_t>(c)) = 0.0; };
  for (std::size_t i = 0; i < 20; ++i) {
    const bool wrong = (i < 10 && i >= 8) || (i >= 10 && i >= 16);
    predict_as(i, wrong ? (labels[i] + 1) % 4 : labels[i]);
  }

  const StubClassifier clf(scores);
  const OldNewAccuracy acc = old_new_accuracy(clf, ds, 2);
  REQUIRE(acc.old_acc.has_value());
  REQUIRE(acc.new_acc.has_value());
  CHECK(*acc.old_acc == 80.0);
  CHECK(*acc.new_acc == 60.0);
  CHECK(acc.total == 70.0);

  const OldNewAccuracy all_new = old_new_accuracy(clf, ds, 0);
  CHECK_FALSE(all_new.old_acc.has_value());
  REQUIRE(all_new.new_acc.has_value());
  CHECK(*all_new.new_acc == all_new.total);

  const OldNewAccuracy all_old = old_new_accuracy(clf, ds, 4);
  CHECK_FALSE(all_old.new_acc.has_value());
  REQUIRE(all_old.old_acc.has_value());
  CHECK(*all_old.old_acc == all_old.total);
}

TEST_CASE("eval: nearest-mean-of-exemplars baseline") {
  Rng rng(7);
  const FeatureExtractor ext(3, {5, 4}, rng);
  const FeatureFn feats = [&](const Tensor& x) { return ext.features(x); };

  ExemplarMemory mem;
  mem.policy = MemoryPolicy::per_class(4);
  Rng sel(1);
  update_memory(mem,
                {NewClassData{0, rand_tensor(rng, {3, 3})},
                 NewClassData{1, rand_tensor(rng, {2, 3})}},
                feats, sel);

  const NmeClassifier clf(ext, mem, 2);
  REQUIRE(clf.prototypes().rows() == 2);
  for (int c = 0; c < 2; ++c) {  // prototype = mean exemplar feature
    const Tensor f = ext.features(mem.store(c).samples);
    for (std::size_t j = 0; j < f.cols(); ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < f.rows(); ++i) m += f.at(i, j);
      m /= static_cast<double>(f.rows());
      CHECK(std::fabs(clf.prototypes().at(c, j) - m) <= 1e-12);
    }
  }

  // scores match a brute-force distance scan
  const Tensor queries = rand_tensor(rng, {6, 3});
  const Tensor scores = clf.score_rows(queries);
  const Tensor h = ext.features(queries);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < h.cols(); ++j) {
        const double diff = h.at(i, j) - clf.prototypes().at(k, j);
        dist += diff * diff;
      }
      CHECK(std::fabs(scores.at(i, k) - std::sqrt(dist)) <= 1e-12);
    }

  // with one exemplar per class, a stored sample is its own prototype
  ExemplarMemory solo;
  solo.policy = MemoryPolicy::per_class(1);
  Rng sel2(2);
  update_memory(solo,
                {NewClassData{0, rand_tensor(rng, {1, 3})},
                 NewClassData{1, rand_tensor(rng, {1, 3})}},
                feats, sel2);
  const NmeClassifier sclf(ext, solo, 2);
  CHECK(sclf.predict(solo.store(1).samples) == std::vector<int>{1});
  CHECK(sclf.predict(solo.store(0).samples) == std::vector<int>{0});

  LabeledDataset test;
  test.samples = queries;
  test.labels = {0, 1, 0, 1, 0, 1};
  test.num_classes = 2;
  CHECK(nme_baseline(ext, mem, test, 2) == phase_accuracy(clf, test));

  ExemplarMemory missing;
  missing.policy = MemoryPolicy::per_class(1);
  Rng sel3(3);
  update_memory(missing, {NewClassData{0, rand_tensor(rng, {1, 3})}}, feats, sel3);
  CHECK_THROWS_AS(NmeClassifier(ext, missing, 2), Error);
}

TEST_CASE("eval: confusion statistics and score summaries") {
  std::vector<int> labels(8, 0);
  for (std::size_t i = 0; i < 4; ++i) labels[i] = 1;
  const LabeledDataset ds = index_dataset(labels, 2);

  const ConfusionSummary flat = confusion_stats(StubClassifier(Tensor::full({8, 3}, 2.5)), ds);
  CHECK(flat.min == 0.0);
  CHECK(flat.median == 0.0);
  CHECK(flat.max == 0.0);
  CHECK(flat.mean == 0.0);

  // one sharply dominant class per row pins every score at 1
  Tensor sharp = Tensor::full({8, 3}, 50.0);
  for (std::size_t i = 0; i < 8; ++i) sharp.at(i, i % 3) = 0.01;
  const ConfusionSummary conf = confusion_stats(StubClassifier(sharp), ds);
  CHECK(conf.mean >= 0.99);
  CHECK(conf.max <= 1.0);

  const ConfusionSummary s = summarize_scores({5.0, 3.0, 1.0, 2.0, 4.0});
  CHECK(s.min == 1.0);
  CHECK(s.q1 == 2.0);
  CHECK(s.median == 3.0);
  CHECK(s.q3 == 4.0);
  CHECK(s.max == 5.0);
  CHECK(s.mean == 3.0);

  const ConfusionSummary pair = summarize_scores({1.0, 0.0});
  CHECK(pair.q1 == 0.25);
  CHECK(pair.median == 0.5);
  CHECK(pair.q3 == 0.75);

  // sort-based recomputation on an awkward sample size
  Rng rng(9);
  std::vector<double> vals;
  for (int i = 0; i < 31; ++i) vals.push_back(rng.uniform(0.0, 1.0));
  std::vector<double> sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) {
    const double hf = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(hf);
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (hf - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const ConfusionSummary r = summarize_scores(vals);
  CHECK(std::fabs(r.q1 - quantile(0.25)) <= 1e-15);
  CHECK(std::fabs(r.median - quantile(0.5)) <= 1e-15);
  CHECK(std::fabs(r.q3 - quantile(0.75)) <= 1e-15);
  CHECK(r.min == sorted.front());
  CHECK(r.max == sorted.back());

  CHECK_THROWS_AS(summarize_scores({}), Error);
  CHECK_THROWS_AS(confusion_stats(StubClassifier(Tensor::full({8, 1}, 1.0)), ds), Error);
}

TEST_CASE("eval: misclassified error report") {
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  const LabeledDataset ds = index_dataset(labels, 3);

  Tensor perfect = Tensor::full({6, 3}, 1.0);
  for (std::size_t i = 0; i < 6; ++i) perfect.at(i, static_cast<std::size_t>(labels[i])) = 0.0;
  CHECK(misclassified_error_report(StubClassifier(perfect), ds).empty());

  Rng rng(11);
  const Tensor scores = rand_tensor(rng, {6, 3}, 0.0, 1.0);
  const StubClassifier clf(scores);
  const auto report = misclassified_error_report(clf, ds);
  const auto preds = clf.predict(ds.samples);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < 6; ++i) wrong += preds[i] != labels[i] ? 1 : 0;
  CHECK(report.size() == wrong);
  const double acc = phase_accuracy(clf, ds);
  CHECK(std::lround((1.0 - acc / 100.0) * 6.0) == static_cast<long>(report.size()));

  for (const MisclassifiedRecord& rec : report) {
    CHECK(rec.margin >= 0.0);
    CHECK(rec.true_class == labels[rec.index]);
    CHECK(rec.pred_class == preds[rec.index]);
    CHECK(rec.eps_true == scores.at(rec.index, static_cast<std::size_t>(rec.true_class)));
    CHECK(rec.eps_pred == scores.at(rec.index, static_cast<std::size_t>(rec.pred_class)));
    CHECK(rec.margin == rec.eps_true - rec.eps_pred);
  }
}

TEST_CASE("eval: embedding export round trip") {
  Rng rng(13);
  const FeatureExtractor ext(4, {6, 5}, rng);
  AutoEncoderBank bank(5, 3, true, false);
  bank.append_classes(3, rng);

  LabeledDataset ds;
  ds.samples = rand_tensor(rng, {20, 4});
  for (std::size_t i = 0; i < 20; ++i) ds.labels.push_back(static_cast<int>(i % 3));
  ds.num_classes = 3;
  ds.split = "test";

  const auto dir = fresh_dir("export_eval");
  const std::string fpath = (dir / "feat.txt").string();
  export_embeddings(ext, bank, ds, fpath, ExportSpace::parse("feature"));
  const LabeledDataset feat = load_table(fpath);
  REQUIRE(feat.size() == 20);
  CHECK(feat.dim() == 5);
  CHECK(feat.labels == ds.labels);
  const Tensor h = ext.features(ds.samples);
  for (std::size_t i = 0; i < h.numel(); ++i)
    CHECK(std::fabs(feat.samples.data[i] - h.data[i]) <= 1e-9);

  const std::string zpath = (dir / "latent.txt").string();
  export_embeddings(ext, bank, ds, zpath, ExportSpace::parse("latent:2"));
  const LabeledDataset lat = load_table(zpath);
  CHECK(lat.size() == 20);
  CHECK(lat.dim() == 3);

  CHECK_THROWS_AS(export_embeddings(ext, bank, ds, zpath, ExportSpace::parse("latent:7")),
                  Error);
  CHECK_THROWS_AS(ExportSpace::parse("pca"), Error);
  CHECK_THROWS_AS(ExportSpace::parse("latent:"), Error);
  CHECK_THROWS_AS(ExportSpace::parse("latent:x"), Error);
  const ExportSpace sp = ExportSpace::parse("latent:4");
  CHECK(sp.kind == ExportSpace::Kind::Latent);
  CHECK(sp.class_id == 4);
}

TEST_CASE("eval: run record serialization and the accuracy table") {
  RunRecord rec;
  rec.ablation = "full";
  rec.class_order = {2, 0, 1, 3};
  rec.config_echo = "a = 1\n";

  PhaseRecord p1;
  p1.phase = 1;
  p1.classes_seen = 2;
  p1.accuracy = 87.5;
  p1.params = {100, 40, 32, 140};
  p1.seconds = 0.25;

  PhaseRecord p2;
  p2.phase = 2;
  p2.classes_seen = 4;
  p2.accuracy = 62.25;
  p2.old_acc = 70.5;
  p2.new_acc = 54.0;
  ConfusionSummary cs;
  cs.min = 0.0;
  cs.q1 = 0.05;
  cs.median = 0.1;
  cs.q3 = 0.4;
  cs.max = 1.0;
  cs.mean = 0.123456;
  p2.confusion = cs;
  p2.params = {100, 80, 64, 180};
  p2.seconds = 0.5;

  rec.phases = {p1, p2};
  rec.avg_incremental = (87.5 + 62.25) / 2.0;

  const RunRecord back = RunRecord::from_json(rec.to_json());
  CHECK(back.ablation == rec.ablation);
  CHECK(back.avg_incremental == rec.avg_incremental);
  CHECK(back.class_order == rec.class_order);
  CHECK(back.config_echo == rec.config_echo);
  REQUIRE(back.phases.size() == 2);
  CHECK(back.phases[0].accuracy == 87.5);
  CHECK_FALSE(back.phases[0].old_acc.has_value());
  CHECK_FALSE(back.phases[0].confusion.has_value());
  CHECK(back.phases[0].params.head == 40);
  CHECK(back.phases[0].seconds == 0.25);
  REQUIRE(back.phases[1].old_acc.has_value());
  CHECK(*back.phases[1].old_acc == 70.5);
  REQUIRE(back.phases[1].confusion.has_value());
  CHECK(back.phases[1].confusion->mean == 0.123456);
  CHECK(back.phases[1].confusion->q3 == 0.4);
  CHECK(back.phases[1].params.head_bias_free == 64);

  CHECK(rec.accuracy_csv() ==
        "phase,classes_seen,accuracy,old_acc,new_acc,mean_confusion\n"
        "1,2,87.50,,,\n"
        "2,4,62.25,70.50,54.00,0.123456\n");

  double sum = 0.0;
  for (const PhaseRecord& p : rec.phases) sum += p.accuracy;
  CHECK(std::fabs(rec.avg_incremental - sum / static_cast<double>(rec.phases.size())) <= 1e-12);

  CHECK_THROWS_AS(RunRecord::from_json("{nope"), FormatError);
}
