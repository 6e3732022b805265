#pragma once

#include <optional>
#include <string>
#include <vector>

#include "create/dataset.hpp"
#include "create/memory.hpp"
#include "create/model.hpp"

namespace create {

/// A frozen scorer: score_rows gives one row per sample, one column per seen
/// class, lower = better; predict is its argmin with ties to the lowest id.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Tensor score_rows(const Tensor& inputs) const = 0;
  std::vector<int> predict(const Tensor& inputs) const;
};

/// Reconstruction-error classifier over the auto-encoder bank.
class AeClassifier : public Classifier {
 public:
  AeClassifier(const FeatureExtractor& extractor, const AutoEncoderBank& bank);
  std::size_t num_classes() const override { return bank_->size(); }
  Tensor score_rows(const Tensor& inputs) const override;

 private:
  const FeatureExtractor* extractor_;
  const AutoEncoderBank* bank_;
};

/// Nearest-mean-of-exemplars: prototypes are mean features of the stored
/// exemplars, recomputed on the current extractor; scores are Euclidean
/// distances to the prototypes.
class NmeClassifier : public Classifier {
 public:
  NmeClassifier(const FeatureExtractor& extractor, const ExemplarMemory& memory,
                std::size_t num_classes);
  std::size_t num_classes() const override { return prototypes_.rows(); }
  Tensor score_rows(const Tensor& inputs) const override;
  const Tensor& prototypes() const { return prototypes_; }

 private:
  const FeatureExtractor* extractor_;
  Tensor prototypes_;  // C x d
};

struct OldNewAccuracy {
  std::optional<double> old_acc;
  std::optional<double> new_acc;
  double total = 0.0;
};

struct ConfusionSummary {
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

struct MisclassifiedRecord {
  std::size_t index = 0;
  int true_class = 0;
  int pred_class = 0;
  double eps_true = 0.0;
  double eps_pred = 0.0;
  double margin = 0.0;  // eps_true - eps_pred, >= 0 for a misclassification
};

double phase_accuracy(const Classifier& clf, const LabeledDataset& test);
/// Splits by label: old = labels < boundary, new = the rest.
OldNewAccuracy old_new_accuracy(const Classifier& clf, const LabeledDataset& test, int boundary);
double nme_baseline(const FeatureExtractor& extractor, const ExemplarMemory& memory,
                    const LabeledDataset& test, std::size_t num_classes);
ConfusionSummary confusion_stats(const Classifier& clf, const LabeledDataset& test);
/// Quartiles by linear interpolation over the sorted values.
ConfusionSummary summarize_scores(std::vector<double> scores);
std::vector<MisclassifiedRecord> misclassified_error_report(const Classifier& clf,
                                                            const LabeledDataset& test);

struct ExportSpace {
  enum class Kind { Feature, Latent };
  Kind kind = Kind::Feature;
  std::size_t class_id = 0;

  /// "feature" or "latent:<class id>".
  static ExportSpace parse(const std::string& text);
};

void export_embeddings(const FeatureExtractor& extractor, const AutoEncoderBank& bank,
                       const LabeledDataset& ds, const std::string& path,
                       const ExportSpace& space);

struct PhaseRecord {
  int phase = 0;         // 1-based
  int classes_seen = 0;  // C_t
  double accuracy = 0.0;
  std::optional<double> old_acc;
  std::optional<double> new_acc;
  std::optional<ConfusionSummary> confusion;
  ParamCounts params;
  double seconds = 0.0;
};

struct RunRecord {
  std::string ablation;  // nme | ae_only | full
  std::vector<PhaseRecord> phases;
  double avg_incremental = 0.0;
  std::vector<int> class_order;
  std::string config_echo;

  std::string to_json() const;
  static RunRecord from_json(const std::string& text);
  /// "phase,classes_seen,accuracy,old_acc,new_acc,mean_confusion"; accuracies
  /// to two decimals, absent entries left empty.
  std::string accuracy_csv() const;
};

}  // namespace create
