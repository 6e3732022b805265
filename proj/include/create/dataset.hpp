#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "create/rng.hpp"
#include "create/tensor.hpp"

namespace create {

/// One split (train or test) of a labeled dataset.
struct LabeledDataset {
  Tensor samples;  // n x dim
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;  // "train" or "test"
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return samples.cols(); }
  void validate() const;
};

struct SplitDataset {
  LabeledDataset train;
  LabeledDataset test;

  /// Harmonizes num_classes across the pair and checks that every class is
  /// present in both splits.
  void validate();
};

/// How the exemplar buffer is bounded.
struct MemoryPolicy {
  enum class Kind { FixedTotal, PerClass };
  Kind kind = Kind::PerClass;
  std::size_t amount = 20;

  static MemoryPolicy fixed_total(std::size_t budget) { return {Kind::FixedTotal, budget}; }
  static MemoryPolicy per_class(std::size_t count) { return {Kind::PerClass, count}; }

  /// Per-class quota once `num_classes` classes are seen.
  std::size_t quota(std::size_t num_classes) const;

  bool operator==(const MemoryPolicy&) const = default;
};

struct TaskProtocol {
  int base_classes = 0;
  int increment = 1;
  std::vector<int> class_order;  // empty: shuffled from the seed
  MemoryPolicy memory;
  std::uint64_t seed = 1;

  /// Number of phases for a dataset with `num_classes` classes; throws when
  /// base + m * increment never reaches the class count.
  int num_tasks(int num_classes) const;
};

/// One incremental task. Labels are remapped to contiguous ids in learning
/// order; engine id j corresponds to original class class_order[j].
struct Task {
  std::vector<int> class_ids;  // engine ids, ascending
  LabeledDataset train;
  LabeledDataset test;
};

struct TaskStream {
  std::vector<int> class_order;  // engine id -> original class id
  std::vector<Task> tasks;
  std::vector<LabeledDataset> cumulative_test;  // one per phase
  int total_classes = 0;
};

struct SyntheticDataset {
  SplitDataset data;
  std::vector<int> train_cluster_ids;  // class * clusters_per_class + cluster
  std::vector<int> test_cluster_ids;
};

/// Each class is a mixture of `clusters_per_class` isotropic Gaussian blobs
/// whose centers lie uniformly on a sphere of radius `cluster_separation`.
/// 80/20 train/test split, stratified per class (at least one test sample).
SyntheticDataset gen_synthetic_manifolds(std::uint64_t seed, int num_classes,
                                         int clusters_per_class, int dim, int samples_per_class,
                                         double cluster_spread, double cluster_separation);

/// IDX binary loader (big-endian header). Images magic 0x00000803, labels
/// magic 0x00000801. Pixels are mapped from [0, 255] to [-1, 1] and images
/// flattened row-major.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split);

/// IDX writer for the same layout load_idx reads (u8 pixels, u8 labels).
void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::uint8_t>& pixels, std::size_t count, std::size_t rows,
              std::size_t cols, const std::vector<std::uint8_t>& labels);

/// Textual table: header lines "dim N", "num_classes C", "split S", then one
/// row per sample of "label v1 ... vN". '#' lines and blanks are skipped.
void save_table(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_table(const std::string& path);

TaskStream split_tasks(const SplitDataset& dataset, const TaskProtocol& protocol,
                       std::uint64_t seed);

/// Rows of `ds` whose label equals `label` (order preserved).
std::vector<std::size_t> rows_with_label(const LabeledDataset& ds, int label);
/// Gather a sub-dataset by row indices.
LabeledDataset take_rows(const LabeledDataset& ds, const std::vector<std::size_t>& rows);

}  // namespace create
