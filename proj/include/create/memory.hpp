#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <vector>

#include "create/checkpoint.hpp"
#include "create/dataset.hpp"
#include "create/rng.hpp"
#include "create/tensor.hpp"

namespace create {

enum class SelectionRule { Herding, Random };

/// Raw inputs kept for one class, highest priority first. Under FixedTotal
/// rebalancing the store is truncated to a prefix, so herding order matters.
struct ClassStore {
  Tensor samples;                           // k x input_dim
  std::vector<std::size_t> source_indices;  // rows in the task's training set

  std::size_t size() const { return source_indices.size(); }
};

struct ExemplarMemory {
  MemoryPolicy policy;
  SelectionRule selection = SelectionRule::Herding;
  std::map<int, ClassStore> per_class;

  std::size_t num_classes() const { return per_class.size(); }
  std::size_t total_stored() const;
  const ClassStore& store(int class_id) const;

  void save(Checkpoint& ckpt) const;
  static ExemplarMemory load(const Checkpoint& ckpt, MemoryPolicy policy, SelectionRule rule);
};

struct NewClassData {
  int class_id = 0;
  Tensor samples;  // all training inputs of the class, original row order
};

/// Maps raw inputs to feature rows (n x feature_dim); injected so memory does
/// not depend on the model.
using FeatureFn = std::function<Tensor(const Tensor&)>;

/// Herding order: greedily pick the sample whose inclusion keeps the running
/// mean of selected features closest (L2) to the class mean; ties go to the
/// lowest original index. Returns min(quota, n) indices in selection order.
std::vector<std::size_t> herding_order(const Tensor& features, std::size_t quota);

/// Folds the new classes into memory and rebalances. FixedTotal recomputes
/// the per-class quota over all seen classes and truncates old stores to a
/// prefix; PerClass keeps a fixed count.
void update_memory(ExemplarMemory& memory, const std::vector<NewClassData>& new_classes,
                   const FeatureFn& features, Rng& rng);

/// Class-balanced sample for fine-tuning: min(per_class, available) rows per
/// seen class, old classes from memory, new classes from the task's training
/// data. Deterministic under the seed.
void balanced_subset(const ExemplarMemory& memory, const Tensor& task_samples,
                     const std::vector<int>& task_labels, std::size_t per_class,
                     std::uint64_t seed, Tensor& out_samples, std::vector<int>& out_labels);

}  // namespace create
