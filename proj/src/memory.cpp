#include "create/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "create/errors.hpp"

namespace create {

std::size_t ExemplarMemory::total_stored() const {
  std::size_t n = 0;
  for (const auto& [id, store] : per_class) n += store.size();
  return n;
}

const ClassStore& ExemplarMemory::store(int class_id) const {
  auto it = per_class.find(class_id);
  if (it == per_class.end())
    throw Error("memory has no exemplars for class " + std::to_string(class_id));
  return it->second;
}

void ExemplarMemory::save(Checkpoint& ckpt) const {
  ckpt.put("memory/num_classes", Tensor::scalar(static_cast<double>(per_class.size())));
  std::size_t slot = 0;
  for (const auto& [id, store] : per_class) {
    const std::string base = "memory/class" + std::to_string(slot++) + "/";
    ckpt.put(base + "id", Tensor::scalar(static_cast<double>(id)));
    ckpt.put(base + "samples", store.samples);
    Tensor idx = Tensor::zeros({store.source_indices.size()});
    for (std::size_t i = 0; i < store.source_indices.size(); ++i)
      idx.at(i) = static_cast<double>(store.source_indices[i]);
    ckpt.put(base + "source_indices", std::move(idx));
  }
}

ExemplarMemory ExemplarMemory::load(const Checkpoint& ckpt, MemoryPolicy policy,
                                    SelectionRule rule) {
  ExemplarMemory mem;
  mem.policy = policy;
  mem.selection = rule;
  const std::size_t n = static_cast<std::size_t>(ckpt.get("memory/num_classes").at(0));
  for (std::size_t slot = 0; slot < n; ++slot) {
    const std::string base = "memory/class" + std::to_string(slot) + "/";
    const int id = static_cast<int>(ckpt.get(base + "id").at(0));
    ClassStore store;
    store.samples = ckpt.get(base + "samples");
    Tensor idx = ckpt.get(base + "source_indices");
    store.source_indices.resize(idx.numel());
    for (std::size_t i = 0; i < idx.numel(); ++i)
      store.source_indices[i] = static_cast<std::size_t>(idx.at(i));
    if (store.samples.rank() != 2 || store.samples.rows() != store.source_indices.size())
      throw FormatError("checkpoint", "malformed memory store for class " + std::to_string(id));
    mem.per_class.emplace(id, std::move(store));
  }
  return mem;
}

std::vector<std::size_t> herding_order(const Tensor& features, std::size_t quota) {
  check_tensor(features, "herding features");
  if (features.rank() != 2) throw Error("herding_order expects an n x d feature matrix");
  const std::size_t n = features.rows(), d = features.cols();
  const std::size_t want = std::min(quota, n);
  if (want == 0) return {};

  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += features.at(i, j);
  for (double& m : mean) m /= static_cast<double>(n);

  std::vector<std::size_t> order;
  std::vector<char> taken(n, 0);
  std::vector<double> running(d, 0.0);  // sum of selected feature rows
  for (std::size_t step = 1; step <= want; ++step) {
    double best_dist = std::numeric_limits<double>::infinity();
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double m = (running[j] + features.at(i, j)) / static_cast<double>(step);
        const double diff = m - mean[j];
        dist += diff * diff;
      }
      if (dist < best_dist) {  // strict: ties keep the lowest index
        best_dist = dist;
        best = i;
      }
    }
    taken[best] = 1;
    order.push_back(best);
    for (std::size_t j = 0; j < d; ++j) running[j] += features.at(best, j);
  }
  return order;
}

namespace {

ClassStore select_exemplars(const NewClassData& cls, std::size_t quota, SelectionRule rule,
                            const FeatureFn& features, Rng& rng) {
  const std::size_t n = cls.samples.rows();
  std::vector<std::size_t> picks;
  if (rule == SelectionRule::Herding) {
    picks = herding_order(features(cls.samples), quota);
  } else {
    picks = rng.sample_without_replacement(n, std::min(quota, n));
  }
  ClassStore store;
  store.source_indices = picks;
  store.samples = Tensor::zeros({picks.size(), cls.samples.cols()});
  const std::size_t d = cls.samples.cols();
  for (std::size_t i = 0; i < picks.size(); ++i)
    std::copy_n(cls.samples.data.begin() + picks[i] * d, d, store.samples.data.begin() + i * d);
  return store;
}

void truncate_store(ClassStore& store, std::size_t quota) {
  if (store.size() <= quota) return;
  store.source_indices.resize(quota);
  Tensor kept = Tensor::zeros({quota, store.samples.cols()});
  std::copy_n(store.samples.data.begin(), quota * store.samples.cols(), kept.data.begin());
  store.samples = std::move(kept);
}

}  // namespace

void update_memory(ExemplarMemory& memory, const std::vector<NewClassData>& new_classes,
                   const FeatureFn& features, Rng& rng) {
  for (const NewClassData& cls : new_classes) {
    if (memory.per_class.count(cls.class_id))
      throw Error("update_memory: class " + std::to_string(cls.class_id) + " already stored");
    if (cls.samples.rank() != 2 || cls.samples.rows() == 0)
      throw Error("update_memory: class " + std::to_string(cls.class_id) + " has no samples");
  }

  const std::size_t total_classes = memory.per_class.size() + new_classes.size();
  const std::size_t quota = memory.policy.quota(total_classes);

  if (memory.policy.kind == MemoryPolicy::Kind::FixedTotal)
    for (auto& [id, store] : memory.per_class) truncate_store(store, quota);

  for (const NewClassData& cls : new_classes)
    memory.per_class.emplace(cls.class_id,
                             select_exemplars(cls, quota, memory.selection, features, rng));

  if (memory.policy.kind == MemoryPolicy::Kind::FixedTotal &&
      memory.total_stored() > memory.policy.amount)
    throw Error("update_memory: budget exceeded after rebalancing");
}

void balanced_subset(const ExemplarMemory& memory, const Tensor& task_samples,
                     const std::vector<int>& task_labels, std::size_t per_class,
                     std::uint64_t seed, Tensor& out_samples, std::vector<int>& out_labels) {
  if (per_class == 0) throw Error("balanced_subset: per_class must be at least 1");
  if (task_samples.rank() != 2 || task_samples.rows() != task_labels.size())
    throw Error("balanced_subset: task samples and labels disagree");

  std::map<int, std::vector<std::size_t>> task_rows;
  for (std::size_t i = 0; i < task_labels.size(); ++i)
    task_rows[task_labels[i]].push_back(i);

  std::vector<int> classes;
  for (const auto& [id, store] : memory.per_class) classes.push_back(id);
  for (const auto& [id, rows] : task_rows)
    if (!memory.per_class.count(id)) classes.push_back(id);
  std::sort(classes.begin(), classes.end());

  const std::size_t dim =
      memory.per_class.empty() ? task_samples.cols() : memory.per_class.begin()->second.samples.cols();
  if (!memory.per_class.empty() && task_samples.cols() != dim)
    throw Error("balanced_subset: memory and task sample widths disagree");

  Rng rng(seed);
  std::vector<double> rows;
  out_labels.clear();
  for (int c : classes) {
    const bool from_memory = memory.per_class.count(c) != 0;
    const Tensor& pool = from_memory ? memory.per_class.at(c).samples : task_samples;
    const std::vector<std::size_t>* pool_rows = from_memory ? nullptr : &task_rows.at(c);
    const std::size_t avail = from_memory ? memory.per_class.at(c).size() : pool_rows->size();
    const std::size_t k = std::min(per_class, avail);
    const auto picks = rng.sample_without_replacement(avail, k);
    for (std::size_t p : picks) {
      const std::size_t row = from_memory ? p : (*pool_rows)[p];
      rows.insert(rows.end(), pool.data.begin() + row * dim, pool.data.begin() + (row + 1) * dim);
      out_labels.push_back(c);
    }
  }
  out_samples = Tensor({out_labels.size(), dim}, std::move(rows));
}

}  // namespace create
