#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "create/dataset.hpp"
#include "create/errors.hpp"
#include "test_util.hpp"

using namespace create;

namespace {

// Solve A w = b by Gaussian elimination with partial pivoting (oracle only).
std::vector<double> solve(std::vector<double> a, std::vector<double> b) {
  const std::size_t m = b.size();
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < m; ++r)
      if (std::fabs(a[r * m + col]) > std::fabs(a[pivot * m + col])) pivot = r;
    for (std::size_t j = 0; j < m; ++j) std::swap(a[col * m + j], a[pivot * m + j]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = 0; r < m; ++r) {
      if (r == col) continue;
      const double f = a[r * m + col] / a[col * m + col];
      for (std::size_t j = 0; j < m; ++j) a[r * m + j] -= f * a[col * m + j];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t i = 0; i < m; ++i) b[i] /= a[i * m + i];
  return b;
}

LabeledDataset fake_dataset(int num_classes, int per_class, const std::string& split) {
  LabeledDataset ds;
  ds.split = split;
  ds.num_classes = num_classes;
  ds.samples = Tensor::zeros({static_cast<std::size_t>(num_classes * per_class), 2});
  for (int c = 0; c < num_classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      const std::size_t row = static_cast<std::size_t>(c * per_class + i);
      ds.samples.at(row, 0) = c + 0.125 * i;
      ds.samples.at(row, 1) = -c;
      ds.labels.push_back(c);
    }
  return ds;
}

}  // namespace

TEST_CASE("datasets: synthetic generator is deterministic") {
  SyntheticDataset a = gen_synthetic_manifolds(5, 3, 2, 6, 40, 0.5, 6.0);
  SyntheticDataset b = gen_synthetic_manifolds(5, 3, 2, 6, 40, 0.5, 6.0);
  CHECK(a.data.train.samples.data == b.data.train.samples.data);
  CHECK(a.data.train.labels == b.data.train.labels);
  CHECK(a.data.test.samples.data == b.data.test.samples.data);
  CHECK(a.data.test.labels == b.data.test.labels);
  CHECK(a.train_cluster_ids == b.train_cluster_ids);

  // 80/20 stratified split
  CHECK(a.data.train.size() == 3 * 32);
  CHECK(a.data.test.size() == 3 * 8);
}

TEST_CASE("datasets: well-separated classes admit a linear fit") {
  SyntheticDataset ds = gen_synthetic_manifolds(3, 2, 1, 8, 60, 0.3, 6.0);
  const LabeledDataset& tr = ds.data.train;
  const std::size_t d = tr.dim(), m = d + 1;

  // least-squares classifier on [x, 1] -> +-1 as an independent oracle
  std::vector<double> gram(m * m, 0.0), rhs(m, 0.0);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    std::vector<double> xi(m, 1.0);
    for (std::size_t j = 0; j < d; ++j) xi[j] = tr.samples.at(i, j);
    const double y = tr.labels[i] == 1 ? 1.0 : -1.0;
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < m; ++c) gram[r * m + c] += xi[r] * xi[c];
      rhs[r] += y * xi[r];
    }
  }
  for (std::size_t j = 0; j < m; ++j) gram[j * m + j] += 1e-8;
  const std::vector<double> w = solve(gram, rhs);

  const LabeledDataset& te = ds.data.test;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < te.size(); ++i) {
    double score = w[d];
    for (std::size_t j = 0; j < d; ++j) score += w[j] * te.samples.at(i, j);
    if ((score > 0.0 ? 1 : 0) == te.labels[i]) ++correct;
  }
  CHECK(static_cast<double>(correct) / te.size() > 0.99);
}

TEST_CASE("datasets: multi-modal classes make the class mean a poor prototype") {
  SyntheticDataset ds = gen_synthetic_manifolds(11, 2, 2, 8, 100, 0.4, 6.0);
  const LabeledDataset& tr = ds.data.train;
  const std::size_t d = tr.dim();

  auto mean_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> mu(d, 0.0);
    for (std::size_t r : rows)
      for (std::size_t j = 0; j < d; ++j) mu[j] += tr.samples.at(r, j);
    for (double& v : mu) v /= static_cast<double>(rows.size());
    return mu;
  };
  auto mean_dist = [&](const std::vector<std::size_t>& rows, const std::vector<double>& mu) {
    double total = 0.0;
    for (std::size_t r : rows) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = tr.samples.at(r, j) - mu[j];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
    }
    return total / static_cast<double>(rows.size());
  };

  for (int cls = 0; cls < 2; ++cls) {
    std::vector<std::size_t> class_rows;
    std::vector<std::vector<std::size_t>> cluster_rows(2);
    for (std::size_t r = 0; r < tr.size(); ++r) {
      if (tr.labels[r] != cls) continue;
      class_rows.push_back(r);
      cluster_rows[ds.train_cluster_ids[r] % 2].push_back(r);
    }
    const double class_spread = mean_dist(class_rows, mean_of(class_rows));
    double cluster_spread = 0.0;
    for (const auto& rows : cluster_rows)
      cluster_spread += mean_dist(rows, mean_of(rows)) * rows.size();
    cluster_spread /= static_cast<double>(class_rows.size());
    CHECK(class_spread > cluster_spread);
  }
}

TEST_CASE("datasets: generator rejects fewer samples than clusters") {
  CHECK_THROWS_AS(gen_synthetic_manifolds(1, 2, 3, 4, 2, 0.5, 6.0), Error);
}

TEST_CASE("datasets: idx round trip hits the affine endpoints") {
  auto dir = fresh_dir("idx_endpoints");
  const std::string img = (dir / "imgs.idx").string();
  const std::string lab = (dir / "labs.idx").string();
  const std::vector<std::uint8_t> pixels = {0, 255, 255, 0, 255, 0, 0, 255};
  save_idx(img, lab, pixels, 2, 2, 2, {0, 1});

  LabeledDataset ds = load_idx(img, lab, "train");
  CHECK(ds.size() == 2);
  CHECK(ds.dim() == 4);
  CHECK(ds.labels == std::vector<int>{0, 1});
  const std::vector<double> expect = {-1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0};
  CHECK(ds.samples.data == expect);
}

TEST_CASE("datasets: idx loader validates magic numbers and length") {
  auto dir = fresh_dir("idx_errors");
  const std::string img = (dir / "imgs.idx").string();
  const std::string lab = (dir / "labs.idx").string();
  save_idx(img, lab, std::vector<std::uint8_t>(8, 7), 2, 2, 2, {0, 1});

  // labels file where an image file is expected
  CHECK_THROWS_AS(load_idx(lab, lab, "train"), FormatError);
  try {
    load_idx(lab, lab, "train");
  } catch (const FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find("0x00000803") != std::string::npos);  // expected
    CHECK(what.find("0x00000801") != std::string::npos);  // found
  }

  // truncate the image payload
  std::ifstream in(img, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  std::ofstream out(img, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  out.close();
  CHECK_THROWS_AS(load_idx(img, lab, "train"), FormatError);
}

TEST_CASE("datasets: task splits are disjoint and exhaustive") {
  SyntheticDataset ds = gen_synthetic_manifolds(9, 10, 1, 4, 20, 0.4, 5.0);

  TaskProtocol proto;
  proto.base_classes = 0;
  proto.increment = 2;
  proto.memory = MemoryPolicy::per_class(5);
  CHECK(proto.num_tasks(10) == 5);

  TaskStream stream = split_tasks(ds.data, proto, 9);
  REQUIRE(stream.tasks.size() == 5);
  std::set<int> seen;
  std::vector<double> split_first_coords;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const Task& task = stream.tasks[t];
    CHECK(task.class_ids == std::vector<int>{static_cast<int>(2 * t),
                                             static_cast<int>(2 * t + 1)});
    for (int c : task.class_ids) CHECK(!seen.count(c));
    seen.insert(task.class_ids.begin(), task.class_ids.end());
    for (int label : task.train.labels)
      CHECK(std::count(task.class_ids.begin(), task.class_ids.end(), label) == 1);
    for (std::size_t i = 0; i < task.train.size(); ++i)
      split_first_coords.push_back(task.train.samples.at(i, 0));
  }
  CHECK(seen.size() == 10);

  // every training sample reappears exactly once across tasks
  std::vector<double> original_first_coords;
  for (std::size_t i = 0; i < ds.data.train.size(); ++i)
    original_first_coords.push_back(ds.data.train.samples.at(i, 0));
  std::sort(split_first_coords.begin(), split_first_coords.end());
  std::sort(original_first_coords.begin(), original_first_coords.end());
  CHECK(split_first_coords == original_first_coords);

  // cumulative test sets grow strictly
  REQUIRE(stream.cumulative_test.size() == 5);
  std::size_t expected = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    expected += stream.tasks[t].test.size();
    CHECK(stream.cumulative_test[t].size() == expected);
    if (t > 0) CHECK(stream.cumulative_test[t].size() > stream.cumulative_test[t - 1].size());
  }
}

TEST_CASE("datasets: base-five protocol sizes") {
  SyntheticDataset ds = gen_synthetic_manifolds(9, 10, 1, 4, 20, 0.4, 5.0);
  TaskProtocol proto;
  proto.base_classes = 5;
  proto.increment = 1;
  proto.memory = MemoryPolicy::per_class(5);
  CHECK(proto.num_tasks(10) == 6);

  TaskStream stream = split_tasks(ds.data, proto, 4);
  REQUIRE(stream.tasks.size() == 6);
  std::vector<std::size_t> sizes;
  for (const Task& task : stream.tasks) sizes.push_back(task.class_ids.size());
  CHECK(sizes == std::vector<std::size_t>{5, 1, 1, 1, 1, 1});
}

TEST_CASE("datasets: hundred-class cumulative counts") {
  SplitDataset data;
  data.train = fake_dataset(100, 3, "train");
  data.test = fake_dataset(100, 1, "test");
  data.validate();

  TaskProtocol proto;
  proto.base_classes = 50;
  proto.increment = 10;
  proto.memory = MemoryPolicy::fixed_total(200);
  TaskStream stream = split_tasks(data, proto, 7);
  REQUIRE(stream.tasks.size() == 6);

  std::size_t cumulative = 0;
  const std::vector<std::size_t> expected = {50, 60, 70, 80, 90, 100};
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    cumulative += stream.tasks[t].class_ids.size();
    CHECK(cumulative == expected[t]);
    std::set<int> test_labels(stream.cumulative_test[t].labels.begin(),
                              stream.cumulative_test[t].labels.end());
    CHECK(test_labels.size() == expected[t]);
  }

  // protocol that never reaches the class count
  TaskProtocol bad;
  bad.base_classes = 4;
  bad.increment = 4;
  CHECK_THROWS_AS(bad.num_tasks(10), Error);
}

TEST_CASE("datasets: textual table round trip") {
  SyntheticDataset ds = gen_synthetic_manifolds(2, 3, 1, 5, 10, 0.5, 4.0);
  auto dir = fresh_dir("table");
  const std::string path = (dir / "train.tbl").string();
  save_table(ds.data.train, path);
  LabeledDataset back = load_table(path);
  CHECK(back.samples.shape == ds.data.train.samples.shape);
  CHECK(back.samples.data == ds.data.train.samples.data);  // %.17g is lossless
  CHECK(back.labels == ds.data.train.labels);
  CHECK(back.num_classes == ds.data.train.num_classes);
}
