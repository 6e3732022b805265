#include "create/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "create/errors.hpp"

namespace create {

void LabeledDataset::validate() const {
  check_tensor(samples, "dataset samples");
  if (samples.rank() != 2) throw Error("dataset samples must be a 2-d tensor");
  if (samples.rows() != labels.size())
    throw Error("dataset has " + std::to_string(samples.rows()) + " sample rows but " +
                std::to_string(labels.size()) + " labels");
  if (num_classes <= 0) throw Error("dataset num_classes must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw Error("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                  " outside [0, " + std::to_string(num_classes) + ")");
  }
  if (!samples.all_finite()) throw Error("dataset samples contain non-finite values");
}

void SplitDataset::validate() {
  int max_label = -1;
  for (int y : train.labels) max_label = std::max(max_label, y);
  for (int y : test.labels) max_label = std::max(max_label, y);
  if (max_label < 0) throw Error("dataset is empty");
  train.num_classes = max_label + 1;
  test.num_classes = max_label + 1;
  train.validate();
  test.validate();
  if (train.dim() != test.dim())
    throw Error("train dim " + std::to_string(train.dim()) + " != test dim " +
                std::to_string(test.dim()));
  std::vector<char> in_train(max_label + 1, 0), in_test(max_label + 1, 0);
  for (int y : train.labels) in_train[y] = 1;
  for (int y : test.labels) in_test[y] = 1;
  for (int c = 0; c <= max_label; ++c) {
    if (!in_train[c]) throw Error("class " + std::to_string(c) + " has no training samples");
    if (!in_test[c]) throw Error("class " + std::to_string(c) + " has no test samples");
  }
}

std::size_t MemoryPolicy::quota(std::size_t num_classes) const {
  if (kind == Kind::PerClass) return amount;
  if (num_classes == 0) throw Error("memory quota requested for zero classes");
  return amount / num_classes;
}

int TaskProtocol::num_tasks(int num_classes) const {
  if (increment <= 0) throw Error("protocol increment must be positive");
  if (base_classes < 0 || base_classes >= num_classes)
    throw Error("protocol base_classes must be in [0, num_classes)");
  const int rest = num_classes - base_classes;
  if (rest % increment != 0)
    throw Error("protocol does not tile " + std::to_string(num_classes) + " classes: base " +
                std::to_string(base_classes) + " + m * " + std::to_string(increment));
  const int m = rest / increment;
  return base_classes > 0 ? m + 1 : m;
}

std::vector<std::size_t> rows_with_label(const LabeledDataset& ds, int label) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    if (ds.labels[i] == label) rows.push_back(i);
  return rows;
}

LabeledDataset take_rows(const LabeledDataset& ds, const std::vector<std::size_t>& rows) {
  LabeledDataset out;
  out.split = ds.split;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  out.samples = Tensor::zeros({rows.size(), ds.dim()});
  out.labels.resize(rows.size());
  const std::size_t d = ds.dim();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= ds.size()) throw Error("take_rows: row index out of range");
    std::copy_n(ds.samples.data.begin() + rows[i] * d, d, out.samples.data.begin() + i * d);
    out.labels[i] = ds.labels[rows[i]];
  }
  return out;
}

SyntheticDataset gen_synthetic_manifolds(std::uint64_t seed, int num_classes,
                                         int clusters_per_class, int dim, int samples_per_class,
                                         double cluster_spread, double cluster_separation) {
  if (num_classes < 2) throw Error("synthetic dataset needs at least 2 classes");
  if (clusters_per_class < 1) throw Error("clusters_per_class must be positive");
  if (dim < 2) throw Error("synthetic dim must be at least 2");
  if (samples_per_class < 2) throw Error("samples_per_class must be at least 2");
  if (samples_per_class < clusters_per_class)
    throw Error("samples_per_class smaller than clusters_per_class");
  if (cluster_spread <= 0.0 || cluster_separation <= 0.0)
    throw Error("cluster spread and separation must be positive");

  Rng rng(seed);
  const int n_test = std::max(1, samples_per_class / 5);
  const int n_train = samples_per_class - n_test;

  SyntheticDataset out;
  const std::size_t d = static_cast<std::size_t>(dim);
  out.data.train.samples = Tensor::zeros({static_cast<std::size_t>(num_classes) * n_train, d});
  out.data.test.samples = Tensor::zeros({static_cast<std::size_t>(num_classes) * n_test, d});
  out.data.train.split = "train";
  out.data.test.split = "test";

  std::vector<double> center(d), x(d);
  std::size_t train_row = 0, test_row = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::vector<double>> centers;
    for (int k = 0; k < clusters_per_class; ++k) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          center[j] = rng.normal();
          norm += center[j] * center[j];
        }
        norm = std::sqrt(norm);
      } while (norm < 1e-12);
      for (std::size_t j = 0; j < d; ++j) center[j] *= cluster_separation / norm;
      centers.push_back(center);
    }
    for (int s = 0; s < samples_per_class; ++s) {
      const int k = s % clusters_per_class;
      for (std::size_t j = 0; j < d; ++j) x[j] = centers[k][j] + cluster_spread * rng.normal();
      const bool is_test = s >= n_train;
      Tensor& dst = is_test ? out.data.test.samples : out.data.train.samples;
      std::size_t& row = is_test ? test_row : train_row;
      std::copy(x.begin(), x.end(), dst.data.begin() + row * d);
      (is_test ? out.data.test.labels : out.data.train.labels).push_back(c);
      (is_test ? out.test_cluster_ids : out.train_cluster_ids)
          .push_back(c * clusters_per_class + k);
      ++row;
    }
  }
  out.data.validate();
  return out;
}

namespace {

std::uint32_t read_u32_be(std::istream& in, const std::string& context) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError(context, "truncated header");
  return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
         (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::string hex_magic(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

}  // namespace

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError(images_path, "cannot open file");
  const std::uint32_t img_magic = read_u32_be(img, images_path);
  if (img_magic != kImagesMagic)
    throw FormatError(images_path, "expected image magic " + hex_magic(kImagesMagic) +
                                       ", found " + hex_magic(img_magic));
  const std::uint32_t count = read_u32_be(img, images_path);
  const std::uint32_t rows = read_u32_be(img, images_path);
  const std::uint32_t cols = read_u32_be(img, images_path);
  if (count == 0 || rows == 0 || cols == 0)
    throw FormatError(images_path, "empty image dimensions");

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError(labels_path, "cannot open file");
  const std::uint32_t lab_magic = read_u32_be(lab, labels_path);
  if (lab_magic != kLabelsMagic)
    throw FormatError(labels_path, "expected label magic " + hex_magic(kLabelsMagic) +
                                       ", found " + hex_magic(lab_magic));
  const std::uint32_t lab_count = read_u32_be(lab, labels_path);
  if (lab_count != count)
    throw FormatError(labels_path, "label count " + std::to_string(lab_count) +
                                       " != image count " + std::to_string(count));

  const std::size_t pixels_per_image = static_cast<std::size_t>(rows) * cols;
  LabeledDataset out;
  out.split = split;
  out.samples = Tensor::zeros({count, pixels_per_image});
  out.labels.resize(count);

  std::vector<unsigned char> buf(pixels_per_image);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (img.gcount() != static_cast<std::streamsize>(buf.size()))
      throw FormatError(images_path, "truncated image data at image " + std::to_string(i));
    double* dst = out.samples.data.data() + static_cast<std::size_t>(i) * pixels_per_image;
    for (std::size_t p = 0; p < pixels_per_image; ++p)
      dst[p] = (buf[p] / 255.0) * 2.0 - 1.0;  // [0,255] -> [-1,1]
  }
  std::vector<unsigned char> raw_labels(count);
  lab.read(reinterpret_cast<char*>(raw_labels.data()), static_cast<std::streamsize>(count));
  if (lab.gcount() != static_cast<std::streamsize>(count))
    throw FormatError(labels_path, "truncated label data");

  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    out.labels[i] = raw_labels[i];
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = max_label + 1;
  out.validate();
  return out;
}

void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::uint8_t>& pixels, std::size_t count, std::size_t rows,
              std::size_t cols, const std::vector<std::uint8_t>& labels) {
  if (pixels.size() != count * rows * cols)
    throw Error("save_idx: pixel buffer size does not match dimensions");
  if (labels.size() != count) throw Error("save_idx: label count does not match image count");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw Error("save_idx: cannot open " + images_path);
  write_u32_be(img, kImagesMagic);
  write_u32_be(img, static_cast<std::uint32_t>(count));
  write_u32_be(img, static_cast<std::uint32_t>(rows));
  write_u32_be(img, static_cast<std::uint32_t>(cols));
  img.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw Error("save_idx: cannot open " + labels_path);
  write_u32_be(lab, kLabelsMagic);
  write_u32_be(lab, static_cast<std::uint32_t>(count));
  lab.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!img || !lab) throw Error("save_idx: write failed");
}

void save_table(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw Error("save_table: cannot open " + path);
  out << "dim " << ds.dim() << "\n";
  out << "num_classes " << ds.num_classes << "\n";
  out << "split " << ds.split << "\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    const double* row = ds.samples.data.data() + i * ds.dim();
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      std::snprintf(buf, sizeof(buf), " %.17g", row[j]);
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw Error("save_table: write failed for " + path);
}

LabeledDataset load_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path, "cannot open file");

  auto next_line = [&](std::string& line) {
    while (std::getline(in, line)) {
      std::size_t first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      if (line[first] == '#') continue;
      return true;
    }
    return false;
  };

  LabeledDataset out;
  std::string line, key;
  std::size_t dim = 0;
  for (const char* expected : {"dim", "num_classes", "split"}) {
    if (!next_line(line)) throw FormatError(path, std::string("missing header line '") +
                                                      expected + "'");
    std::istringstream ss(line);
    ss >> key;
    if (key != expected)
      throw FormatError(path, "expected header '" + std::string(expected) + "', found '" + key +
                                  "'");
    if (key == "dim")
      ss >> dim;
    else if (key == "num_classes")
      ss >> out.num_classes;
    else
      ss >> out.split;
    if (!ss) throw FormatError(path, "malformed header line '" + line + "'");
  }
  if (dim == 0) throw FormatError(path, "dim must be positive");

  std::vector<double> values;
  while (next_line(line)) {
    std::istringstream ss(line);
    int label = 0;
    ss >> label;
    if (!ss) throw FormatError(path, "malformed row '" + line + "'");
    out.labels.push_back(label);
    for (std::size_t j = 0; j < dim; ++j) {
      double v = 0.0;
      ss >> v;
      if (!ss)
        throw FormatError(path, "row " + std::to_string(out.labels.size() - 1) + " has fewer than " +
                                    std::to_string(dim) + " values");
      values.push_back(v);
    }
    double extra;
    if (ss >> extra)
      throw FormatError(path, "row " + std::to_string(out.labels.size() - 1) +
                                  " has more than " + std::to_string(dim) + " values");
  }
  if (out.labels.empty()) throw FormatError(path, "table has no data rows");
  out.samples = Tensor({out.labels.size(), dim}, std::move(values));
  out.validate();
  return out;
}

TaskStream split_tasks(const SplitDataset& dataset, const TaskProtocol& protocol,
                       std::uint64_t seed) {
  dataset.train.validate();
  dataset.test.validate();
  if (dataset.train.num_classes != dataset.test.num_classes)
    throw Error("split_tasks: train/test disagree on num_classes");
  const int num_classes = dataset.train.num_classes;
  const int num_tasks = protocol.num_tasks(num_classes);

  TaskStream stream;
  stream.total_classes = num_classes;
  if (protocol.class_order.empty()) {
    stream.class_order.resize(num_classes);
    std::iota(stream.class_order.begin(), stream.class_order.end(), 0);
    Rng rng(seed);
    rng.shuffle(stream.class_order);
  } else {
    if (static_cast<int>(protocol.class_order.size()) != num_classes)
      throw Error("class_order has " + std::to_string(protocol.class_order.size()) +
                  " entries for " + std::to_string(num_classes) + " classes");
    std::set<int> seen;
    for (int c : protocol.class_order) {
      if (c < 0 || c >= num_classes || !seen.insert(c).second)
        throw Error("class_order is not a permutation of 0.." + std::to_string(num_classes - 1));
    }
    stream.class_order = protocol.class_order;
  }

  auto gather = [&](const LabeledDataset& src, int first_engine_id, int last_engine_id) {
    LabeledDataset out;
    out.split = src.split;
    out.num_classes = last_engine_id;
    std::vector<std::size_t> all_rows;
    std::vector<int> new_labels;
    for (int e = first_engine_id; e < last_engine_id; ++e) {
      const auto rows = rows_with_label(src, stream.class_order[e]);
      for (std::size_t r : rows) {
        all_rows.push_back(r);
        new_labels.push_back(e);
      }
    }
    LabeledDataset gathered = take_rows(src, all_rows);
    out.samples = std::move(gathered.samples);
    out.labels = std::move(new_labels);
    return out;
  };

  int start = 0;
  for (int t = 0; t < num_tasks; ++t) {
    const int size = (t == 0 && protocol.base_classes > 0) ? protocol.base_classes
                                                           : protocol.increment;
    const int end = start + size;
    Task task;
    for (int e = start; e < end; ++e) task.class_ids.push_back(e);
    task.train = gather(dataset.train, start, end);
    task.test = gather(dataset.test, start, end);
    stream.cumulative_test.push_back(gather(dataset.test, 0, end));
    stream.tasks.push_back(std::move(task));
    start = end;
  }
  return stream;
}

}  // namespace create
