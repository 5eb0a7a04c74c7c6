#include "dcfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <fmt/os.h>

#include "dcfl/error.hpp"
#include "dcfl/random.hpp"

namespace dcfl {

void Dataset::validate() const {
  if (labels.empty()) throw FormatError("dataset is empty");
  if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
    throw DimensionError(fmt::format("dataset has {} labels but inputs of shape {}", labels.size(),
                                     shape_to_string(inputs.shape())));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw FormatError(fmt::format("label {} at row {} outside [0, {})", labels[i], i, n_classes));
    }
  }
  if (!inputs.all_finite()) throw FormatError("dataset contains non-finite inputs");
}

LabeledBatch Dataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t d = dim();
  LabeledBatch batch{Tensor({indices.size(), d}, 0.0), {}, {indices.begin(), indices.end()}};
  batch.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t src = indices[r];
    if (src >= size()) throw IndexError(fmt::format("sample index {} outside dataset of {}", src, size()));
    const auto row = inputs.row(src);
    std::copy(row.begin(), row.end(), batch.inputs.row(r).begin());
    batch.labels.push_back(labels[src]);
  }
  return batch;
}

std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

DatasetPair synthetic_blobs(std::size_t n_classes, std::size_t dim, std::size_t n_per_class, double spread,
                            std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("synthetic_blobs: need at least 2 classes");
  if (dim < 2) throw ConfigError("synthetic_blobs: need dim >= 2");
  if (!(spread > 0.0)) throw ConfigError("synthetic_blobs: spread must be positive");
  if (n_per_class < 2) throw ConfigError("synthetic_blobs: need at least 2 samples per class");

  constexpr int kMaxAttempts = 10000;
  Rng rng = make_rng(seed, "blobs");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<std::vector<double>> means;
  const double min_dist = 2.0 * spread;
  for (std::size_t c = 0; c < n_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      std::vector<double> m(dim);
      for (double& v : m) v = unit(rng);
      placed = std::all_of(means.begin(), means.end(), [&](const std::vector<double>& other) {
        double ss = 0.0;
        for (std::size_t k = 0; k < dim; ++k) ss += (m[k] - other[k]) * (m[k] - other[k]);
        return std::sqrt(ss) >= min_dist;
      });
      if (placed) means.push_back(std::move(m));
    }
    if (!placed) {
      throw GenerationError(fmt::format("synthetic_blobs: could not place class {} mean at distance >= {} after {} "
                                        "attempts",
                                        c, min_dist, kMaxAttempts));
    }
  }

  const std::size_t n_train_per_class = (n_per_class * 4 + 2) / 5;
  std::normal_distribution<double> noise(0.0, spread);
  std::vector<std::vector<double>> train_rows, test_rows;
  std::vector<int> train_labels, test_labels;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < n_per_class; ++s) {
      std::vector<double> x(dim);
      for (std::size_t k = 0; k < dim; ++k) x[k] = means[c][k] + noise(rng);
      if (s < n_train_per_class) {
        train_rows.push_back(std::move(x));
        train_labels.push_back(static_cast<int>(c));
      } else {
        test_rows.push_back(std::move(x));
        test_labels.push_back(static_cast<int>(c));
      }
    }
  }

  auto assemble = [&](std::vector<std::vector<double>>& rows, std::vector<int>& labels, Split split,
                      std::string_view tag) {
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(seed, tag);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Dataset ds;
    ds.inputs = Tensor({rows.size(), dim}, 0.0);
    ds.labels.resize(rows.size());
    ds.n_classes = n_classes;
    ds.split = split;
    for (std::size_t r = 0; r < order.size(); ++r) {
      std::copy(rows[order[r]].begin(), rows[order[r]].end(), ds.inputs.row(r).begin());
      ds.labels[r] = labels[order[r]];
    }
    return ds;
  };
  return {assemble(train_rows, train_labels, Split::train, "blobs-train-order"),
          assemble(test_rows, test_labels, Split::test, "blobs-test-order")};
}

namespace {

void read_cifar_file(const std::filesystem::path& path, std::vector<std::uint8_t>& labels,
                     std::vector<std::uint8_t>& pixels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open CIFAR-10 file '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
    const std::size_t tail = bytes.size() - bytes.size() % kCifarRecordBytes;
    throw FormatError(fmt::format("'{}': length {} is not a positive multiple of {} (partial record at byte offset {})",
                                  path.string(), bytes.size(), kCifarRecordBytes, tail));
  }
  const std::size_t records = bytes.size() / kCifarRecordBytes;
  for (std::size_t r = 0; r < records; ++r) {
    const std::size_t offset = r * kCifarRecordBytes;
    if (bytes[offset] >= 10) {
      throw FormatError(
          fmt::format("'{}': label {} at byte offset {} is not in [0, 10)", path.string(), bytes[offset], offset));
    }
    labels.push_back(bytes[offset]);
    pixels.insert(pixels.end(), bytes.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + kCifarRecordBytes));
  }
}

}  // namespace

Dataset load_cifar10_binary(const std::filesystem::path& path, Cifar10Options options) {
  return load_cifar10_binary(std::span<const std::filesystem::path>(&path, 1), options);
}

Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths, Cifar10Options options) {
  std::vector<std::uint8_t> labels, pixels;
  for (const auto& p : paths) read_cifar_file(p, labels, pixels);
  if (labels.empty()) throw FormatError("no CIFAR-10 files given");
  const std::size_t n = labels.size();

  Dataset ds;
  ds.n_classes = 10;
  ds.split = options.split;
  ds.labels.assign(labels.begin(), labels.end());
  ds.inputs = Tensor({n, kCifarPixels}, 0.0);
  auto values = ds.inputs.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(pixels[i]) / 255.0;

  if (options.standardize) {
    // Channel planes are 1024 bytes each (R, G, B) within a record.
    constexpr std::size_t kPlane = kCifarPixels / 3;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double sum = 0.0, sq = 0.0;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t p = 0; p < kPlane; ++p) {
          const double v = ds.inputs.at(r, ch * kPlane + p);
          sum += v;
          sq += v * v;
        }
      const double count = static_cast<double>(n * kPlane);
      const double mean = sum / count;
      const double var = std::max(0.0, sq / count - mean * mean);
      const double sd = std::sqrt(var);
      const double scale = sd > 1e-12 ? 1.0 / sd : 1.0;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t p = 0; p < kPlane; ++p) {
          double& v = ds.inputs.at(r, ch * kPlane + p);
          v = (v - mean) * scale;
        }
    }
  }
  return ds;
}

std::vector<LabeledBatch> batch_iterator(const Dataset& data, std::span<const std::size_t> view,
                                         std::size_t batch_size, std::uint64_t epoch_seed) {
  if (batch_size < 2) throw ConfigError(fmt::format("batch size must be >= 2, got {}", batch_size));
  if (view.size() < batch_size) {
    throw ConfigError(fmt::format("view of {} samples cannot fill a batch of {}", view.size(), batch_size));
  }
  std::vector<std::size_t> order(view.begin(), view.end());
  Rng rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_batches = order.size() / batch_size;
  std::vector<LabeledBatch> batches;
  batches.reserve(n_batches);
  for (std::size_t b = 0; b < n_batches; ++b) {
    batches.push_back(data.gather(std::span<const std::size_t>(order).subspan(b * batch_size, batch_size)));
  }
  return batches;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("label");
  for (std::size_t k = 0; k < data.dim(); ++k) out.print(",x{}", k);
  out.print("\n");
  for (std::size_t r = 0; r < data.size(); ++r) {
    out.print("{}", data.labels[r]);
    for (double v : data.inputs.row(r)) out.print(",{:.17g}", v);
    out.print("\n");
  }
}

}  // namespace dcfl
