#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dcfl/tensor.hpp"

namespace dcfl {

enum class Split { train, test };

struct LabeledBatch {
  Tensor inputs;  // rows x dim
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // rows' positions in the source dataset
};

struct Dataset {
  Tensor inputs;  // n x dim
  std::vector<int> labels;
  std::size_t n_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }
  // labels < n_classes, n >= 1, finite inputs.
  void validate() const;
  LabeledBatch gather(std::span<const std::size_t> indices) const;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

// Class means uniform in [-1, 1]^dim with pairwise distance >= 2 * spread; samples are
// mean + N(0, spread^2 I). Each class is split 80/20 into train and test.
DatasetPair synthetic_blobs(std::size_t n_classes, std::size_t dim, std::size_t n_per_class, double spread,
                            std::uint64_t seed);

struct Cifar10Options {
  // Per-channel standardization with statistics computed from the file itself.
  bool standardize = true;
  Split split = Split::train;
};

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarPixels = 3072;

Dataset load_cifar10_binary(const std::filesystem::path& path, Cifar10Options options = {});
Dataset load_cifar10_binary(std::span<const std::filesystem::path> paths, Cifar10Options options = {});

// Seeded shuffle of `view`, cut into full batches; the remainder is dropped.
std::vector<LabeledBatch> batch_iterator(const Dataset& data, std::span<const std::size_t> view,
                                         std::size_t batch_size, std::uint64_t epoch_seed);

std::vector<std::size_t> all_indices(const Dataset& data);

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace dcfl
