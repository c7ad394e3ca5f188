#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "shiftnas/nncore.hpp"
#include "shiftnas/rng.hpp"

namespace shiftnas {

enum class Split { train, val, test };

struct Dataset {
  std::string name;
  nn::Matrix features;              // n x d
  std::vector<std::size_t> labels;  // n
  std::vector<std::size_t> train, val, test;
  std::size_t num_classes = 0;
  // Original label values when the input labels were not 0..K-1; empty otherwise.
  std::vector<long long> label_mapping;
  std::vector<std::string> warnings;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  const std::vector<std::size_t>& split(Split s) const;

  // Splits disjoint and covering [0, n), labels in range.
  void validate() const;
  // validate() plus: every class present in train and val.
  void validate_for_training() const;
};

struct Batch {
  nn::Matrix inputs;
  std::vector<std::size_t> labels;
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> rows);

// Endless shuffled pass over one split; reshuffles at each epoch boundary.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, Split split, std::size_t batch_size, std::uint64_t seed);
  Batch next();
  Batch next(std::size_t n);

 private:
  const Dataset* ds_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// blobs-easy, blobs-hard, rings
Dataset generate_synthetic(std::string_view preset, std::uint64_t seed);

// Seeded 70/15/15 split.
void assign_default_splits(Dataset& ds, std::uint64_t seed);

// Header f0..f{d-1},label[,split]. Writes a split column so that a
// save/load round trip is lossless.
void save_csv(const Dataset& ds, const std::filesystem::path& path);
Dataset load_csv(const std::filesystem::path& path, std::uint64_t split_seed = 0);

}  // namespace shiftnas
