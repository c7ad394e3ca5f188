#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "shiftnas/data.hpp"
#include "shiftnas/space.hpp"
#include "shiftnas/supernet.hpp"

namespace shiftnas {

enum class Sampler { uniform, strict_fair };

std::string_view to_string(Sampler s);
Sampler sampler_from_string(std::string_view s);

struct TrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 64;
  double lr = 0.05;
  std::uint64_t seed = 0;
  Sampler sampler = Sampler::uniform;
  bool linear_decay = false;

  void validate() const;
};

struct TrainLogEntry {
  std::size_t step = 0;
  ArchGenome genome;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;

  // step,genome,loss
  void write_csv(const std::filesystem::path& path, const std::string& header_comment = {}) const;
};

// How many times each (block, choice) was on a trained path.
std::vector<std::vector<std::size_t>> choice_update_counts(const TrainLog& log, const SearchSpace& space);

// Single-path training, one uniformly sampled genome per step.
TrainLog train_uniform(Supernet& net, const Dataset& ds, const TrainConfig& cfg);

// Rounds of C steps; each block walks a fresh random permutation of its C
// choices per round, so every (block, choice) is trained equally often.
TrainLog train_strict_fair(Supernet& net, const Dataset& ds, const TrainConfig& cfg);

// Dispatches on cfg.sampler.
TrainLog train_supernet(Supernet& net, const Dataset& ds, const TrainConfig& cfg);

struct EvalResult {
  ArchGenome genome;
  double accuracy = 0.0;
  double loss = 0.0;
  std::uint64_t at_step = 0;
};

struct EvalConfig {
  std::size_t eval_batches = 8;  // 0 = full split
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Validation rows used by an EvalConfig: a fixed seeded subset, or the whole
// split when eval_batches == 0.
std::vector<std::size_t> eval_rows(const Dataset& ds, const EvalConfig& cfg);

EvalResult evaluate_arch(const Supernet& net, const ArchGenome& g, const Dataset& ds, const EvalConfig& cfg);
// Same, with the rows precomputed (and shared across many genomes).
EvalResult evaluate_rows(const Supernet& net, const ArchGenome& g, const Dataset& ds,
                         std::span<const std::size_t> rows);

// Ground-truth oracle: a standalone network with g's topology, trained from a
// fresh seeded init for cfg.steps and scored on the full validation split.
EvalResult retrain_from_scratch(const SearchSpace& space, const ArchGenome& g, const Dataset& ds,
                                const TrainConfig& cfg);

// retrain_from_scratch for each genome on up to `jobs` threads.
std::vector<EvalResult> retrain_many(const SearchSpace& space, const std::vector<ArchGenome>& genomes,
                                     const Dataset& ds, const TrainConfig& cfg, std::size_t jobs = 1);

}  // namespace shiftnas
