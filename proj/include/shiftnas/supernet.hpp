#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "shiftnas/nncore.hpp"
#include "shiftnas/space.hpp"

namespace shiftnas {

inline constexpr const char* kCheckpointFormat = "shiftnas-ckpt-v1";

// Weight-sharing store: one parameter set per (block, choice, layer) plus a
// linear stem and a linear head that sit on every path.
struct Supernet {
  SearchSpace space;
  nn::DenseParams stem;
  std::vector<std::vector<std::vector<nn::DenseParams>>> blocks;  // [block][choice][layer]
  nn::DenseParams head;
  std::uint64_t train_steps = 0;
  bool stem_reinitialized = false;
  // Free-form provenance (config hash, master seed, ...) carried into checkpoints.
  std::map<std::string, std::string> provenance;

  const std::vector<nn::DenseParams>& choice_params(std::size_t block, std::size_t choice) const {
    return blocks.at(block).at(choice);
  }
  std::vector<nn::DenseParams>& choice_params(std::size_t block, std::size_t choice) {
    return blocks.at(block).at(choice);
  }

  std::size_t parameter_count() const;
  // FNV-1a over every parameter in canonical order.
  std::uint64_t checksum() const;
  std::uint64_t block_checksum() const;

  // Canonical order: stem W, stem b, blocks[b][c][l] W then b, head W, head b.
  void for_each_param(const std::function<void(const nn::DenseParams&)>& fn) const;
  void for_each_param(const std::function<void(nn::DenseParams&)>& fn);
};

Supernet init_supernet(const SearchSpace& space, std::uint64_t seed);

// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero bias.
nn::DenseParams init_dense(const nn::LayerSpec& spec, Rng& rng);

struct PathCache {
  ArchGenome genome;
  nn::LayerCache stem;
  std::vector<std::vector<nn::LayerCache>> blocks;  // per block, per layer of the selected choice
  nn::LayerCache head;
};

struct PathForward {
  nn::Matrix logits;
  PathCache cache;
};

struct ChoiceGrad {
  std::size_t block = 0;
  std::size_t choice = 0;
  std::vector<nn::DenseParams> layers;
};

// Gradients of one path. Only selected choices that own parameters appear.
struct PathGrads {
  ArchGenome genome;
  nn::DenseParams stem;
  nn::DenseParams head;
  std::vector<ChoiceGrad> choices;

  const ChoiceGrad* find(std::size_t block, std::size_t choice) const;
};

PathForward forward_path(const Supernet& net, const ArchGenome& g, const nn::Matrix& x);

PathGrads backward_path(const Supernet& net, const ArchGenome& g, const PathCache& cache,
                        const nn::Matrix& grad_logits);

struct LossAndGrads {
  double loss = 0.0;
  PathGrads grads;
};

// forward_path + softmax cross-entropy + backward_path on one mini-batch.
LossAndGrads path_loss_and_grads(const Supernet& net, const ArchGenome& g, const nn::Matrix& x,
                                 std::span<const std::size_t> labels);

// Running sum of path gradients; entries exist only for touched parameters.
class GradAggregate {
 public:
  void add(const PathGrads& grads);
  bool empty() const noexcept { return contributions_ == 0; }
  std::size_t contributions() const noexcept { return contributions_; }

  const std::optional<nn::DenseParams>& stem() const noexcept { return stem_; }
  const std::optional<nn::DenseParams>& head() const noexcept { return head_; }
  const std::map<std::pair<std::size_t, std::size_t>, std::vector<nn::DenseParams>>& choices() const noexcept {
    return choices_;
  }

 private:
  std::size_t contributions_ = 0;
  std::optional<nn::DenseParams> stem_;
  std::optional<nn::DenseParams> head_;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<nn::DenseParams>> choices_;
};

struct UpdateMask {
  bool stem = true;
  bool blocks = true;
  bool head = true;
};

// One SGD step per touched parameter with gradient = sum / normalizer.
// train_steps increments even for an empty aggregate.
void apply_update(Supernet& net, const GradAggregate& agg, double lr, std::size_t normalizer,
                  const UpdateMask& mask = {});

// Fresh head for a new class count; the stem is re-initialized only when the
// input width changes. Block parameters are kept bitwise.
Supernet reset_head(const Supernet& net, std::size_t new_num_classes, std::size_t new_input_dim, std::uint64_t seed);
Supernet reset_head(const Supernet& net, std::size_t new_num_classes, std::uint64_t seed);

void save_checkpoint(const Supernet& net, const std::filesystem::path& path);
Supernet load_checkpoint(const std::filesystem::path& path);
// Also rejects a checkpoint whose embedded space differs from `expected`.
Supernet load_checkpoint(const std::filesystem::path& path, const SearchSpace& expected);

}  // namespace shiftnas
