#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "shiftnas/nncore.hpp"
#include "shiftnas/rng.hpp"

namespace shiftnas {

// One choice per block; choices[b] indexes into block b's catalog.
struct ArchGenome {
  std::vector<std::size_t> choices;

  std::size_t size() const noexcept { return choices.size(); }
  std::size_t operator[](std::size_t b) const { return choices[b]; }

  // "1-2-0-3"
  std::string str() const;
  static ArchGenome parse(std::string_view text);

  friend auto operator<=>(const ArchGenome&, const ArchGenome&) = default;
  friend bool operator==(const ArchGenome&, const ArchGenome&) = default;
};

struct GenomeHash {
  std::size_t operator()(const ArchGenome& g) const noexcept;
};

struct ChoiceSpec {
  std::string name;
  std::vector<nn::LayerSpec> layers;

  std::uint64_t weight_count() const noexcept;
  bool is_identity() const noexcept;

  friend bool operator==(const ChoiceSpec&, const ChoiceSpec&) = default;
};

struct SpaceDims {
  std::size_t input_dim = 16;
  std::size_t hidden_dim = 32;
  std::size_t num_classes = 10;
};

struct SearchSpace {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<ChoiceSpec>> blocks;
  // Adds the block input to the output of every parameterized choice
  // (identity choices pass through unchanged either way).
  bool block_skip = true;
  std::optional<std::uint64_t> flops_budget;
  // Per-(block, choice) user supplied latency; replaces flops as the cost
  // objective when present.
  std::optional<std::vector<std::vector<double>>> cost_table;

  std::size_t num_blocks() const noexcept { return blocks.size(); }
  std::size_t num_choices(std::size_t block) const { return blocks.at(block).size(); }
  // Product of choice counts, saturating at UINT64_MAX.
  std::uint64_t size() const noexcept;

  nn::LayerSpec stem_spec() const { return nn::LayerSpec::dense(input_dim, hidden_dim, nn::Activation::none); }
  nn::LayerSpec head_spec() const { return nn::LayerSpec::dense(hidden_dim, num_classes, nn::Activation::none); }

  // Checks chain consistency, widths and the budget admissibility rule.
  void validate() const;
  bool is_valid(const ArchGenome& g) const noexcept;
  void require_valid(const ArchGenome& g) const;

  bool feasible(const ArchGenome& g) const;
  // Genome picking the cheapest (by flops) choice in every block.
  ArchGenome min_cost_genome() const;

  std::string fingerprint() const;

  friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

// Catalog of the four interchangeable choices used by the presets:
// identity, dense+relu, bottleneck (hidden/4 inner width)+relu, dense+tanh.
std::vector<ChoiceSpec> standard_choices(std::size_t hidden_dim);

// n identical blocks drawn from standard_choices.
SearchSpace make_uniform_space(std::size_t num_blocks, const SpaceDims& dims = {});

// "tiny" = 4 blocks, "standard" = 8 blocks.
SearchSpace default_space(std::string_view preset, const SpaceDims& dims = {});

std::uint64_t flops(const SearchSpace& space, const ArchGenome& g);

// Search cost objective: cost_table sum if the space has one, else flops.
double arch_cost(const SearchSpace& space, const ArchGenome& g);

ArchGenome sample_uniform(const SearchSpace& space, Rng& rng);

ArchGenome mutate(const ArchGenome& g, double per_block_prob, Rng& rng, const SearchSpace& space);

ArchGenome crossover(const ArchGenome& a, const ArchGenome& b, Rng& rng);

inline constexpr std::uint64_t kDefaultEnumerateCap = 1'000'000;

std::vector<ArchGenome> enumerate(const SearchSpace& space, std::uint64_t cap = kDefaultEnumerateCap);

void to_json(nlohmann::json& j, const SearchSpace& space);
void from_json(const nlohmann::json& j, SearchSpace& space);

}  // namespace shiftnas
