#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftnas/evosearch.hpp"

namespace shiftnas {

enum class TransferMode { finetune_all, freeze_features };

std::string_view to_string(TransferMode m);
TransferMode transfer_mode_from_string(std::string_view s);

struct TransferConfig {
  TransferMode mode = TransferMode::finetune_all;
  EAConfig ea;
  std::uint64_t head_seed = 0;
  bool immediate_updates = true;
  // SGD steps applied to each candidate's path right after its evaluation.
  std::size_t finetune_steps = 10;
  std::size_t finetune_batch = 64;

  void validate() const;
};

// Throws CheckpointError(space_mismatch) unless the two spaces share their
// block catalog, hidden width and skip rule.
void require_transferable(const SearchSpace& pretrained, const SearchSpace& target);

// Pretrained net with a fresh head for `ds` (and a fresh stem when the input
// width differs).
Supernet prepare_transfer(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg);

ShiftPolicy transfer_policy(const Supernet& prepared, const TransferConfig& tcfg);

SearchResult transfer_search(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg,
                             const std::vector<ArchGenome>& probes = {}, const SearchHooks& hooks = {});

struct GapRow {
  std::size_t iteration = 0;
  double transfer_acc = 0.0;
  double reference_acc = 0.0;
  double gap = 0.0;
};

// Mean supernet accuracy of `probes` on the given validation rows.
double mean_probe_accuracy(const Supernet& net, const std::vector<ArchGenome>& probes, const Dataset& ds,
                           std::span<const std::size_t> rows);

// Seeded uniform genomes used by the convergence probe.
std::vector<ArchGenome> probe_set(const SearchSpace& space, std::size_t n, std::uint64_t seed);

struct TransferRun {
  SearchResult result;
  std::vector<GapRow> gaps;
};

// transfer_search that also tracks mean supernet accuracy over `probes` for
// the transferring net (after each iteration) against a fixed reference net.
TransferRun transfer_with_gap(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg,
                              const Supernet& reference, const std::vector<ArchGenome>& probes);

std::vector<GapRow> transfer_convergence_probe(const Supernet& pretrained, const Dataset& ds,
                                               const TransferConfig& tcfg, const Supernet& reference,
                                               const std::vector<ArchGenome>& probes);

void write_gap_csv(const std::vector<GapRow>& rows, const std::filesystem::path& path,
                   const std::string& header_comment = {});

nlohmann::json to_json(const TransferConfig& cfg);
TransferConfig transfer_config_from_json(const nlohmann::json& j);

}  // namespace shiftnas
