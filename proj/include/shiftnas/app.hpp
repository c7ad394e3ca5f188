#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shiftnas/data.hpp"
#include "shiftnas/evosearch.hpp"
#include "shiftnas/metrics.hpp"
#include "shiftnas/space.hpp"
#include "shiftnas/training.hpp"
#include "shiftnas/transfer.hpp"

namespace shiftnas {

// Synthetic preset name or CSV file.
struct DatasetSource {
  std::string synthetic;
  std::filesystem::path csv;

  // A path to an existing file is read as CSV, anything else as a preset name.
  static DatasetSource from_argument(const std::string& arg);
};

struct RunConfig {
  // Either a preset name ("tiny", "standard") or an inline descriptor.
  std::string space_preset = "tiny";
  std::optional<SearchSpace> space_inline;
  std::size_t hidden_dim = 32;
  DatasetSource dataset{"blobs-easy", {}};
  TrainConfig train;
  // Ground-truth training; defaults to `train` when absent.
  std::optional<TrainConfig> retrain;
  EAConfig ea;
  std::optional<TransferConfig> transfer;
  // Search iterations after which a checkpoint snapshot is written.
  std::vector<std::size_t> snapshot_iterations;
  std::size_t probes = 5;
  std::uint64_t master_seed = 0;
  bool seed_from_env = false;
  std::filesystem::path output_dir = "run";

  // Sub-seeds are derive_seed(master_seed, label); set by apply_seeds().
  std::uint64_t seed(std::string_view purpose) const;
  void apply_seeds();

  TrainConfig retrain_config() const;
  // Space for a dataset of the given shape.
  SearchSpace resolve_space(std::size_t input_dim, std::size_t num_classes) const;
  // Hash over everything except master_seed and output_dir.
  std::string hash() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
// Strict: unknown keys are ConfigErrors. SHIFTNAS_SEED, when set, replaces master_seed.
RunConfig run_config_from_json(const nlohmann::json& j, bool allow_env_seed = true);
RunConfig load_run_config(const std::filesystem::path& path, bool allow_env_seed = true);

Dataset load_dataset(const DatasetSource& src, std::uint64_t seed);

// config.json, checkpoints/, logs/, results/
class RunDir {
 public:
  RunDir(const RunConfig& cfg, const std::filesystem::path& root);
  explicit RunDir(const RunConfig& cfg) : RunDir(cfg, cfg.output_dir) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoints() const { return root_ / "checkpoints"; }
  std::filesystem::path logs() const { return root_ / "logs"; }
  std::filesystem::path results() const { return root_ / "results"; }

  // "config_hash=... master_seed=..."
  std::string stamp() const;
  // Adds config_hash and master_seed fields and writes pretty JSON.
  void write_json(const std::filesystem::path& path, nlohmann::json j) const;
  void tag(Supernet& net) const;

 private:
  std::filesystem::path root_;
  std::string hash_;
  std::uint64_t master_seed_;
};

struct GenomeEntry {
  ArchGenome genome;
  std::optional<double> accuracy;
};

// One "genome[,accuracy]" per line; '#' lines and blanks ignored.
std::vector<GenomeEntry> read_genome_file(const std::filesystem::path& path);

// Pipeline steps behind the CLI subcommands. Each returns the main artifact path.
std::filesystem::path cmd_train(const RunConfig& cfg);
std::filesystem::path cmd_search(const RunConfig& cfg, const std::filesystem::path& checkpoint, bool no_shifting);
std::filesystem::path cmd_retrain(const RunConfig& cfg, const std::vector<ArchGenome>& genomes, std::size_t jobs);
std::filesystem::path cmd_order_audit(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints,
                                      const std::filesystem::path& good, const std::filesystem::path& poor,
                                      std::size_t jobs);
std::filesystem::path cmd_transfer(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                   const DatasetSource& target, const std::optional<std::filesystem::path>& reference);
// Returns the report; throws ConfigError when artifacts disagree on hash or seed.
nlohmann::json cmd_report(const std::filesystem::path& run_dir);

}  // namespace shiftnas
