#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "shiftnas/data.hpp"
#include "shiftnas/space.hpp"
#include "shiftnas/supernet.hpp"
#include "shiftnas/training.hpp"

namespace shiftnas {

enum class SearchMode { single_objective, bi_objective };

std::string_view to_string(SearchMode m);
SearchMode search_mode_from_string(std::string_view s);

struct EAConfig {
  std::size_t population_t = 50;
  std::size_t iterations = 20;
  double mutation_prob = 0.1;
  double crossover_fraction = 0.5;
  double shift_lr = 1e-4;
  // Training examples per iteration, split as evenly as possible over the
  // candidates; each candidate contributes one mini-batch.
  std::size_t shift_samples_per_iter = 640;
  // Overrides the space's own budget when set.
  std::optional<std::uint64_t> flops_budget;
  SearchMode mode = SearchMode::single_objective;
  bool shifting = true;
  std::size_t max_resample_attempts = 100;
  // false: parents are the previous generation regardless of fitness
  // (random-walk control without selection).
  bool elitism = true;
  EvalConfig eval;
  std::uint64_t seed = 0;

  void validate() const;
};

// Space with the config's budget applied.
SearchSpace constrained_space(const SearchSpace& space, const EAConfig& cfg);

struct Member {
  ArchGenome genome;
  EvalResult result;
  std::uint64_t flops = 0;
  double cost = 0.0;
};

struct HistoryEvent {
  std::size_t iteration = 0;
  ArchGenome genome;
  double accuracy = 0.0;
  std::uint64_t flops = 0;
  std::string phase;  // init | search | final
};

struct TrajectoryPoint {
  std::size_t iteration = 0;
  ArchGenome genome;
  double accuracy = 0.0;
};

struct SearchState {
  std::vector<Member> top_t;
  std::vector<HistoryEvent> history;
  // Parent pool when elitism is off.
  std::vector<ArchGenome> last_generation;
  std::size_t iteration = 0;
  Rng rng;
  Supernet net;
  std::vector<std::size_t> eval_rows;
  std::optional<BatchStream> shift_batches;
};

struct SearchResult {
  Member best;
  std::vector<Member> pareto_front;  // bi-objective mode only
  SearchState state;
  std::vector<TrajectoryPoint> trajectory;
};

// Genomes sampled by the EA (init + search phases), in order.
std::vector<ArchGenome> sampled_genomes(const std::vector<HistoryEvent>& history);

// `parents` empty => uniform feasible samples.
std::vector<ArchGenome> generate_candidates(const std::vector<ArchGenome>& parents, const EAConfig& cfg, Rng& rng,
                                            const SearchSpace& space);

// Latest result wins for re-sampled genomes; union deduplicated, ordered,
// truncated to population_t.
std::vector<Member> update_top_t(const std::vector<Member>& top_t, const std::vector<Member>& candidates,
                                 const EAConfig& cfg);

// Strict weak order used for top_t in single-objective mode:
// accuracy desc, flops asc, genome asc.
bool ranks_before(const Member& a, const Member& b);

// Pareto fronts over (accuracy: maximize, cost: minimize); returns indices.
std::vector<std::vector<std::size_t>> nondominated_sort(const std::vector<std::pair<double, double>>& points);

std::vector<double> crowding_distance(const std::vector<std::pair<double, double>>& front);

// How candidate fine-tuning interacts with evaluation.
struct ShiftPolicy {
  enum class Kind { none, accumulate, immediate };
  Kind kind = Kind::accumulate;
  // immediate: SGD steps per candidate and their batch size
  std::size_t steps_per_candidate = 10;
  std::size_t batch_size = 64;
  UpdateMask mask;
};

struct SearchHooks {
  // Called with iteration 0 before the initial population is evaluated and
  // after each iteration's weight update.
  std::function<void(std::size_t iteration, const Supernet& net)> on_iteration;
};

SearchState init_search_state(Supernet net, const Dataset& ds, const EAConfig& cfg);

// One EA iteration with accumulated shifting (or none if !cfg.shifting).
void ea_iteration(SearchState& state, const Dataset& ds, const EAConfig& cfg);
void ea_iteration(SearchState& state, const Dataset& ds, const EAConfig& cfg, const ShiftPolicy& policy);

SearchResult search(const Supernet& net, const Dataset& ds, const EAConfig& cfg,
                    const std::vector<ArchGenome>& probes = {}, const SearchHooks& hooks = {});
SearchResult search(const Supernet& net, const Dataset& ds, const EAConfig& cfg, const ShiftPolicy& policy,
                    const std::vector<ArchGenome>& probes, const SearchHooks& hooks);

// Additive per-(block, choice) table plus adjacent-block interactions, all N(0,1)
// scaled; a cheap deterministic stand-in for architecture quality.
struct SurrogateConfig {
  std::uint64_t seed = 0;
  double interaction_scale = 0.5;
  double noise_sigma = 0.0;
};

class SurrogateFitness {
 public:
  SurrogateFitness(const SearchSpace& space, const SurrogateConfig& cfg);
  double operator()(const ArchGenome& g) const;

 private:
  std::vector<std::vector<double>> table_;
  std::vector<std::vector<std::vector<double>>> pair_;  // [b][c_b][c_{b+1}]
};

// EA with evaluation = logistic(fitness + seeded noise); no weights, no shifting.
SearchResult surrogate_search(const SearchSpace& space, const SurrogateConfig& scfg, const EAConfig& cfg);

void write_history_csv(const std::vector<HistoryEvent>& history, const std::filesystem::path& path,
                       const std::string& header_comment = {});
void write_trajectory_csv(const std::vector<TrajectoryPoint>& trajectory, const std::filesystem::path& path,
                          const std::string& header_comment = {});

nlohmann::json to_json(const EAConfig& cfg);
EAConfig ea_config_from_json(const nlohmann::json& j);
nlohmann::json result_json(const SearchResult& result, const EAConfig& cfg);

}  // namespace shiftnas
