#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "shiftnas/error.hpp"

#include "shiftnas/data.hpp"
#include "shiftnas/space.hpp"
#include "shiftnas/supernet.hpp"
#include "shiftnas/training.hpp"

namespace shiftnas {

// Raised when a rank statistic has no defined value (e.g. every score tied).
struct UndefinedStatistic : Error {
  explicit UndefinedStatistic(const std::string& what) : Error("undefined_statistic", what) {}
};

struct PreconditionError : Error {
  explicit PreconditionError(const std::string& what) : Error("precondition_violated", what) {}
};

// Kendall's tau-b: (C - D) / sqrt((C + D + Tx)(C + D + Ty)), where Tx / Ty
// count pairs tied only in xs / only in ys. Equals tau-a without ties.
double kendall_tau(std::span<const double> xs, std::span<const double> ys);

struct RankedPair {
  std::string id;
  double estimated = 0.0;
  double truth = 0.0;
};

// Ids of the top-k pairs by `score`, ties broken by ascending id.
std::vector<std::string> top_k_ids(const std::vector<RankedPair>& pairs, std::size_t k,
                                   double RankedPair::*score = &RankedPair::estimated);

std::size_t global_topk_hits(const std::vector<RankedPair>& pairs, const std::set<std::string>& good_ids,
                             std::size_t k);

struct OrderReport {
  std::size_t iteration = 0;
  std::size_t global_hits = 0;
  std::size_t global_k = 0;
  double local_tau = 0.0;
  std::size_t n_good = 0;
  std::size_t n_poor = 0;
};

// Global hits (k = |good|) and Kendall's tau of estimate vs truth over the good set.
OrderReport order_report(const std::vector<RankedPair>& good, const std::vector<RankedPair>& poor,
                         std::size_t iteration);

struct ArchTruth {
  ArchGenome genome;
  double accuracy = 0.0;
};

// Throws PreconditionError naming the first (good, poor) pair where the good
// genome is not strictly better.
void check_good_beats_poor(const std::vector<ArchTruth>& good, const std::vector<ArchTruth>& poor);

// Retrains every genome with `retrain_cfg` to obtain ground truth.
std::vector<ArchTruth> retrain_truth(const SearchSpace& space, const std::vector<ArchGenome>& genomes,
                                     const Dataset& ds, const TrainConfig& retrain_cfg, std::size_t jobs = 1);

// Scores every genome on each checkpoint (full validation split unless
// `eval` says otherwise) and reports against the supplied ground truth.
std::vector<OrderReport> order_experiment(const std::vector<std::pair<std::size_t, Supernet>>& checkpoints,
                                          const std::vector<ArchTruth>& good, const std::vector<ArchTruth>& poor,
                                          const Dataset& ds, const EvalConfig& eval = {0, 64, 0});

// Same, retraining good and poor genomes first.
std::vector<OrderReport> order_experiment(const std::vector<std::pair<std::size_t, Supernet>>& checkpoints,
                                          const std::vector<ArchGenome>& good, const std::vector<ArchGenome>& poor,
                                          const Dataset& ds, const TrainConfig& retrain_cfg,
                                          const EvalConfig& eval = {0, 64, 0});

// Kendall correlation between how often each genome was sampled and its true score.
double sampling_fitness_correlation(std::span<const ArchGenome> samples,
                                    const std::function<double(const ArchGenome&)>& truth);

struct CrossTaskRank {
  double global_overlap = 0.0;
  std::optional<double> local_tau;  // empty when fewer than 2 shared ids (or all tied)
  std::size_t shared = 0;
};

// Compares the truth rankings of the same ids on two tasks.
CrossTaskRank cross_task_rank(const std::vector<RankedPair>& a, const std::vector<RankedPair>& b, std::size_t k = 10);

nlohmann::json to_json(const OrderReport& r);
void write_order_csv(const std::vector<OrderReport>& reports, const std::filesystem::path& path,
                     const std::string& header_comment = {});

}  // namespace shiftnas
