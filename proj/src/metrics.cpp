#include "shiftnas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "shiftnas/error.hpp"

namespace shiftnas {

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw InvalidArgument("kendall_tau: length mismatch (" + std::to_string(xs.size()) + " vs " +
                          std::to_string(ys.size()) + ")");
  if (xs.size() < 2) throw InvalidArgument("kendall_tau: need at least 2 observations");
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw InvalidArgument("kendall_tau: non-finite score");
  long long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0)
        ++tied_x;
      else if (dy == 0.0)
        ++tied_y;
      else if ((dx > 0.0) == (dy > 0.0))
        ++concordant;
      else
        ++discordant;
    }
  }
  const double denom = std::sqrt(static_cast<double>(concordant + discordant + tied_x) *
                                 static_cast<double>(concordant + discordant + tied_y));
  if (denom == 0.0) throw UndefinedStatistic("kendall_tau: undefined because one sequence is entirely tied");
  return static_cast<double>(concordant - discordant) / denom;
}

std::vector<std::string> top_k_ids(const std::vector<RankedPair>& pairs, std::size_t k, double RankedPair::*score) {
  if (k > pairs.size())
    throw InvalidArgument("top-k: k = " + std::to_string(k) + " exceeds " + std::to_string(pairs.size()) + " pairs");
  std::vector<const RankedPair*> order;
  for (const auto& p : pairs) order.push_back(&p);
  std::sort(order.begin(), order.end(), [&](const RankedPair* a, const RankedPair* b) {
    if (a->*score != b->*score) return a->*score > b->*score;
    return a->id < b->id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(order[i]->id);
  return out;
}

std::size_t global_topk_hits(const std::vector<RankedPair>& pairs, const std::set<std::string>& good_ids,
                             std::size_t k) {
  std::set<std::string> ids;
  for (const auto& p : pairs) ids.insert(p.id);
  for (const auto& g : good_ids)
    if (!ids.count(g)) throw InvalidArgument("global_topk_hits: unknown id '" + g + "'");
  std::size_t hits = 0;
  for (const auto& id : top_k_ids(pairs, k)) hits += good_ids.count(id);
  return hits;
}

OrderReport order_report(const std::vector<RankedPair>& good, const std::vector<RankedPair>& poor,
                         std::size_t iteration) {
  std::vector<RankedPair> all = good;
  all.insert(all.end(), poor.begin(), poor.end());
  std::set<std::string> good_ids;
  std::vector<double> est, truth;
  for (const auto& p : good) {
    good_ids.insert(p.id);
    est.push_back(p.estimated);
    truth.push_back(p.truth);
  }
  OrderReport r;
  r.iteration = iteration;
  r.global_k = good.size();
  r.global_hits = global_topk_hits(all, good_ids, good.size());
  r.local_tau = kendall_tau(est, truth);
  r.n_good = good.size();
  r.n_poor = poor.size();
  return r;
}

void check_good_beats_poor(const std::vector<ArchTruth>& good, const std::vector<ArchTruth>& poor) {
  for (const auto& g : good)
    for (const auto& p : poor)
      if (!(g.accuracy > p.accuracy)) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "good genome %s (%.6f) does not beat poor genome %s (%.6f)",
                      g.genome.str().c_str(), g.accuracy, p.genome.str().c_str(), p.accuracy);
        throw PreconditionError(buf);
      }
}

std::vector<ArchTruth> retrain_truth(const SearchSpace& space, const std::vector<ArchGenome>& genomes,
                                     const Dataset& ds, const TrainConfig& retrain_cfg, std::size_t jobs) {
  std::vector<ArchTruth> out;
  for (const auto& r : retrain_many(space, genomes, ds, retrain_cfg, jobs)) out.push_back({r.genome, r.accuracy});
  return out;
}

std::vector<OrderReport> order_experiment(const std::vector<std::pair<std::size_t, Supernet>>& checkpoints,
                                          const std::vector<ArchTruth>& good, const std::vector<ArchTruth>& poor,
                                          const Dataset& ds, const EvalConfig& eval) {
  check_good_beats_poor(good, poor);
  const auto rows = eval_rows(ds, eval);
  std::vector<OrderReport> reports;
  for (const auto& [iteration, net] : checkpoints) {
    auto score = [&](const std::vector<ArchTruth>& set) {
      std::vector<RankedPair> out;
      for (const auto& t : set)
        out.push_back({t.genome.str(), evaluate_rows(net, t.genome, ds, rows).accuracy, t.accuracy});
      return out;
    };
    reports.push_back(order_report(score(good), score(poor), iteration));
  }
  return reports;
}

std::vector<OrderReport> order_experiment(const std::vector<std::pair<std::size_t, Supernet>>& checkpoints,
                                          const std::vector<ArchGenome>& good, const std::vector<ArchGenome>& poor,
                                          const Dataset& ds, const TrainConfig& retrain_cfg, const EvalConfig& eval) {
  if (checkpoints.empty()) throw InvalidArgument("order_experiment: no checkpoints");
  const auto& space = checkpoints.front().second.space;
  return order_experiment(checkpoints, retrain_truth(space, good, ds, retrain_cfg),
                          retrain_truth(space, poor, ds, retrain_cfg), ds, eval);
}

double sampling_fitness_correlation(std::span<const ArchGenome> samples,
                                    const std::function<double(const ArchGenome&)>& truth) {
  if (samples.empty()) throw InvalidArgument("sampling_fitness_correlation: empty history");
  std::map<ArchGenome, std::size_t> counts;
  for (const auto& g : samples) ++counts[g];
  if (counts.size() < 2)
    throw UndefinedStatistic("sampling_fitness_correlation: fewer than 2 distinct genomes were sampled");
  std::vector<double> freq, score;
  for (const auto& [g, c] : counts) {
    freq.push_back(static_cast<double>(c));
    score.push_back(truth(g));
  }
  return kendall_tau(freq, score);
}

CrossTaskRank cross_task_rank(const std::vector<RankedPair>& a, const std::vector<RankedPair>& b, std::size_t k) {
  std::map<std::string, double> truth_b;
  for (const auto& p : b) truth_b[p.id] = p.truth;
  if (a.size() != b.size() || truth_b.size() != b.size())
    throw InvalidArgument("cross_task_rank: id universes differ");
  for (const auto& p : a)
    if (!truth_b.count(p.id)) throw InvalidArgument("cross_task_rank: id '" + p.id + "' missing from second task");

  const auto top_a = top_k_ids(a, k, &RankedPair::truth);
  const auto top_b = top_k_ids(b, k, &RankedPair::truth);
  const std::set<std::string> set_b(top_b.begin(), top_b.end());
  std::map<std::string, double> truth_a;
  for (const auto& p : a) truth_a[p.id] = p.truth;

  CrossTaskRank r;
  std::vector<double> xa, xb;
  for (const auto& id : top_a)
    if (set_b.count(id)) {
      xa.push_back(truth_a[id]);
      xb.push_back(truth_b[id]);
    }
  r.shared = xa.size();
  r.global_overlap = k ? static_cast<double>(r.shared) / static_cast<double>(k) : 0.0;
  if (r.shared >= 2) {
    try {
      r.local_tau = kendall_tau(xa, xb);
    } catch (const UndefinedStatistic&) {
    }
  }
  return r;
}

nlohmann::json to_json(const OrderReport& r) {
  return {{"iteration", r.iteration}, {"global_hits", r.global_hits}, {"global_k", r.global_k},
          {"local_tau", r.local_tau}, {"n_good", r.n_good},           {"n_poor", r.n_poor}};
}

void write_order_csv(const std::vector<OrderReport>& reports, const std::filesystem::path& path,
                     const std::string& header_comment) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!header_comment.empty()) os << "# " << header_comment << '\n';
  os << "iteration,global_hits,local_tau\n";
  char buf[32];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%.17g", r.local_tau);
    os << r.iteration << ',' << r.global_hits << ',' << buf << '\n';
  }
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace shiftnas
