#include "shiftnas/evosearch.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "csv_io.hpp"
#include "shiftnas/error.hpp"

namespace shiftnas {

std::string_view to_string(SearchMode m) { return m == SearchMode::single_objective ? "single_objective" : "bi_objective"; }

SearchMode search_mode_from_string(std::string_view s) {
  if (s == "single_objective") return SearchMode::single_objective;
  if (s == "bi_objective") return SearchMode::bi_objective;
  throw InvalidArgument("unknown search mode '" + std::string(s) + "'");
}

void EAConfig::validate() const {
  if (population_t < 2) throw InvalidArgument("ea: population_t must be at least 2");
  if (!(mutation_prob >= 0.0 && mutation_prob <= 1.0)) throw InvalidArgument("ea: mutation_prob must lie in [0, 1]");
  if (!(crossover_fraction >= 0.0 && crossover_fraction <= 1.0))
    throw InvalidArgument("ea: crossover_fraction must lie in [0, 1]");
  if (!(shift_lr >= 0.0)) throw InvalidArgument("ea: shift_lr must be nonnegative");
  if (eval.batch_size == 0) throw InvalidArgument("ea: eval batch_size must be positive");
}

SearchSpace constrained_space(const SearchSpace& space, const EAConfig& cfg) {
  SearchSpace s = space;
  if (cfg.flops_budget) s.flops_budget = cfg.flops_budget;
  if (s.flops_budget && flops(s, s.min_cost_genome()) > *s.flops_budget)
    throw InvalidArgument("flops budget " + std::to_string(*s.flops_budget) + " admits no genome");
  return s;
}

bool ranks_before(const Member& a, const Member& b) {
  if (a.result.accuracy != b.result.accuracy) return a.result.accuracy > b.result.accuracy;
  if (a.flops != b.flops) return a.flops < b.flops;
  return a.genome < b.genome;
}

std::vector<ArchGenome> sampled_genomes(const std::vector<HistoryEvent>& history) {
  std::vector<ArchGenome> out;
  for (const auto& e : history)
    if (e.phase != "final") out.push_back(e.genome);
  return out;
}

namespace {

ArchGenome uniform_feasible(const SearchSpace& space, const EAConfig& cfg, Rng& rng) {
  for (std::size_t attempt = 0; attempt < std::max<std::size_t>(1, cfg.max_resample_attempts); ++attempt) {
    ArchGenome g = sample_uniform(space, rng);
    if (space.feasible(g)) return g;
  }
  if (space.size() <= kDefaultEnumerateCap) {
    std::vector<ArchGenome> feasible;
    for (auto& g : enumerate(space))
      if (space.feasible(g)) feasible.push_back(std::move(g));
    if (!feasible.empty()) return feasible[rng.index(feasible.size())];
  }
  throw InvalidArgument("no feasible genome found under flops budget after " +
                        std::to_string(cfg.max_resample_attempts) + " attempts");
}

}  // namespace

std::vector<ArchGenome> generate_candidates(const std::vector<ArchGenome>& parents, const EAConfig& cfg, Rng& rng,
                                            const SearchSpace& base_space) {
  const SearchSpace space = constrained_space(base_space, cfg);
  const std::size_t n = cfg.population_t;
  const auto n_cross = static_cast<std::size_t>(std::llround(cfg.crossover_fraction * static_cast<double>(n)));
  std::vector<ArchGenome> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<ArchGenome> child;
    if (!parents.empty()) {
      for (std::size_t attempt = 0; attempt < cfg.max_resample_attempts && !child; ++attempt) {
        ArchGenome g;
        if (i < n_cross && parents.size() >= 2) {
          const std::size_t a = rng.index(parents.size());
          std::size_t b = rng.index(parents.size() - 1);
          if (b >= a) ++b;
          g = mutate(crossover(parents[a], parents[b], rng), cfg.mutation_prob, rng, space);
        } else {
          g = mutate(parents[rng.index(parents.size())], cfg.mutation_prob, rng, space);
        }
        if (space.feasible(g)) child = std::move(g);
      }
    }
    out.push_back(child ? std::move(*child) : uniform_feasible(space, cfg, rng));
  }
  return out;
}

std::vector<std::vector<std::size_t>> nondominated_sort(const std::vector<std::pair<double, double>>& pts) {
  const std::size_t n = pts.size();
  auto dominates = [&](std::size_t a, std::size_t b) {
    const auto& [acc_a, cost_a] = pts[a];
    const auto& [acc_b, cost_b] = pts[b];
    return acc_a >= acc_b && cost_a <= cost_b && (acc_a > acc_b || cost_a < cost_b);
  };
  std::vector<std::vector<std::size_t>> dominated(n);
  std::vector<std::size_t> count(n, 0);
  std::vector<std::vector<std::size_t>> fronts(1);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      if (p == q) continue;
      if (dominates(p, q))
        dominated[p].push_back(q);
      else if (dominates(q, p))
        ++count[p];
    }
    if (count[p] == 0) fronts[0].push_back(p);
  }
  if (fronts[0].empty()) return {};
  for (std::size_t f = 0; !fronts[f].empty(); ++f) {
    std::vector<std::size_t> next;
    for (auto p : fronts[f])
      for (auto q : dominated[p])
        if (--count[q] == 0) next.push_back(q);
    std::sort(next.begin(), next.end());
    fronts.push_back(std::move(next));
  }
  fronts.pop_back();
  return fronts;
}

std::vector<double> crowding_distance(const std::vector<std::pair<double, double>>& front) {
  const std::size_t n = front.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(n, 0.0);
  if (n <= 2) return std::vector<double>(n, inf);
  for (int obj = 0; obj < 2; ++obj) {
    auto value = [&](std::size_t i) { return obj == 0 ? front[i].first : front[i].second; };
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return value(a) < value(b); });
    d[idx.front()] = inf;
    d[idx.back()] = inf;
    const double range = value(idx.back()) - value(idx.front());
    if (range <= 0.0) continue;
    for (std::size_t k = 1; k + 1 < n; ++k) d[idx[k]] += (value(idx[k + 1]) - value(idx[k - 1])) / range;
  }
  return d;
}

std::vector<Member> update_top_t(const std::vector<Member>& top_t, const std::vector<Member>& candidates,
                                 const EAConfig& cfg) {
  std::map<ArchGenome, Member> merged;
  for (const auto& m : top_t) merged.insert_or_assign(m.genome, m);
  for (const auto& m : candidates) merged.insert_or_assign(m.genome, m);
  std::vector<Member> all;
  all.reserve(merged.size());
  for (auto& [_, m] : merged) all.push_back(std::move(m));

  if (cfg.mode == SearchMode::single_objective) {
    std::sort(all.begin(), all.end(), ranks_before);
    if (all.size() > cfg.population_t) all.resize(cfg.population_t);
    return all;
  }

  std::vector<std::pair<double, double>> pts;
  for (const auto& m : all) pts.emplace_back(m.result.accuracy, m.cost);
  std::vector<Member> out;
  for (const auto& front : nondominated_sort(pts)) {
    std::vector<std::pair<double, double>> fp;
    for (auto i : front) fp.push_back(pts[i]);
    const auto dist = crowding_distance(fp);
    std::vector<std::size_t> order(front.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (dist[a] != dist[b]) return dist[a] > dist[b];
      return all[front[a]].genome < all[front[b]].genome;
    });
    for (auto k : order) {
      if (out.size() == cfg.population_t) return out;
      out.push_back(all[front[k]]);
    }
  }
  return out;
}

namespace {

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalResult evaluate(SearchState& state, const ArchGenome& g) = 0;
  virtual void after_evaluate(SearchState&, const ArchGenome&, std::size_t /*index*/, std::size_t /*count*/,
                              bool /*bootstrap*/) {}
  virtual void end_iteration(SearchState&, bool /*bootstrap*/) {}
};

class SupernetEvaluator final : public Evaluator {
 public:
  SupernetEvaluator(const Dataset& ds, const EAConfig& cfg, const ShiftPolicy& policy)
      : ds_(ds), cfg_(cfg), policy_(policy) {}

  EvalResult evaluate(SearchState& state, const ArchGenome& g) override {
    return evaluate_rows(state.net, g, ds_, state.eval_rows);
  }

  void after_evaluate(SearchState& state, const ArchGenome& g, std::size_t index, std::size_t count,
                      bool bootstrap) override {
    if (policy_.kind == ShiftPolicy::Kind::accumulate && !bootstrap) {
      const std::size_t n = cfg_.shift_samples_per_iter / count + (index < cfg_.shift_samples_per_iter % count);
      if (n == 0) return;
      Batch b = state.shift_batches->next(n);
      agg_.add(path_loss_and_grads(state.net, g, b.inputs, b.labels).grads);
    } else if (policy_.kind == ShiftPolicy::Kind::immediate) {
      for (std::size_t s = 0; s < policy_.steps_per_candidate; ++s) {
        Batch b = state.shift_batches->next(policy_.batch_size);
        GradAggregate one;
        one.add(path_loss_and_grads(state.net, g, b.inputs, b.labels).grads);
        apply_update(state.net, one, cfg_.shift_lr, 1, policy_.mask);
      }
    }
  }

  void end_iteration(SearchState& state, bool bootstrap) override {
    if (policy_.kind != ShiftPolicy::Kind::accumulate || bootstrap) return;
    apply_update(state.net, agg_, cfg_.shift_lr, std::max<std::size_t>(1, agg_.contributions()), policy_.mask);
    agg_ = GradAggregate{};
  }

 private:
  const Dataset& ds_;
  const EAConfig& cfg_;
  ShiftPolicy policy_;
  GradAggregate agg_;
};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(const SurrogateFitness& f, double sigma, std::uint64_t seed)
      : fitness_(f), sigma_(sigma), noise_(seed) {}

  EvalResult evaluate(SearchState&, const ArchGenome& g) override {
    double x = fitness_(g);
    if (sigma_ > 0.0) x += sigma_ * noise_.normal();
    return {g, logistic(x), 0.0, 0};
  }

 private:
  const SurrogateFitness& fitness_;
  double sigma_;
  Rng noise_;
};

void run_iteration(SearchState& state, const SearchSpace& space, const EAConfig& cfg, Evaluator& evaluator,
                   bool bootstrap) {
  std::vector<ArchGenome> parents;
  if (!bootstrap) {
    if (cfg.elitism)
      for (const auto& m : state.top_t) parents.push_back(m.genome);
    else
      parents = state.last_generation;
  }
  auto candidates = generate_candidates(parents, cfg, state.rng, space);
  std::vector<Member> results;
  results.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& g = candidates[i];
    Member m{g, evaluator.evaluate(state, g), flops(space, g), arch_cost(space, g)};
    state.history.push_back({state.iteration, g, m.result.accuracy, m.flops, bootstrap ? "init" : "search"});
    results.push_back(std::move(m));
    evaluator.after_evaluate(state, g, i, candidates.size(), bootstrap);
  }
  evaluator.end_iteration(state, bootstrap);
  state.top_t = update_top_t(state.top_t, results, cfg);
  state.last_generation = std::move(candidates);
}

void finalize(SearchResult& r, const SearchSpace& space, const EAConfig& cfg, Evaluator& evaluator) {
  auto& state = r.state;
  for (auto& m : state.top_t) {
    m.result = evaluator.evaluate(state, m.genome);
    state.history.push_back({state.iteration, m.genome, m.result.accuracy, m.flops, "final"});
  }
  std::sort(state.top_t.begin(), state.top_t.end(), ranks_before);
  if (state.top_t.empty()) throw InvalidArgument("search produced an empty population");
  r.best = state.top_t.front();
  if (cfg.mode == SearchMode::bi_objective) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& m : state.top_t) pts.emplace_back(m.result.accuracy, m.cost);
    const auto fronts = nondominated_sort(pts);
    for (auto i : fronts.front()) r.pareto_front.push_back(state.top_t[i]);
    std::sort(r.pareto_front.begin(), r.pareto_front.end(), ranks_before);
    r.best = r.pareto_front.front();
  }
  (void)space;
}

void record_probes(SearchResult& r, const std::vector<ArchGenome>& probes, const Dataset& ds) {
  for (const auto& p : probes)
    r.trajectory.push_back({r.state.iteration, p, evaluate_rows(r.state.net, p, ds, r.state.eval_rows).accuracy});
}

}  // namespace

SearchState init_search_state(Supernet net, const Dataset& ds, const EAConfig& cfg) {
  cfg.validate();
  if (ds.dim() != net.space.input_dim)
    throw ShapeError("search: dataset width " + std::to_string(ds.dim()) + " != supernet input_dim " +
                     std::to_string(net.space.input_dim));
  SearchState state;
  state.rng = Rng(derive_seed(cfg.seed, "ea"));
  state.net = std::move(net);
  state.eval_rows = eval_rows(ds, EvalConfig{cfg.eval.eval_batches, cfg.eval.batch_size, cfg.seed});
  state.shift_batches.emplace(ds, Split::train, 64, derive_seed(cfg.seed, "shift-batches"));
  return state;
}

void ea_iteration(SearchState& state, const Dataset& ds, const EAConfig& cfg, const ShiftPolicy& policy) {
  const SearchSpace space = constrained_space(state.net.space, cfg);
  SupernetEvaluator evaluator(ds, cfg, policy);
  run_iteration(state, space, cfg, evaluator, false);
}

void ea_iteration(SearchState& state, const Dataset& ds, const EAConfig& cfg) {
  ShiftPolicy policy;
  policy.kind = cfg.shifting ? ShiftPolicy::Kind::accumulate : ShiftPolicy::Kind::none;
  ea_iteration(state, ds, cfg, policy);
}

SearchResult search(const Supernet& net, const Dataset& ds, const EAConfig& cfg, const ShiftPolicy& policy,
                    const std::vector<ArchGenome>& probes, const SearchHooks& hooks) {
  const SearchSpace space = constrained_space(net.space, cfg);
  for (const auto& p : probes) space.require_valid(p);
  SearchResult r;
  r.state = init_search_state(net, ds, cfg);
  SupernetEvaluator evaluator(ds, cfg, policy);

  if (hooks.on_iteration) hooks.on_iteration(0, r.state.net);
  record_probes(r, probes, ds);
  run_iteration(r.state, space, cfg, evaluator, true);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    r.state.iteration = it;
    run_iteration(r.state, space, cfg, evaluator, false);
    if (hooks.on_iteration) hooks.on_iteration(it, r.state.net);
    record_probes(r, probes, ds);
  }
  finalize(r, space, cfg, evaluator);
  return r;
}

SearchResult search(const Supernet& net, const Dataset& ds, const EAConfig& cfg, const std::vector<ArchGenome>& probes,
                    const SearchHooks& hooks) {
  ShiftPolicy policy;
  policy.kind = cfg.shifting ? ShiftPolicy::Kind::accumulate : ShiftPolicy::Kind::none;
  return search(net, ds, cfg, policy, probes, hooks);
}

SurrogateFitness::SurrogateFitness(const SearchSpace& space, const SurrogateConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "surrogate-table"));
  const std::size_t nb = space.num_blocks();
  table_.resize(nb);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < space.num_choices(b); ++c) table_[b].push_back(rng.normal());
  if (nb > 1) pair_.resize(nb - 1);
  for (std::size_t b = 0; b + 1 < nb; ++b) {
    pair_[b].assign(space.num_choices(b), std::vector<double>(space.num_choices(b + 1)));
    for (auto& row : pair_[b])
      for (auto& v : row) v = cfg.interaction_scale * rng.normal();
  }
}

double SurrogateFitness::operator()(const ArchGenome& g) const {
  double f = 0.0;
  for (std::size_t b = 0; b < table_.size(); ++b) f += table_[b].at(g[b]);
  for (std::size_t b = 0; b < pair_.size(); ++b) f += pair_[b][g[b]][g[b + 1]];
  return f;
}

SearchResult surrogate_search(const SearchSpace& base_space, const SurrogateConfig& scfg, const EAConfig& cfg) {
  cfg.validate();
  const SearchSpace space = constrained_space(base_space, cfg);
  SurrogateFitness fitness(space, scfg);
  SurrogateEvaluator evaluator(fitness, scfg.noise_sigma, derive_seed(cfg.seed, "surrogate-noise"));
  SearchResult r;
  r.state.rng = Rng(derive_seed(cfg.seed, "ea"));
  run_iteration(r.state, space, cfg, evaluator, true);
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    r.state.iteration = it;
    run_iteration(r.state, space, cfg, evaluator, false);
  }
  finalize(r, space, cfg, evaluator);
  return r;
}

using detail::fmt_real;
using detail::open_csv;

void write_history_csv(const std::vector<HistoryEvent>& history, const std::filesystem::path& path,
                       const std::string& header_comment) {
  auto os = open_csv(path, header_comment);
  os << "iteration,genome,acc,flops,phase\n";
  for (const auto& e : history)
    os << e.iteration << ',' << e.genome.str() << ',' << fmt_real(e.accuracy) << ',' << e.flops << ',' << e.phase
       << '\n';
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

void write_trajectory_csv(const std::vector<TrajectoryPoint>& trajectory, const std::filesystem::path& path,
                          const std::string& header_comment) {
  auto os = open_csv(path, header_comment);
  os << "iteration,probe_genome,acc\n";
  for (const auto& p : trajectory) os << p.iteration << ',' << p.genome.str() << ',' << fmt_real(p.accuracy) << '\n';
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

nlohmann::json to_json(const EAConfig& c) {
  return {{"population_t", c.population_t},
          {"iterations", c.iterations},
          {"mutation_prob", c.mutation_prob},
          {"crossover_fraction", c.crossover_fraction},
          {"shift_lr", c.shift_lr},
          {"shift_samples_per_iter", c.shift_samples_per_iter},
          {"flops_budget", c.flops_budget ? nlohmann::json(*c.flops_budget) : nlohmann::json(nullptr)},
          {"mode", to_string(c.mode)},
          {"shifting", c.shifting},
          {"max_resample_attempts", c.max_resample_attempts},
          {"elitism", c.elitism},
          {"eval_batches", c.eval.eval_batches},
          {"eval_batch_size", c.eval.batch_size}};
}

EAConfig ea_config_from_json(const nlohmann::json& j) {
  EAConfig c;
  if (!j.is_object()) throw ConfigError("ea: expected an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "population_t") c.population_t = v.get<std::size_t>();
      else if (key == "iterations") c.iterations = v.get<std::size_t>();
      else if (key == "mutation_prob") c.mutation_prob = v.get<double>();
      else if (key == "crossover_fraction") c.crossover_fraction = v.get<double>();
      else if (key == "shift_lr") c.shift_lr = v.get<double>();
      else if (key == "shift_samples_per_iter") c.shift_samples_per_iter = v.get<std::size_t>();
      else if (key == "flops_budget") c.flops_budget = v.is_null() ? std::nullopt : std::optional(v.get<std::uint64_t>());
      else if (key == "mode") c.mode = search_mode_from_string(v.get<std::string>());
      else if (key == "shifting") c.shifting = v.get<bool>();
      else if (key == "max_resample_attempts") c.max_resample_attempts = v.get<std::size_t>();
      else if (key == "elitism") c.elitism = v.get<bool>();
      else if (key == "eval_batches") c.eval.eval_batches = v.get<std::size_t>();
      else if (key == "eval_batch_size") c.eval.batch_size = v.get<std::size_t>();
      else throw ConfigError("ea: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ea: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("ea: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

nlohmann::json member_json(const Member& m) {
  return {{"genome", m.genome.str()},
          {"accuracy", m.result.accuracy},
          {"loss", m.result.loss},
          {"flops", m.flops},
          {"cost", m.cost},
          {"at_step", m.result.at_step}};
}

}  // namespace

nlohmann::json result_json(const SearchResult& r, const EAConfig& cfg) {
  nlohmann::json front = nlohmann::json::array();
  for (const auto& m : r.pareto_front) front.push_back(member_json(m));
  nlohmann::json top = nlohmann::json::array();
  for (const auto& m : r.state.top_t) top.push_back(member_json(m));
  return {{"best", member_json(r.best)},
          {"pareto_front", front},
          {"top_t", top},
          {"config", to_json(cfg)},
          {"seed", cfg.seed}};
}

}  // namespace shiftnas
