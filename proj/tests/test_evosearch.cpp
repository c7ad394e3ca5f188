#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "shiftnas/error.hpp"
#include "shiftnas/evosearch.hpp"

using namespace shiftnas;
namespace fs = std::filesystem;

namespace {

const Dataset& rings() {
  static const Dataset ds = generate_synthetic("rings", 3);
  return ds;
}

const Supernet& trained_tiny() {
  static const Supernet net = [] {
    auto n = init_supernet(default_space("tiny", {rings().dim(), 16, rings().num_classes}), 1);
    TrainConfig c;
    c.steps = 300;
    c.seed = 2;
    train_uniform(n, rings(), c);
    return n;
  }();
  return net;
}

EAConfig small_ea(std::uint64_t seed = 1) {
  EAConfig c;
  c.population_t = 6;
  c.iterations = 3;
  c.shift_lr = 0.05;
  c.shift_samples_per_iter = 96;
  c.eval = {2, 32, 0};
  c.seed = seed;
  return c;
}

Member member(const std::string& g, double acc, std::uint64_t fl = 100) {
  return Member{ArchGenome::parse(g), EvalResult{ArchGenome::parse(g), acc, 0.0, 0}, fl, static_cast<double>(fl)};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("EAConfig validation") {
  EAConfig c;
  CHECK_NOTHROW(c.validate());
  c.population_t = 1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.mutation_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.shift_lr = -1;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("generate_candidates") {
  const auto s = default_space("tiny", {8, 16, 4});
  Rng rng(3);
  EAConfig c;
  c.population_t = 50;

  SUBCASE("bootstrap draws uniform feasible samples") {
    const auto cands = generate_candidates({}, c, rng, s);
    CHECK(cands.size() == 50);
    for (const auto& g : cands) CHECK(s.is_valid(g));
  }
  SUBCASE("budget equal to the all-identity cost admits only all-identity") {
    auto b = s;
    b.flops_budget = flops(s, ArchGenome{{0, 0, 0, 0}});
    const std::vector<ArchGenome> parents{ArchGenome{{0, 0, 0, 0}}};
    for (const auto& g : generate_candidates({}, c, rng, b)) CHECK(g == ArchGenome{{0, 0, 0, 0}});
    for (const auto& g : generate_candidates(parents, c, rng, b)) CHECK(g == ArchGenome{{0, 0, 0, 0}});
  }
  SUBCASE("every candidate lies in the brute-forced feasible set") {
    for (std::uint64_t budget : {600u, 1200u, 2500u}) {
      auto b = s;
      b.flops_budget = budget;
      std::set<ArchGenome> feasible;
      for (const auto& g : enumerate(s))
        if (flops(s, g) <= budget) feasible.insert(g);
      std::vector<ArchGenome> parents(feasible.begin(), feasible.end());
      parents.resize(std::min<std::size_t>(parents.size(), 10));
      c.mutation_prob = 0.5;
      for (const auto& g : generate_candidates(parents, c, rng, b)) CHECK(feasible.count(g) == 1);
    }
  }
}

TEST_CASE("update_top_t") {
  EAConfig c;
  c.population_t = 3;
  SUBCASE("latest result wins") {
    const std::vector<Member> top{member("0-0", 0.9), member("1-1", 0.8)};
    const auto out = update_top_t(top, {member("0-0", 0.5)}, c);
    auto it = std::find_if(out.begin(), out.end(), [](const Member& m) { return m.genome.str() == "0-0"; });
    REQUIRE(it != out.end());
    CHECK(it->result.accuracy == 0.5);
    CHECK(out.front().genome.str() == "1-1");
  }
  SUBCASE("worse candidates leave a full top_t unchanged") {
    const std::vector<Member> top{member("0-0", 0.9), member("1-1", 0.8), member("2-2", 0.7)};
    const auto out = update_top_t(top, {member("3-3", 0.1), member("0-1", 0.2)}, c);
    REQUIRE(out.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i].genome == top[i].genome);
  }
  SUBCASE("ties break on flops then genome") {
    const auto out = update_top_t({}, {member("2-2", 0.5, 300), member("1-1", 0.5, 100), member("0-0", 0.5, 300)}, c);
    CHECK(out[0].genome.str() == "1-1");
    CHECK(out[1].genome.str() == "0-0");
    CHECK(out[2].genome.str() == "2-2");
  }
  SUBCASE("50 + 50 merge equals sort-and-truncate") {
    c.population_t = 50;
    Rng rng(4);
    std::vector<double> scores(100);
    for (std::size_t i = 0; i < 100; ++i) scores[i] = static_cast<double>(i) / 100.0;
    shuffle(scores, rng);
    std::vector<Member> top, cands, all;
    for (std::size_t i = 0; i < 100; ++i) {
      auto m = member(std::to_string(i / 10) + "-" + std::to_string(i % 10), scores[i]);
      (i < 50 ? top : cands).push_back(m);
      all.push_back(m);
    }
    std::sort(top.begin(), top.end(), ranks_before);
    std::sort(all.begin(), all.end(), [](const Member& a, const Member& b) { return a.result.accuracy > b.result.accuracy; });
    const auto out = update_top_t(top, cands, c);
    REQUIRE(out.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) CHECK(out[i].genome == all[i].genome);
  }
}

TEST_CASE("nondominated_sort") {
  CHECK(nondominated_sort({{0.5, 10}}) == std::vector<std::vector<std::size_t>>{{0}});
  const auto fronts = nondominated_sort({{0.9, 100}, {0.8, 50}, {0.7, 200}});
  REQUIRE(fronts.size() == 2);
  CHECK(std::set<std::size_t>(fronts[0].begin(), fronts[0].end()) == std::set<std::size_t>{0, 1});
  CHECK(fronts[1] == std::vector<std::size_t>{2});
  const auto curve = nondominated_sort({{0.9, 90}, {0.8, 80}, {0.7, 70}, {0.6, 60}});
  CHECK(curve.size() == 1);
  CHECK(curve[0].size() == 4);
}

TEST_CASE("crowding_distance") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(crowding_distance({{0.9, 10}, {0.5, 5}}) == std::vector<double>{inf, inf});
  const auto d = crowding_distance({{0.9, 30}, {0.8, 20}, {0.7, 10}});
  CHECK(d[0] == inf);
  CHECK(d[2] == inf);
  CHECK(d[1] == doctest::Approx(2.0));
  const auto p = crowding_distance({{0.7, 10}, {0.9, 30}, {0.8, 20}});
  CHECK(p[0] == inf);
  CHECK(p[1] == inf);
  CHECK(p[2] == doctest::Approx(2.0));
}

TEST_CASE("ea_iteration without shifting leaves the supernet unchanged") {
  auto cfg = small_ea();
  cfg.shifting = false;
  auto state = init_search_state(trained_tiny(), rings(), cfg);
  const auto sum = state.net.checksum();
  for (int i = 0; i < 3; ++i) ea_iteration(state, rings(), cfg);
  CHECK(state.net.checksum() == sum);
}

TEST_CASE("ea_iteration with shift_lr 0 keeps weights") {
  auto cfg = small_ea();
  cfg.shift_lr = 0.0;
  auto state = init_search_state(trained_tiny(), rings(), cfg);
  const auto sum = state.net.checksum();
  ea_iteration(state, rings(), cfg);
  CHECK(state.net.checksum() == sum);
  CHECK(state.net.train_steps == trained_tiny().train_steps + 1);
}

TEST_CASE("shifting iteration replays as evaluate-all then one mean update") {
  auto cfg = small_ea();
  cfg.population_t = 2;
  cfg.shift_samples_per_iter = 7;  // uneven split: 4 + 3
  auto state = init_search_state(trained_tiny(), rings(), cfg);
  ea_iteration(state, rings(), cfg);  // parents exist after this
  const SearchState before = state;
  ea_iteration(state, rings(), cfg);

  std::vector<HistoryEvent> latest(state.history.begin() + static_cast<long>(before.history.size()), state.history.end());
  REQUIRE(latest.size() == 2);
  Supernet replay = before.net;
  BatchStream batches = *before.shift_batches;
  GradAggregate agg;
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& g = latest[i].genome;
    // evaluation happens on pre-update weights
    CHECK(evaluate_rows(before.net, g, rings(), before.eval_rows).accuracy == latest[i].accuracy);
    Batch b = batches.next(i == 0 ? 4 : 3);
    agg.add(path_loss_and_grads(replay, g, b.inputs, b.labels).grads);
  }
  apply_update(replay, agg, cfg.shift_lr, 2);
  CHECK(replay.checksum() == state.net.checksum());
  CHECK(replay.train_steps == state.net.train_steps);
}

TEST_CASE("search invariants") {
  auto cfg = small_ea(9);
  cfg.flops_budget = 6000;
  const auto r = search(trained_tiny(), rings(), cfg);
  const auto space = constrained_space(trained_tiny().space, cfg);
  std::set<ArchGenome> seen;
  CHECK(r.state.top_t.size() <= cfg.population_t);
  for (const auto& m : r.state.top_t) {
    CHECK(seen.insert(m.genome).second);
    CHECK(flops(space, m.genome) <= 6000);
  }
  CHECK(std::is_sorted(r.state.top_t.begin(), r.state.top_t.end(), ranks_before));
  CHECK(std::any_of(r.state.top_t.begin(), r.state.top_t.end(), [&](const Member& m) { return m.genome == r.best.genome; }));
  for (const auto& e : r.state.history) CHECK(e.flops <= 6000);
}

TEST_CASE("iterations = 0 picks the best bootstrap member on the unshifted net") {
  auto cfg = small_ea(4);
  cfg.iterations = 0;
  const auto r = search(trained_tiny(), rings(), cfg);
  CHECK(r.state.net.checksum() == trained_tiny().checksum());
  double best = -1;
  for (const auto& e : r.state.history)
    if (e.phase == "init") best = std::max(best, e.accuracy);
  CHECK(r.best.result.accuracy == best);
}

TEST_CASE("no-shift search is a frozen-supernet search and shares the first candidate set") {
  auto on = small_ea(5);
  auto off = on;
  off.shifting = false;
  const auto a = search(trained_tiny(), rings(), on);
  const auto b = search(trained_tiny(), rings(), off);
  CHECK(b.state.net.checksum() == trained_tiny().checksum());
  CHECK(a.state.net.checksum() != trained_tiny().checksum());
  // bootstrap (iteration 0) and the iteration-1 candidates agree; later ones may not
  for (std::size_t i = 0; i < 2 * on.population_t; ++i) {
    CHECK(a.state.history[i].genome == b.state.history[i].genome);
    if (a.state.history[i].iteration == 0) CHECK(a.state.history[i].accuracy == b.state.history[i].accuracy);
  }
}

TEST_CASE("search history is deterministic") {
  const auto cfg = small_ea(6);
  const auto a = search(trained_tiny(), rings(), cfg);
  const auto b = search(trained_tiny(), rings(), cfg);
  const auto pa = fs::temp_directory_path() / "shiftnas_test_hist_a.csv";
  const auto pb = fs::temp_directory_path() / "shiftnas_test_hist_b.csv";
  write_history_csv(a.state.history, pa, "x");
  write_history_csv(b.state.history, pb, "x");
  CHECK(slurp(pa) == slurp(pb));
  CHECK(slurp(pa).find("iteration,genome,acc,flops,phase\n") != std::string::npos);
  CHECK(result_json(a, cfg).dump() == result_json(b, cfg).dump());
}

TEST_CASE("probes and hooks") {
  const auto cfg = small_ea(7);
  const std::vector<ArchGenome> probes{ArchGenome{{1, 1, 1, 1}}, ArchGenome{{0, 0, 0, 0}}};
  std::vector<std::size_t> calls;
  SearchHooks hooks;
  hooks.on_iteration = [&](std::size_t it, const Supernet&) { calls.push_back(it); };
  const auto r = search(trained_tiny(), rings(), cfg, probes, hooks);
  CHECK(calls == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(r.trajectory.size() == 2 * 4);
}

TEST_CASE("bi-objective mode returns a nondominated front containing best") {
  auto cfg = small_ea(8);
  cfg.mode = SearchMode::bi_objective;
  const auto r = search(trained_tiny(), rings(), cfg);
  REQUIRE_FALSE(r.pareto_front.empty());
  for (const auto& a : r.pareto_front)
    for (const auto& b : r.pareto_front) {
      const bool dominates = a.result.accuracy >= b.result.accuracy && a.cost <= b.cost &&
                             (a.result.accuracy > b.result.accuracy || a.cost < b.cost);
      CHECK_FALSE(dominates);
    }
  CHECK(r.best.genome == r.pareto_front.front().genome);
}

TEST_CASE("surrogate search reaches the 95th percentile of the tiny space") {
  const auto s = default_space("tiny");
  const auto all = enumerate(s);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SurrogateConfig sc{seed, 0.5, 0.0};
    SurrogateFitness f(s, sc);
    std::vector<double> scores;
    for (const auto& g : all) scores.push_back(f(g));
    std::sort(scores.begin(), scores.end());
    const double p95 = scores[static_cast<std::size_t>(0.95 * (scores.size() - 1))];
    EAConfig c;
    c.seed = seed;
    const auto r = surrogate_search(s, sc, c);
    CHECK(f(r.best.genome) >= p95);
  }
}

TEST_CASE("ea config json is strict and round trips") {
  EAConfig c;
  c.population_t = 12;
  c.flops_budget = 5000;
  c.mode = SearchMode::bi_objective;
  const auto back = ea_config_from_json(to_json(c));
  CHECK(back.population_t == 12);
  CHECK(back.flops_budget == c.flops_budget);
  CHECK(back.mode == SearchMode::bi_objective);
  auto j = to_json(c);
  j["populaton_t"] = 3;
  CHECK_THROWS_AS(ea_config_from_json(j), ConfigError);
}
