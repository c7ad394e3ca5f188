#include <doctest.h>

#include <set>

#include "shiftnas/error.hpp"
#include "shiftnas/rng.hpp"
#include "shiftnas/space.hpp"
#include "stats_oracle.hpp"

using namespace shiftnas;
using shiftnas::testing::chi_square_uniform_p;

namespace {

SearchSpace small_tiny() { return default_space("tiny", {8, 16, 4}); }

// 2 * weight elements, counted straight from the layer specs.
std::uint64_t flops_oracle(const SearchSpace& s, const ArchGenome& g) {
  std::uint64_t w = s.input_dim * s.hidden_dim + s.hidden_dim * s.num_classes;
  for (std::size_t b = 0; b < s.num_blocks(); ++b)
    for (const auto& l : s.blocks[b][g[b]].layers)
      if (l.kind == nn::LayerKind::dense) w += l.in_dim * l.out_dim;
  return 2 * w;
}

}  // namespace

TEST_CASE("genome string form round trips") {
  const ArchGenome g{{1, 2, 0, 3}};
  CHECK(g.str() == "1-2-0-3");
  CHECK(ArchGenome::parse("1-2-0-3") == g);
  CHECK_THROWS_AS(ArchGenome::parse("1--2"), InvalidArgument);
  CHECK_THROWS_AS(ArchGenome::parse(""), InvalidArgument);
  CHECK_THROWS_AS(ArchGenome::parse("a-1"), InvalidArgument);
}

TEST_CASE("preset sizes") {
  CHECK(default_space("tiny").size() == 256);
  CHECK(default_space("standard").size() == 65536);
  const auto big = make_uniform_space(20);
  CHECK(big.size() == (std::uint64_t{1} << 40));
  CHECK_THROWS_AS(default_space("huge"), InvalidArgument);
}

TEST_CASE("size saturates") {
  CHECK(make_uniform_space(40).size() == UINT64_MAX);
}

TEST_CASE("flops examples") {
  const auto s = small_tiny();
  CHECK(flops(s, ArchGenome{{0, 0, 0, 0}}) == 384);
  CHECK(flops(s, ArchGenome{{1, 2, 0, 0}}) == 1152);
}

TEST_CASE("flops agrees with the element-count oracle on every tiny genome") {
  const auto s = small_tiny();
  for (const auto& g : enumerate(s)) CHECK(flops(s, g) == flops_oracle(s, g));
}

TEST_CASE("flops monotone when replacing identity") {
  const auto s = small_tiny();
  for (const auto& g : enumerate(s))
    for (std::size_t b = 0; b < 4; ++b) {
      if (g[b] != 0) continue;
      for (std::size_t c = 1; c < 4; ++c) {
        auto h = g;
        h.choices[b] = c;
        CHECK(flops(s, h) >= flops(s, g));
      }
    }
}

TEST_CASE("flops additive and order invariant over identical blocks") {
  const auto s = small_tiny();
  const auto base = flops(s, ArchGenome{{0, 0, 0, 0}});
  CHECK(flops(s, ArchGenome{{1, 3, 2, 0}}) - base ==
        (flops(s, ArchGenome{{1, 0, 0, 0}}) - base) + (flops(s, ArchGenome{{0, 3, 0, 0}}) - base) +
            (flops(s, ArchGenome{{0, 0, 2, 0}}) - base));
  CHECK(flops(s, ArchGenome{{1, 3, 2, 0}}) == flops(s, ArchGenome{{2, 0, 3, 1}}));
}

TEST_CASE("invalid genomes are rejected") {
  const auto s = small_tiny();
  CHECK_FALSE(s.is_valid(ArchGenome{{0, 0, 0}}));
  CHECK_FALSE(s.is_valid(ArchGenome{{0, 0, 0, 4}}));
  CHECK_THROWS_AS(flops(s, ArchGenome{{0, 0, 0, 4}}), InvalidArgument);
}

TEST_CASE("validate rejects broken descriptors") {
  auto s = small_tiny();
  s.blocks[1].clear();
  CHECK_THROWS_AS(s.validate(), InvalidArgument);

  auto chain = small_tiny();
  chain.blocks[0][2].layers[1].in_dim = 5;
  CHECK_THROWS_AS(chain.validate(), InvalidArgument);

  auto budget = small_tiny();
  budget.flops_budget = 100;  // below the all-identity cost
  CHECK_THROWS_AS(budget.validate(), InvalidArgument);
  budget.flops_budget = 384;
  CHECK_NOTHROW(budget.validate());
}

TEST_CASE("sample_uniform") {
  SUBCASE("single choice block always 0") {
    auto s = small_tiny();
    s.blocks[2] = {s.blocks[2][1]};
    Rng rng(3);
    for (int i = 0; i < 200; ++i) CHECK(sample_uniform(s, rng)[2] == 0);
  }
  SUBCASE("chi-square per block at 40000 draws") {
    const auto s = small_tiny();
    Rng rng(11);
    std::vector<std::vector<std::size_t>> counts(4, std::vector<std::size_t>(4, 0));
    for (int i = 0; i < 40000; ++i) {
      auto g = sample_uniform(s, rng);
      for (std::size_t b = 0; b < 4; ++b) ++counts[b][g[b]];
    }
    for (const auto& c : counts) CHECK(chi_square_uniform_p(c) > 0.001);
  }
  SUBCASE("deterministic") {
    const auto s = small_tiny();
    Rng a(5), b(5);
    for (int i = 0; i < 100; ++i) CHECK(sample_uniform(s, a) == sample_uniform(s, b));
  }
}

TEST_CASE("mutate") {
  const auto s = small_tiny();
  Rng rng(17);
  const ArchGenome g{{1, 2, 3, 0}};
  for (int i = 0; i < 100; ++i) CHECK(mutate(g, 0.0, rng, s) == g);

  auto two = make_uniform_space(5, {8, 16, 4});
  for (auto& b : two.blocks) b.resize(2);
  const ArchGenome z{{0, 1, 0, 1, 0}};
  for (int i = 0; i < 100; ++i) {
    auto m = mutate(z, 1.0, rng, two);
    for (std::size_t b = 0; b < 5; ++b) CHECK(m[b] != z[b]);
  }

  const double p = 0.3;
  std::vector<std::size_t> flips(4, 0);
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    auto m = mutate(g, p, rng, s);
    CHECK(s.is_valid(m));
    for (std::size_t b = 0; b < 4; ++b) flips[b] += m[b] != g[b];
  }
  for (auto f : flips) CHECK(std::abs(static_cast<double>(f) / trials - p) < 0.02);
}

TEST_CASE("crossover") {
  const auto s = small_tiny();
  Rng rng(23);
  const ArchGenome a{{0, 1, 2, 3}}, b{{3, 2, 1, 0}};
  for (int i = 0; i < 50; ++i) CHECK(crossover(a, a, rng) == a);
  std::vector<std::size_t> from_a(4, 0);
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    auto c = crossover(a, b, rng);
    CHECK(s.is_valid(c));
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK((c[k] == a[k] || c[k] == b[k]));
      from_a[k] += c[k] == a[k];
    }
  }
  for (auto f : from_a) CHECK(std::abs(static_cast<double>(f) / trials - 0.5) < 0.02);
  CHECK_THROWS_AS(crossover(a, ArchGenome{{0, 1}}, rng), InvalidArgument);
}

TEST_CASE("enumerate") {
  auto one = make_uniform_space(1, {8, 16, 4});
  one.blocks[0].resize(2);
  const auto e1 = enumerate(one);
  REQUIRE(e1.size() == 2);
  CHECK(e1[0] == ArchGenome{{0}});
  CHECK(e1[1] == ArchGenome{{1}});

  const auto all = enumerate(small_tiny());
  CHECK(all.size() == 256);
  CHECK(std::set<ArchGenome>(all.begin(), all.end()).size() == 256);
  CHECK(all.front() == ArchGenome{{0, 0, 0, 0}});
  CHECK(std::is_sorted(all.begin(), all.end()));

  CHECK_THROWS_AS(enumerate(make_uniform_space(20)), InvalidArgument);
}

TEST_CASE("budgeted feasibility agrees with brute force") {
  auto s = small_tiny();
  const auto all = enumerate(s);
  for (std::uint64_t budget : {384u, 800u, 1152u, 2000u}) {
    s.flops_budget = budget;
    std::set<ArchGenome> feasible;
    for (const auto& g : all)
      if (flops_oracle(s, g) <= budget) feasible.insert(g);
    Rng rng(budget);
    for (int i = 0; i < 500; ++i) {
      auto g = sample_uniform(s, rng);
      CHECK(s.feasible(g) == (feasible.count(g) == 1));
    }
    CHECK(feasible.count(s.min_cost_genome()) == 1);
  }
}

TEST_CASE("json round trip is strict") {
  auto s = small_tiny();
  s.flops_budget = 2000;
  nlohmann::json j = s;
  CHECK(j.get<SearchSpace>() == s);
  j["extra"] = 1;
  CHECK_THROWS(j.get<SearchSpace>());
}
