#include "shiftnas/space.hpp"

#include <algorithm>
#include <charconv>
#include <limits>

#include <json.hpp>

#include "shiftnas/error.hpp"

namespace shiftnas {

using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;

std::string ArchGenome::str() const {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(choices[i]);
  }
  return out;
}

ArchGenome ArchGenome::parse(std::string_view text) {
  ArchGenome g;
  if (text.empty()) throw InvalidArgument("genome string is empty");
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t dash = std::min(text.find('-', pos), text.size());
    const auto tok = text.substr(pos, dash - pos);
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc() || p != tok.data() + tok.size())
      throw InvalidArgument("malformed genome '" + std::string(text) + "'");
    g.choices.push_back(v);
    pos = dash + 1;
  }
  return g;
}

std::size_t GenomeHash::operator()(const ArchGenome& g) const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : g.choices) {
    h ^= c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return static_cast<std::size_t>(h);
}

std::uint64_t ChoiceSpec::weight_count() const noexcept {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.weight_count();
  return n;
}

bool ChoiceSpec::is_identity() const noexcept {
  return std::all_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::identity; });
}

std::uint64_t SearchSpace::size() const noexcept {
  std::uint64_t n = 1;
  for (const auto& b : blocks) {
    if (b.empty()) return 0;
    if (n > std::numeric_limits<std::uint64_t>::max() / b.size()) return std::numeric_limits<std::uint64_t>::max();
    n *= b.size();
  }
  return n;
}

void SearchSpace::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw InvalidArgument("space: input_dim and hidden_dim must be positive");
  if (num_classes < 2) throw InvalidArgument("space: num_classes must be at least 2");
  if (blocks.empty()) throw InvalidArgument("space: at least one block required");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    if (blocks[b].empty()) throw InvalidArgument("space: block " + std::to_string(b) + " has no choices");
    for (const auto& c : blocks[b]) {
      const std::string where = "space: block " + std::to_string(b) + " choice '" + c.name + "'";
      if (c.layers.empty()) throw InvalidArgument(where + " has no layers");
      for (const auto& l : c.layers) l.validate();
      if (c.layers.front().in_dim != hidden_dim || c.layers.back().out_dim != hidden_dim)
        throw InvalidArgument(where + " must map hidden_dim to hidden_dim");
      for (std::size_t i = 1; i < c.layers.size(); ++i)
        if (c.layers[i - 1].out_dim != c.layers[i].in_dim) throw InvalidArgument(where + " layer chain is inconsistent");
    }
  }
  if (cost_table) {
    if (cost_table->size() != blocks.size()) throw InvalidArgument("space: cost_table block count mismatch");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if ((*cost_table)[b].size() != blocks[b].size())
        throw InvalidArgument("space: cost_table row " + std::to_string(b) + " has wrong choice count");
      for (double v : (*cost_table)[b])
        if (!(v >= 0.0)) throw InvalidArgument("space: cost_table entries must be nonnegative");
    }
  }
  if (flops_budget && flops(*this, min_cost_genome()) > *flops_budget)
    throw InvalidArgument("space: flops_budget " + std::to_string(*flops_budget) +
                          " admits no genome (minimum is " + std::to_string(flops(*this, min_cost_genome())) + ")");
}

bool SearchSpace::is_valid(const ArchGenome& g) const noexcept {
  if (g.size() != blocks.size()) return false;
  for (std::size_t b = 0; b < blocks.size(); ++b)
    if (g.choices[b] >= blocks[b].size()) return false;
  return true;
}

void SearchSpace::require_valid(const ArchGenome& g) const {
  if (g.size() != blocks.size())
    throw InvalidArgument("genome " + g.str() + " has " + std::to_string(g.size()) + " positions, space has " +
                          std::to_string(blocks.size()) + " blocks");
  for (std::size_t b = 0; b < blocks.size(); ++b)
    if (g.choices[b] >= blocks[b].size())
      throw InvalidArgument("genome " + g.str() + ": choice " + std::to_string(g.choices[b]) + " out of range at block " +
                            std::to_string(b));
}

bool SearchSpace::feasible(const ArchGenome& g) const { return !flops_budget || flops(*this, g) <= *flops_budget; }

ArchGenome SearchSpace::min_cost_genome() const {
  ArchGenome g;
  g.choices.reserve(blocks.size());
  for (const auto& block : blocks) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < block.size(); ++c)
      if (block[c].weight_count() < block[best].weight_count()) best = c;
    g.choices.push_back(best);
  }
  return g;
}

std::string SearchSpace::fingerprint() const {
  nlohmann::json j = *this;
  return j.dump();
}

std::vector<ChoiceSpec> standard_choices(std::size_t h) {
  const std::size_t inner = std::max<std::size_t>(1, h / 4);
  return {
      {"identity", {LayerSpec::identity(h)}},
      {"dense_relu", {LayerSpec::dense(h, h, Activation::relu)}},
      {"bottleneck_relu", {LayerSpec::dense(h, inner, Activation::relu), LayerSpec::dense(inner, h, Activation::relu)}},
      {"dense_tanh", {LayerSpec::dense(h, h, Activation::tanh)}},
  };
}

SearchSpace make_uniform_space(std::size_t num_blocks, const SpaceDims& dims) {
  SearchSpace s;
  s.input_dim = dims.input_dim;
  s.hidden_dim = dims.hidden_dim;
  s.num_classes = dims.num_classes;
  s.blocks.assign(num_blocks, standard_choices(dims.hidden_dim));
  s.validate();
  return s;
}

SearchSpace default_space(std::string_view preset, const SpaceDims& dims) {
  if (preset == "tiny") return make_uniform_space(4, dims);
  if (preset == "standard") return make_uniform_space(8, dims);
  throw InvalidArgument("unknown space preset '" + std::string(preset) + "' (expected tiny or standard)");
}

std::uint64_t flops(const SearchSpace& space, const ArchGenome& g) {
  space.require_valid(g);
  std::uint64_t elems = space.input_dim * space.hidden_dim + space.hidden_dim * space.num_classes;
  for (std::size_t b = 0; b < g.size(); ++b) elems += space.blocks[b][g.choices[b]].weight_count();
  return 2 * elems;
}

double arch_cost(const SearchSpace& space, const ArchGenome& g) {
  if (!space.cost_table) return static_cast<double>(flops(space, g));
  space.require_valid(g);
  double c = 0.0;
  for (std::size_t b = 0; b < g.size(); ++b) c += (*space.cost_table)[b][g.choices[b]];
  return c;
}

ArchGenome sample_uniform(const SearchSpace& space, Rng& rng) {
  ArchGenome g;
  g.choices.reserve(space.num_blocks());
  for (const auto& block : space.blocks) g.choices.push_back(rng.index(block.size()));
  return g;
}

ArchGenome mutate(const ArchGenome& g, double p, Rng& rng, const SearchSpace& space) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("mutate: probability must lie in [0, 1]");
  space.require_valid(g);
  ArchGenome out = g;
  for (std::size_t b = 0; b < out.size(); ++b) {
    if (!rng.bernoulli(p)) continue;
    const std::size_t n = space.num_choices(b);
    if (n < 2) continue;
    std::size_t c = rng.index(n - 1);
    if (c >= out.choices[b]) ++c;
    out.choices[b] = c;
  }
  return out;
}

ArchGenome crossover(const ArchGenome& a, const ArchGenome& b, Rng& rng) {
  if (a.size() != b.size())
    throw InvalidArgument("crossover: parent lengths differ (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  ArchGenome child = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (rng.bernoulli(0.5)) child.choices[i] = b.choices[i];
  return child;
}

std::vector<ArchGenome> enumerate(const SearchSpace& space, std::uint64_t cap) {
  const std::uint64_t n = space.size();
  if (n > cap)
    throw InvalidArgument("enumerate: space has " + std::to_string(n) + " genomes, cap is " + std::to_string(cap));
  std::vector<ArchGenome> out;
  out.reserve(n);
  ArchGenome g{std::vector<std::size_t>(space.num_blocks(), 0)};
  for (std::uint64_t i = 0; i < n; ++i) {
    out.push_back(g);
    // odometer increment, last block fastest
    for (std::size_t b = g.size(); b-- > 0;) {
      if (++g.choices[b] < space.num_choices(b)) break;
      g.choices[b] = 0;
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const SearchSpace& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& block : s.blocks) {
    nlohmann::json choices = nlohmann::json::array();
    for (const auto& c : block) {
      nlohmann::json layers = nlohmann::json::array();
      for (const auto& l : c.layers)
        layers.push_back({{"kind", nn::to_string(l.kind)},
                          {"in_dim", l.in_dim},
                          {"out_dim", l.out_dim},
                          {"activation", nn::to_string(l.activation)}});
      choices.push_back({{"name", c.name}, {"layers", layers}});
    }
    blocks.push_back(choices);
  }
  j = {{"input_dim", s.input_dim},
       {"hidden_dim", s.hidden_dim},
       {"num_classes", s.num_classes},
       {"blocks", blocks},
       {"block_skip", s.block_skip},
       {"flops_budget", s.flops_budget ? nlohmann::json(*s.flops_budget) : nlohmann::json(nullptr)},
       {"cost_table", s.cost_table ? nlohmann::json(*s.cost_table) : nlohmann::json(nullptr)}};
}

void from_json(const nlohmann::json& j, SearchSpace& s) {
  try {
    for (const auto& [key, _] : j.items())
      if (key != "input_dim" && key != "hidden_dim" && key != "num_classes" && key != "blocks" && key != "block_skip" &&
          key != "flops_budget" && key != "cost_table")
        throw ConfigError("space descriptor: unknown key '" + key + "'");
    s = SearchSpace{};
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
    for (const auto& block : j.at("blocks")) {
      std::vector<ChoiceSpec> choices;
      for (const auto& c : block) {
        ChoiceSpec cs;
        cs.name = c.at("name").get<std::string>();
        for (const auto& l : c.at("layers"))
          cs.layers.push_back({nn::layer_kind_from_string(l.at("kind").get<std::string>()),
                               l.at("in_dim").get<std::size_t>(), l.at("out_dim").get<std::size_t>(),
                               nn::activation_from_string(l.at("activation").get<std::string>())});
        choices.push_back(std::move(cs));
      }
      s.blocks.push_back(std::move(choices));
    }
    s.block_skip = j.value("block_skip", true);
    if (j.contains("flops_budget") && !j["flops_budget"].is_null())
      s.flops_budget = j["flops_budget"].get<std::uint64_t>();
    if (j.contains("cost_table") && !j["cost_table"].is_null())
      s.cost_table = j["cost_table"].get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("space descriptor: ") + e.what());
  }
  s.validate();
}

}  // namespace shiftnas
