#include "shiftnas/supernet.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "shiftnas/error.hpp"

namespace shiftnas {

using nn::DenseParams;
using nn::LayerSpec;
using nn::Matrix;

std::size_t Supernet::parameter_count() const {
  std::size_t n = 0;
  for_each_param([&](const DenseParams& p) { n += p.size(); });
  return n;
}

void Supernet::for_each_param(const std::function<void(const DenseParams&)>& fn) const {
  fn(stem);
  for (const auto& block : blocks)
    for (const auto& choice : block)
      for (const auto& layer : choice) fn(layer);
  fn(head);
}

void Supernet::for_each_param(const std::function<void(DenseParams&)>& fn) {
  fn(stem);
  for (auto& block : blocks)
    for (auto& choice : block)
      for (auto& layer : choice) fn(layer);
  fn(head);
}

namespace {

std::uint64_t hash_params(const DenseParams& p, std::uint64_t h) {
  h = fnv1a64(p.weight.data().data(), p.weight.size() * sizeof(double), h);
  return fnv1a64(p.bias.data(), p.bias.size() * sizeof(double), h);
}

}  // namespace

std::uint64_t Supernet::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param([&](const DenseParams& p) { h = hash_params(p, h); });
  return h;
}

std::uint64_t Supernet::block_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& block : blocks)
    for (const auto& choice : block)
      for (const auto& layer : choice) h = hash_params(layer, h);
  return h;
}

DenseParams init_dense(const LayerSpec& spec, Rng& rng) {
  DenseParams p = DenseParams::zeros_like(spec);
  if (spec.kind == nn::LayerKind::identity) return p;
  const double scale = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
  for (auto& w : p.weight.data()) w = rng.uniform(-scale, scale);
  return p;
}

Supernet init_supernet(const SearchSpace& space, std::uint64_t seed) {
  space.validate();
  Rng rng(seed);
  Supernet net;
  net.space = space;
  net.stem = init_dense(space.stem_spec(), rng);
  net.blocks.resize(space.num_blocks());
  for (std::size_t b = 0; b < space.num_blocks(); ++b) {
    for (const auto& choice : space.blocks[b]) {
      std::vector<DenseParams> layers;
      for (const auto& l : choice.layers) layers.push_back(init_dense(l, rng));
      net.blocks[b].push_back(std::move(layers));
    }
  }
  net.head = init_dense(space.head_spec(), rng);
  return net;
}

const ChoiceGrad* PathGrads::find(std::size_t block, std::size_t choice) const {
  for (const auto& c : choices)
    if (c.block == block && c.choice == choice) return &c;
  return nullptr;
}

PathForward forward_path(const Supernet& net, const ArchGenome& g, const Matrix& x) {
  net.space.require_valid(g);
  PathForward out;
  out.cache.genome = g;
  auto stem = nn::layer_forward(net.space.stem_spec(), net.stem, x);
  out.cache.stem = std::move(stem.cache);
  Matrix h = std::move(stem.output);
  out.cache.blocks.resize(g.size());
  for (std::size_t b = 0; b < g.size(); ++b) {
    const auto& choice = net.space.blocks[b][g[b]];
    const auto& params = net.blocks[b][g[b]];
    const bool skip = net.space.block_skip && !choice.is_identity();
    Matrix block_in = skip ? h : Matrix{};
    for (std::size_t l = 0; l < choice.layers.size(); ++l) {
      auto r = nn::layer_forward(choice.layers[l], params[l], h);
      out.cache.blocks[b].push_back(std::move(r.cache));
      h = std::move(r.output);
    }
    if (skip)
      for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] += block_in.data()[i];
  }
  auto head = nn::layer_forward(net.space.head_spec(), net.head, h);
  out.cache.head = std::move(head.cache);
  out.logits = std::move(head.output);
  return out;
}

PathGrads backward_path(const Supernet& net, const ArchGenome& g, const PathCache& cache, const Matrix& grad_logits) {
  if (cache.genome != g || cache.blocks.size() != g.size())
    throw InvalidArgument("backward_path: cache was produced for genome " + cache.genome.str() + ", not " + g.str());
  PathGrads out;
  out.genome = g;
  auto head = nn::layer_backward(net.space.head_spec(), net.head, cache.head, grad_logits);
  out.head = std::move(head.grad_params);
  Matrix grad = std::move(head.grad_input);
  for (std::size_t b = g.size(); b-- > 0;) {
    const auto& choice = net.space.blocks[b][g[b]];
    const auto& params = net.blocks[b][g[b]];
    if (cache.blocks[b].size() != choice.layers.size())
      throw InvalidArgument("backward_path: cache layer count mismatch at block " + std::to_string(b));
    ChoiceGrad cg{b, g[b], std::vector<DenseParams>(choice.layers.size())};
    const bool skip = net.space.block_skip && !choice.is_identity();
    Matrix grad_skip = skip ? grad : Matrix{};
    for (std::size_t l = choice.layers.size(); l-- > 0;) {
      auto r = nn::layer_backward(choice.layers[l], params[l], cache.blocks[b][l], grad);
      cg.layers[l] = std::move(r.grad_params);
      grad = std::move(r.grad_input);
    }
    if (skip)
      for (std::size_t i = 0; i < grad.size(); ++i) grad.data()[i] += grad_skip.data()[i];
    if (!choice.is_identity()) out.choices.push_back(std::move(cg));
  }
  std::reverse(out.choices.begin(), out.choices.end());
  auto stem = nn::layer_backward(net.space.stem_spec(), net.stem, cache.stem, grad);
  out.stem = std::move(stem.grad_params);
  return out;
}

LossAndGrads path_loss_and_grads(const Supernet& net, const ArchGenome& g, const Matrix& x,
                                 std::span<const std::size_t> labels) {
  auto fwd = forward_path(net, g, x);
  auto loss = nn::softmax_cross_entropy(fwd.logits, labels);
  return {loss.loss, backward_path(net, g, fwd.cache, loss.grad_logits)};
}

void GradAggregate::add(const PathGrads& grads) {
  auto merge = [](std::optional<DenseParams>& dst, const DenseParams& src) {
    if (!dst)
      dst = src;
    else
      nn::accumulate(*dst, src);
  };
  merge(stem_, grads.stem);
  merge(head_, grads.head);
  for (const auto& c : grads.choices) {
    auto [it, inserted] = choices_.try_emplace({c.block, c.choice}, c.layers);
    if (!inserted)
      for (std::size_t l = 0; l < c.layers.size(); ++l) nn::accumulate(it->second.at(l), c.layers[l]);
  }
  ++contributions_;
}

void apply_update(Supernet& net, const GradAggregate& agg, double lr, std::size_t normalizer, const UpdateMask& mask) {
  if (normalizer < 1) throw InvalidArgument("apply_update: normalizer must be at least 1");
  const double step = lr / static_cast<double>(normalizer);
  if (mask.stem && agg.stem()) nn::sgd_step(net.stem, *agg.stem(), step);
  if (mask.head && agg.head()) nn::sgd_step(net.head, *agg.head(), step);
  if (mask.blocks) {
    for (const auto& [key, layers] : agg.choices()) {
      auto& params = net.choice_params(key.first, key.second);
      if (params.size() != layers.size())
        throw ShapeError("apply_update: layer count mismatch at block " + std::to_string(key.first));
      for (std::size_t l = 0; l < layers.size(); ++l)
        if (!params[l].empty()) nn::sgd_step(params[l], layers[l], step);
    }
  }
  ++net.train_steps;
}

Supernet reset_head(const Supernet& net, std::size_t new_num_classes, std::size_t new_input_dim, std::uint64_t seed) {
  if (new_num_classes < 2) throw InvalidArgument("reset_head: need at least 2 classes");
  Supernet out = net;
  out.space.num_classes = new_num_classes;
  Rng rng(seed);
  if (new_input_dim != net.space.input_dim) {
    out.space.input_dim = new_input_dim;
    out.stem = init_dense(out.space.stem_spec(), rng);
    out.stem_reinitialized = true;
  }
  out.head = init_dense(out.space.head_spec(), rng);
  out.space.validate();
  return out;
}

Supernet reset_head(const Supernet& net, std::size_t new_num_classes, std::uint64_t seed) {
  return reset_head(net, new_num_classes, net.space.input_dim, seed);
}

namespace {

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const Supernet& net, const std::filesystem::path& path) {
  std::string payload;
  payload.reserve(net.parameter_count() * 8);
  net.for_each_param([&](const DenseParams& p) {
    for (double v : p.weight.data()) put_f64(payload, v);
    for (double v : p.bias) put_f64(payload, v);
  });
  nlohmann::json header = {
      {"format", kCheckpointFormat},
      {"space", net.space},
      {"train_steps", net.train_steps},
      {"stem_reinitialized", net.stem_reinitialized},
      {"param_count", payload.size() / 8},
      {"payload_fnv1a64", hex64(fnv1a64(payload.data(), payload.size()))},
      {"provenance", net.provenance},
  };
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << header.dump() << '\n';
  os.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

Supernet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::string header_line;
  if (!std::getline(is, header_line)) throw CheckpointError("checkpoint_corrupt", "checkpoint has no header");
  std::string payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint_corrupt", std::string("checkpoint header is not JSON: ") + e.what());
  }
  const auto format = header.value("format", std::string{});
  if (format != kCheckpointFormat)
    throw CheckpointError("version_mismatch",
                          "checkpoint format '" + format + "' is not '" + std::string(kCheckpointFormat) + "'");
  if (header.value("payload_fnv1a64", std::string{}) != hex64(fnv1a64(payload.data(), payload.size())))
    throw CheckpointError("checksum_mismatch", "checkpoint payload checksum mismatch in '" + path.string() + "'");

  Supernet net = init_supernet(header.at("space").get<SearchSpace>(), 0);
  net.train_steps = header.at("train_steps").get<std::uint64_t>();
  net.stem_reinitialized = header.at("stem_reinitialized").get<bool>();
  net.provenance = header.at("provenance").get<std::map<std::string, std::string>>();
  if (payload.size() != net.parameter_count() * 8 || header.at("param_count").get<std::size_t>() * 8 != payload.size())
    throw CheckpointError("checkpoint_corrupt", "checkpoint payload length does not match its space descriptor");

  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  net.for_each_param([&](DenseParams& dp) {
    for (double& v : dp.weight.data()) v = get_f64(p), p += 8;
    for (double& v : dp.bias) v = get_f64(p), p += 8;
  });
  return net;
}

Supernet load_checkpoint(const std::filesystem::path& path, const SearchSpace& expected) {
  Supernet net = load_checkpoint(path);
  if (!(net.space == expected))
    throw CheckpointError("space_mismatch", "checkpoint '" + path.string() +
                                                "' was trained on a different search space than the configuration");
  return net;
}

}  // namespace shiftnas
