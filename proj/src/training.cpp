#include "shiftnas/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <thread>

#include "shiftnas/error.hpp"

namespace shiftnas {

std::string_view to_string(Sampler s) { return s == Sampler::uniform ? "uniform" : "strict_fair"; }

Sampler sampler_from_string(std::string_view s) {
  if (s == "uniform") return Sampler::uniform;
  if (s == "strict_fair") return Sampler::strict_fair;
  throw InvalidArgument("unknown sampler '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (steps < 1) throw InvalidArgument("train: steps must be at least 1");
  if (batch_size < 1) throw InvalidArgument("train: batch_size must be at least 1");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be positive");
}

void TrainLog::write_csv(const std::filesystem::path& path, const std::string& header_comment) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  if (!header_comment.empty()) os << "# " << header_comment << '\n';
  os << "step,genome,loss\n";
  char buf[32];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.loss);
    os << e.step << ',' << e.genome.str() << ',' << buf << '\n';
  }
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<std::vector<std::size_t>> choice_update_counts(const TrainLog& log, const SearchSpace& space) {
  std::vector<std::vector<std::size_t>> counts(space.num_blocks());
  for (std::size_t b = 0; b < space.num_blocks(); ++b) counts[b].assign(space.num_choices(b), 0);
  for (const auto& e : log.entries)
    for (std::size_t b = 0; b < e.genome.size(); ++b) ++counts[b][e.genome[b]];
  return counts;
}

namespace {

template <class NextGenome>
TrainLog train_loop(Supernet& net, const Dataset& ds, const TrainConfig& cfg, NextGenome&& next_genome) {
  cfg.validate();
  if (ds.train.empty()) throw InvalidArgument("train: dataset '" + ds.name + "' has an empty train split");
  if (ds.dim() != net.space.input_dim)
    throw ShapeError("train: dataset width " + std::to_string(ds.dim()) + " != supernet input_dim " +
                     std::to_string(net.space.input_dim));
  BatchStream batches(ds, Split::train, cfg.batch_size, derive_seed(cfg.seed, "train-batches"));
  TrainLog log;
  log.entries.reserve(cfg.steps);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    ArchGenome g = next_genome();
    Batch batch = batches.next();
    auto lg = path_loss_and_grads(net, g, batch.inputs, batch.labels);
    GradAggregate agg;
    agg.add(lg.grads);
    double lr = cfg.lr;
    if (cfg.linear_decay) lr *= 1.0 - static_cast<double>(step) / static_cast<double>(cfg.steps);
    apply_update(net, agg, lr, 1);
    log.entries.push_back({step, std::move(g), lg.loss});
  }
  return log;
}

}  // namespace

TrainLog train_uniform(Supernet& net, const Dataset& ds, const TrainConfig& cfg) {
  Rng arch_rng(derive_seed(cfg.seed, "train-arch"));
  return train_loop(net, ds, cfg, [&] { return sample_uniform(net.space, arch_rng); });
}

TrainLog train_strict_fair(Supernet& net, const Dataset& ds, const TrainConfig& cfg) {
  const std::size_t nb = net.space.num_blocks();
  const std::size_t c = net.space.num_choices(0);
  for (std::size_t b = 1; b < nb; ++b)
    if (net.space.num_choices(b) != c)
      throw InvalidArgument("strict_fair sampling needs the same choice count in every block");
  Rng arch_rng(derive_seed(cfg.seed, "train-arch"));
  std::vector<std::vector<std::size_t>> perms(nb, std::vector<std::size_t>(c));
  std::size_t pos = c;
  return train_loop(net, ds, cfg, [&] {
    if (pos == c) {
      for (auto& p : perms) {
        for (std::size_t i = 0; i < c; ++i) p[i] = i;
        shuffle(p, arch_rng);
      }
      pos = 0;
    }
    ArchGenome g{std::vector<std::size_t>(nb)};
    for (std::size_t b = 0; b < nb; ++b) g.choices[b] = perms[b][pos];
    ++pos;
    return g;
  });
}

TrainLog train_supernet(Supernet& net, const Dataset& ds, const TrainConfig& cfg) {
  return cfg.sampler == Sampler::uniform ? train_uniform(net, ds, cfg) : train_strict_fair(net, ds, cfg);
}

std::vector<std::size_t> eval_rows(const Dataset& ds, const EvalConfig& cfg) {
  if (ds.val.empty()) throw InvalidArgument("evaluate: dataset '" + ds.name + "' has an empty validation split");
  std::vector<std::size_t> rows = ds.val;
  if (cfg.eval_batches == 0) return rows;
  Rng rng(derive_seed(cfg.seed, "eval-subset"));
  shuffle(rows, rng);
  rows.resize(std::min(rows.size(), cfg.eval_batches * cfg.batch_size));
  return rows;
}

EvalResult evaluate_rows(const Supernet& net, const ArchGenome& g, const Dataset& ds,
                         std::span<const std::size_t> rows) {
  if (rows.empty()) throw InvalidArgument("evaluate: no validation rows");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const auto chunk = rows.subspan(start, std::min(kChunk, rows.size() - start));
    Batch b = make_batch(ds, chunk);
    auto fwd = forward_path(net, g, b.inputs);
    loss_sum += nn::softmax_cross_entropy(fwd.logits, b.labels).loss * static_cast<double>(chunk.size());
    const auto pred = nn::argmax_rows(fwd.logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  }
  const double n = static_cast<double>(rows.size());
  return {g, static_cast<double>(correct) / n, loss_sum / n, net.train_steps};
}

EvalResult evaluate_arch(const Supernet& net, const ArchGenome& g, const Dataset& ds, const EvalConfig& cfg) {
  const auto rows = eval_rows(ds, cfg);
  return evaluate_rows(net, g, ds, rows);
}

EvalResult retrain_from_scratch(const SearchSpace& space, const ArchGenome& g, const Dataset& ds,
                                const TrainConfig& cfg) {
  space.require_valid(g);
  Supernet net = init_supernet(space, derive_seed(cfg.seed, "retrain-init"));
  train_loop(net, ds, cfg, [&] { return g; });
  return evaluate_arch(net, g, ds, EvalConfig{0, 64, cfg.seed});
}

std::vector<EvalResult> retrain_many(const SearchSpace& space, const std::vector<ArchGenome>& genomes,
                                     const Dataset& ds, const TrainConfig& cfg, std::size_t jobs) {
  std::vector<EvalResult> out(genomes.size());
  auto work = [&](std::size_t i) { out[i] = retrain_from_scratch(space, genomes[i], ds, cfg); };
  jobs = std::max<std::size_t>(1, std::min(jobs, genomes.size()));
  if (jobs == 1) {
    for (std::size_t i = 0; i < genomes.size(); ++i) work(i);
    return out;
  }
  // Each retrain owns its network; results land in fixed slots, so the
  // output is independent of scheduling.
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < genomes.size(); i += jobs) work(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace shiftnas
