#include "shiftnas/transfer.hpp"

#include "csv_io.hpp"
#include "shiftnas/error.hpp"

namespace shiftnas {

std::string_view to_string(TransferMode m) {
  return m == TransferMode::finetune_all ? "finetune_all" : "freeze_features";
}

TransferMode transfer_mode_from_string(std::string_view s) {
  if (s == "finetune_all") return TransferMode::finetune_all;
  if (s == "freeze_features") return TransferMode::freeze_features;
  throw InvalidArgument("unknown transfer mode '" + std::string(s) + "'");
}

void TransferConfig::validate() const {
  ea.validate();
  if (finetune_batch == 0) throw InvalidArgument("finetune_batch must be positive");
}

void require_transferable(const SearchSpace& pretrained, const SearchSpace& target) {
  if (pretrained.hidden_dim != target.hidden_dim || pretrained.block_skip != target.block_skip ||
      pretrained.blocks != target.blocks)
    throw CheckpointError("space_mismatch", "checkpoint space is not compatible with the configured space");
}

Supernet prepare_transfer(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg) {
  ds.validate_for_training();
  return reset_head(pretrained, ds.num_classes, ds.features.cols(), tcfg.head_seed);
}

ShiftPolicy transfer_policy(const Supernet& prepared, const TransferConfig& tcfg) {
  ShiftPolicy p;
  p.kind = tcfg.immediate_updates ? ShiftPolicy::Kind::immediate : ShiftPolicy::Kind::none;
  p.steps_per_candidate = tcfg.finetune_steps;
  p.batch_size = tcfg.finetune_batch;
  if (tcfg.mode == TransferMode::freeze_features) {
    p.mask.blocks = false;
    p.mask.stem = prepared.stem_reinitialized;
  }
  return p;
}

SearchResult transfer_search(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg,
                             const std::vector<ArchGenome>& probes, const SearchHooks& hooks) {
  tcfg.validate();
  Supernet net = prepare_transfer(pretrained, ds, tcfg);
  const ShiftPolicy policy = transfer_policy(net, tcfg);
  return search(net, ds, tcfg.ea, policy, probes, hooks);
}

std::vector<ArchGenome> probe_set(const SearchSpace& space, std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "probe-set"));
  std::vector<ArchGenome> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_uniform(space, rng));
  return out;
}

double mean_probe_accuracy(const Supernet& net, const std::vector<ArchGenome>& probes, const Dataset& ds,
                           std::span<const std::size_t> rows) {
  if (probes.empty()) throw InvalidArgument("probe set is empty");
  double s = 0.0;
  for (const auto& g : probes) s += evaluate_rows(net, g, ds, rows).accuracy;
  return s / static_cast<double>(probes.size());
}

TransferRun transfer_with_gap(const Supernet& pretrained, const Dataset& ds, const TransferConfig& tcfg,
                              const Supernet& reference, const std::vector<ArchGenome>& probes) {
  if (probes.empty()) throw InvalidArgument("probe set is empty");
  const auto rows = eval_rows(ds, EvalConfig{tcfg.ea.eval.eval_batches, tcfg.ea.eval.batch_size, tcfg.ea.seed});
  const double ref = mean_probe_accuracy(reference, probes, ds, rows);
  TransferRun run;
  SearchHooks hooks;
  hooks.on_iteration = [&](std::size_t it, const Supernet& net) {
    const double acc = mean_probe_accuracy(net, probes, ds, rows);
    run.gaps.push_back({it, acc, ref, ref - acc});
  };
  run.result = transfer_search(pretrained, ds, tcfg, {}, hooks);
  return run;
}

std::vector<GapRow> transfer_convergence_probe(const Supernet& pretrained, const Dataset& ds,
                                               const TransferConfig& tcfg, const Supernet& reference,
                                               const std::vector<ArchGenome>& probes) {
  return transfer_with_gap(pretrained, ds, tcfg, reference, probes).gaps;
}

void write_gap_csv(const std::vector<GapRow>& rows, const std::filesystem::path& path,
                   const std::string& header_comment) {
  auto os = detail::open_csv(path, header_comment);
  os << "iteration,transfer_acc,reference_acc,gap\n";
  for (const auto& r : rows)
    os << r.iteration << ',' << detail::fmt_real(r.transfer_acc) << ',' << detail::fmt_real(r.reference_acc) << ','
       << detail::fmt_real(r.gap) << '\n';
  detail::finish_csv(os, path);
}

nlohmann::json to_json(const TransferConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"ea", to_json(c.ea)},
          {"immediate_updates", c.immediate_updates},
          {"finetune_steps", c.finetune_steps},
          {"finetune_batch", c.finetune_batch}};
}

TransferConfig transfer_config_from_json(const nlohmann::json& j) {
  TransferConfig c;
  if (!j.is_object()) throw ConfigError("transfer: expected an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "mode") c.mode = transfer_mode_from_string(v.get<std::string>());
      else if (key == "ea") c.ea = ea_config_from_json(v);
      else if (key == "immediate_updates") c.immediate_updates = v.get<bool>();
      else if (key == "finetune_steps") c.finetune_steps = v.get<std::size_t>();
      else if (key == "finetune_batch") c.finetune_batch = v.get<std::size_t>();
      else throw ConfigError("transfer: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("transfer: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("transfer: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace shiftnas
