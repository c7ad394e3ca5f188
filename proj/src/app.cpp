#include "shiftnas/app.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "csv_io.hpp"
#include "shiftnas/error.hpp"

namespace shiftnas {

namespace fs = std::filesystem;
using nlohmann::json;

DatasetSource DatasetSource::from_argument(const std::string& arg) {
  std::error_code ec;
  if (fs::is_regular_file(arg, ec)) return {{}, arg};
  return {arg, {}};
}

std::uint64_t RunConfig::seed(std::string_view purpose) const { return derive_seed(master_seed, purpose); }

void RunConfig::apply_seeds() {
  train.seed = seed("train");
  if (retrain) retrain->seed = seed("retrain");
  ea.seed = seed("ea");
  if (transfer) {
    transfer->head_seed = seed("transfer-head");
    transfer->ea.seed = seed("transfer-ea");
  }
}

TrainConfig RunConfig::retrain_config() const {
  TrainConfig c = retrain.value_or(train);
  c.seed = seed("retrain");
  return c;
}

SearchSpace RunConfig::resolve_space(std::size_t input_dim, std::size_t num_classes) const {
  if (space_inline) {
    if (space_inline->input_dim != input_dim || space_inline->num_classes != num_classes)
      throw ConfigError("space: descriptor expects input_dim " + std::to_string(space_inline->input_dim) +
                        " and " + std::to_string(space_inline->num_classes) + " classes, dataset has " +
                        std::to_string(input_dim) + " and " + std::to_string(num_classes));
    return *space_inline;
  }
  return default_space(space_preset, {input_dim, hidden_dim, num_classes});
}

std::string RunConfig::hash() const {
  json j = to_json(*this);
  j.erase("master_seed");
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"sampler", to_string(c.sampler)},
          {"linear_decay", c.linear_decay}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("train: expected an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "steps") c.steps = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "sampler") c.sampler = sampler_from_string(v.get<std::string>());
      else if (key == "linear_decay") c.linear_decay = v.get<bool>();
      else throw ConfigError("train: unknown key '" + key + "'");
    }
    c.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  if (c.space_inline) {
    j["space"] = *c.space_inline;
  } else {
    j["space"] = c.space_preset;
    j["hidden_dim"] = c.hidden_dim;
  }
  j["dataset"] = c.dataset.csv.empty() ? json{{"synthetic", c.dataset.synthetic}} : json{{"csv", c.dataset.csv.string()}};
  j["train"] = train_config_to_json(c.train);
  if (c.retrain) j["retrain"] = train_config_to_json(*c.retrain);
  j["ea"] = to_json(c.ea);
  if (c.transfer) j["transfer"] = to_json(*c.transfer);
  j["snapshot_iterations"] = c.snapshot_iterations;
  j["probes"] = c.probes;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir.string();
  return j;
}

namespace {

DatasetSource dataset_from_json(const json& v) {
  if (v.is_string()) return {v.get<std::string>(), {}};
  if (!v.is_object() || v.size() != 1) throw ConfigError("dataset: expected a preset name or {\"synthetic\"|\"csv\": ...}");
  if (v.contains("synthetic")) return {v.at("synthetic").get<std::string>(), {}};
  if (v.contains("csv")) return {{}, v.at("csv").get<std::string>()};
  throw ConfigError("dataset: unknown key '" + v.begin().key() + "'");
}

std::uint64_t parse_seed(const std::string& s) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size() || s.front() == '-') throw ConfigError("SHIFTNAS_SEED is not an unsigned integer: '" + s + "'");
  return v;
}

}  // namespace

RunConfig run_config_from_json(const json& j, bool allow_env_seed) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "space") {
        if (v.is_string()) c.space_preset = v.get<std::string>();
        else c.space_inline = v.get<SearchSpace>();
      } else if (key == "hidden_dim") c.hidden_dim = v.get<std::size_t>();
      else if (key == "dataset") c.dataset = dataset_from_json(v);
      else if (key == "train") c.train = train_config_from_json(v);
      else if (key == "retrain") c.retrain = train_config_from_json(v);
      else if (key == "ea") c.ea = ea_config_from_json(v);
      else if (key == "transfer") c.transfer = transfer_config_from_json(v);
      else if (key == "snapshot_iterations") c.snapshot_iterations = v.get<std::vector<std::size_t>>();
      else if (key == "probes") c.probes = v.get<std::size_t>();
      else if (key == "master_seed") c.master_seed = v.get<std::uint64_t>();
      else if (key == "output_dir") c.output_dir = v.get<std::string>();
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (c.space_inline) {
    if (j.contains("hidden_dim")) throw ConfigError("config: hidden_dim only applies to preset spaces");
    c.space_inline->validate();
  } else if (c.space_preset != "tiny" && c.space_preset != "standard") {
    throw ConfigError("config: unknown space preset '" + c.space_preset + "'");
  }
  if (c.hidden_dim < 4) throw ConfigError("config: hidden_dim must be at least 4");
  if (allow_env_seed) {
    if (const char* env = std::getenv("SHIFTNAS_SEED"); env && *env) {
      c.master_seed = parse_seed(env);
      c.seed_from_env = true;
      std::cerr << json{{"event", "seed_override"}, {"source", "SHIFTNAS_SEED"}, {"master_seed", c.master_seed}}.dump()
                << '\n';
    }
  }
  c.apply_seeds();
  return c;
}

RunConfig load_run_config(const fs::path& path, bool allow_env_seed) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  RunConfig c = run_config_from_json(j, allow_env_seed);
  const fs::path base = path.parent_path();
  if (!c.dataset.csv.empty() && c.dataset.csv.is_relative()) c.dataset.csv = base / c.dataset.csv;
  return c;
}

Dataset load_dataset(const DatasetSource& src, std::uint64_t seed) {
  if (!src.csv.empty()) return load_csv(src.csv, derive_seed(seed, "split"));
  return generate_synthetic(src.synthetic, seed);
}

RunDir::RunDir(const RunConfig& cfg, const fs::path& root)
    : root_(root), hash_(cfg.hash()), master_seed_(cfg.master_seed) {
  for (const auto& d : {root_, checkpoints(), logs(), results()}) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw IoError("cannot create '" + d.string() + "': " + ec.message());
  }
  json echo = to_json(cfg);
  echo.erase("output_dir");
  write_json(root_ / "config.json", echo);
}

std::string RunDir::stamp() const { return "config_hash=" + hash_ + " master_seed=" + std::to_string(master_seed_); }

void RunDir::write_json(const fs::path& path, json j) const {
  j["config_hash"] = hash_;
  j["master_seed"] = master_seed_;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os << j.dump(2) << '\n';
  os.flush();
  if (!os) throw IoError("write to '" + path.string() + "' failed");
}

void RunDir::tag(Supernet& net) const {
  net.provenance["config_hash"] = hash_;
  net.provenance["master_seed"] = std::to_string(master_seed_);
}

std::vector<GenomeEntry> read_genome_file(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open genome file '" + path.string() + "'");
  std::vector<GenomeEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (lineno == 1 && line.rfind("genome", 0) == 0) continue;
    GenomeEntry e;
    const auto comma = line.find(',');
    try {
      e.genome = ArchGenome::parse(line.substr(0, comma));
      if (comma != std::string::npos) {
        std::size_t pos = 0;
        const std::string acc = line.substr(comma + 1);
        e.accuracy = std::stod(acc, &pos);
        if (pos != acc.size()) throw InvalidArgument("trailing characters");
      }
    } catch (const std::exception& ex) {
      throw ParseError(lineno, path.string() + ": " + ex.what());
    }
    out.push_back(std::move(e));
  }
  if (out.empty()) throw ParseError(lineno, path.string() + ": no genomes");
  return out;
}

fs::path cmd_train(const RunConfig& cfg) {
  RunDir dir(cfg);
  const Dataset ds = load_dataset(cfg.dataset, cfg.seed("dataset"));
  const SearchSpace space = cfg.resolve_space(ds.dim(), ds.num_classes);
  Supernet net = init_supernet(space, cfg.seed("supernet-init"));
  const TrainLog log = train_supernet(net, ds, cfg.train);
  dir.tag(net);
  const fs::path ckpt = dir.checkpoints() / "supernet.ckpt";
  save_checkpoint(net, ckpt);
  log.write_csv(dir.logs() / "train_log.csv", dir.stamp());
  double tail = 0.0;
  const std::size_t n = std::min<std::size_t>(100, log.entries.size());
  for (std::size_t i = log.entries.size() - n; i < log.entries.size(); ++i) tail += log.entries[i].loss;
  dir.write_json(dir.results() / "train_summary.json", {{"train_steps", net.train_steps},
                                                        {"checksum", net.checksum()},
                                                        {"mean_loss_last_100", n ? tail / n : 0.0},
                                                        {"dataset", ds.name},
                                                        {"space", space}});
  return ckpt;
}

fs::path cmd_search(const RunConfig& cfg_in, const fs::path& checkpoint, bool no_shifting) {
  RunConfig cfg = cfg_in;
  if (no_shifting) cfg.ea.shifting = false;
  RunDir dir(cfg_in);
  const Dataset ds = load_dataset(cfg.dataset, cfg.seed("dataset"));
  const SearchSpace space = cfg.resolve_space(ds.dim(), ds.num_classes);
  const Supernet net = load_checkpoint(checkpoint, space);
  const std::string prefix = cfg.ea.shifting ? "search" : "search_noshift";
  const std::set<std::size_t> snaps(cfg.snapshot_iterations.begin(), cfg.snapshot_iterations.end());
  SearchHooks hooks;
  if (!snaps.empty())
    hooks.on_iteration = [&](std::size_t it, const Supernet& current) {
      if (!snaps.count(it)) return;
      Supernet copy = current;
      dir.tag(copy);
      copy.provenance["search_iteration"] = std::to_string(it);
      char name[64];
      std::snprintf(name, sizeof name, "%s_iter_%03zu.ckpt", prefix.c_str(), it);
      save_checkpoint(copy, dir.checkpoints() / name);
    };
  const auto probes = probe_set(constrained_space(space, cfg.ea), cfg.probes, cfg.seed("probes"));
  SearchResult r = search(net, ds, cfg.ea, probes, hooks);
  write_history_csv(r.state.history, dir.logs() / (prefix + "_history.csv"), dir.stamp());
  write_trajectory_csv(r.trajectory, dir.logs() / (prefix + "_trajectory.csv"), dir.stamp());
  json j = result_json(r, cfg.ea);
  j["shifting"] = cfg.ea.shifting;
  j["input_checksum"] = net.checksum();
  j["output_checksum"] = r.state.net.checksum();
  const fs::path out = dir.results() / (prefix + "_result.json");
  dir.write_json(out, j);
  if (cfg.ea.shifting) {
    Supernet shifted = r.state.net;
    dir.tag(shifted);
    shifted.provenance["search_iteration"] = std::to_string(cfg.ea.iterations);
    save_checkpoint(shifted, dir.checkpoints() / "shifted.ckpt");
  }
  return out;
}

fs::path cmd_retrain(const RunConfig& cfg, const std::vector<ArchGenome>& genomes, std::size_t jobs) {
  if (genomes.empty()) throw InvalidArgument("retrain: no genomes given");
  RunDir dir(cfg);
  const Dataset ds = load_dataset(cfg.dataset, cfg.seed("dataset"));
  const SearchSpace space = cfg.resolve_space(ds.dim(), ds.num_classes);
  for (const auto& g : genomes) space.require_valid(g);
  const TrainConfig rc = cfg.retrain_config();
  json results = json::array();
  for (const auto& r : retrain_many(space, genomes, ds, rc, jobs))
    results.push_back({{"genome", r.genome.str()}, {"accuracy", r.accuracy}, {"loss", r.loss}, {"at_step", r.at_step}});
  const fs::path out = dir.results() / "retrain.json";
  dir.write_json(out, {{"results", results}, {"retrain", train_config_to_json(rc)}});
  return out;
}

fs::path cmd_order_audit(const RunConfig& cfg, const std::vector<fs::path>& checkpoints, const fs::path& good_file,
                         const fs::path& poor_file, std::size_t jobs) {
  if (checkpoints.empty()) throw InvalidArgument("order-audit: no checkpoints given");
  RunDir dir(cfg);
  const Dataset ds = load_dataset(cfg.dataset, cfg.seed("dataset"));
  const SearchSpace space = cfg.resolve_space(ds.dim(), ds.num_classes);
  std::vector<std::pair<std::size_t, Supernet>> nets;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    Supernet net = load_checkpoint(checkpoints[i], space);
    std::size_t it = i;
    if (auto p = net.provenance.find("search_iteration"); p != net.provenance.end()) it = std::stoull(p->second);
    nets.emplace_back(it, std::move(net));
  }
  auto truth = [&](const fs::path& file) {
    const auto entries = read_genome_file(file);
    std::vector<ArchGenome> missing;
    for (const auto& e : entries) {
      space.require_valid(e.genome);
      if (!e.accuracy) missing.push_back(e.genome);
    }
    const auto retrained = retrain_truth(space, missing, ds, cfg.retrain_config(), jobs);
    std::vector<ArchTruth> out;
    std::size_t k = 0;
    for (const auto& e : entries) out.push_back(e.accuracy ? ArchTruth{e.genome, *e.accuracy} : retrained[k++]);
    return out;
  };
  const auto good = truth(good_file);
  const auto poor = truth(poor_file);
  const auto reports = order_experiment(nets, good, poor, ds);
  write_order_csv(reports, dir.results() / "order_report.csv", dir.stamp());
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  json truth_json = json::object();
  for (const auto* set : {&good, &poor})
    for (const auto& t : *set) truth_json[t.genome.str()] = t.accuracy;
  const fs::path out = dir.results() / "order_report.json";
  dir.write_json(out, {{"reports", arr}, {"truth", truth_json}});
  return out;
}

fs::path cmd_transfer(const RunConfig& cfg, const fs::path& checkpoint, const DatasetSource& target,
                      const std::optional<fs::path>& reference_path) {
  RunDir dir(cfg);
  const Supernet pretrained = load_checkpoint(checkpoint);
  require_transferable(pretrained.space, cfg.resolve_space(pretrained.space.input_dim, pretrained.space.num_classes));
  TransferConfig tcfg;
  if (cfg.transfer) {
    tcfg = *cfg.transfer;
  } else {
    tcfg.ea = cfg.ea;
    tcfg.head_seed = cfg.seed("transfer-head");
    tcfg.ea.seed = cfg.seed("transfer-ea");
  }
  const Dataset ds = load_dataset(target, cfg.seed("transfer-dataset"));
  SearchSpace target_space = pretrained.space;
  target_space.input_dim = ds.dim();
  target_space.num_classes = ds.num_classes;
  Supernet reference;
  if (reference_path) {
    reference = load_checkpoint(*reference_path, target_space);
  } else {
    reference = init_supernet(target_space, cfg.seed("reference-init"));
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed("reference-train");
    train_supernet(reference, ds, tc);
    dir.tag(reference);
    save_checkpoint(reference, dir.checkpoints() / "reference.ckpt");
  }
  const auto probes = probe_set(constrained_space(target_space, tcfg.ea), cfg.probes, cfg.seed("transfer-probes"));
  TransferRun run = transfer_with_gap(pretrained, ds, tcfg, reference, probes);
  write_history_csv(run.result.state.history, dir.logs() / "transfer_history.csv", dir.stamp());
  write_gap_csv(run.gaps, dir.results() / "transfer_gap.csv", dir.stamp());
  Supernet tuned = run.result.state.net;
  dir.tag(tuned);
  save_checkpoint(tuned, dir.checkpoints() / "transferred.ckpt");
  json j = result_json(run.result, tcfg.ea);
  j["transfer"] = to_json(tcfg);
  j["dataset"] = ds.name;
  j["stem_reinitialized"] = tuned.stem_reinitialized;
  const fs::path out = dir.results() / "transfer_result.json";
  dir.write_json(out, j);
  return out;
}

namespace {

struct Stamp {
  std::string hash;
  std::string seed;
};

std::optional<Stamp> csv_stamp(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) return std::nullopt;
  std::istringstream ss(line.substr(2));
  Stamp s;
  std::string tok;
  while (ss >> tok) {
    if (tok.rfind("config_hash=", 0) == 0) s.hash = tok.substr(12);
    else if (tok.rfind("master_seed=", 0) == 0) s.seed = tok.substr(12);
  }
  if (s.hash.empty() || s.seed.empty()) return std::nullopt;
  return s;
}

std::optional<Stamp> json_stamp(const json& j) {
  if (!j.contains("config_hash") || !j.contains("master_seed")) return std::nullopt;
  return Stamp{j.at("config_hash").get<std::string>(), std::to_string(j.at("master_seed").get<std::uint64_t>())};
}

json read_json_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot open '" + p.string() + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + p.string() + "': " + e.what());
  }
}

}  // namespace

json cmd_report(const fs::path& run_dir) {
  const fs::path cfg_path = run_dir / "config.json";
  if (!fs::exists(cfg_path)) throw IoError("no config.json in '" + run_dir.string() + "'");
  const json cfg = read_json_file(cfg_path);
  const auto expected = json_stamp(cfg);
  if (!expected) throw ConfigError("config.json lacks config_hash/master_seed");

  std::vector<fs::path> files;
  for (const char* sub : {"checkpoints", "logs", "results"}) {
    const fs::path d = run_dir / sub;
    if (!fs::is_directory(d)) continue;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file() && e.path().filename() != "report.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());

  json artifacts = json::array();
  json summary = json::object();
  std::vector<std::string> problems;
  for (const auto& p : files) {
    const std::string rel = fs::relative(p, run_dir).generic_string();
    const std::string ext = p.extension().string();
    std::optional<Stamp> st;
    json entry{{"path", rel}};
    try {
      if (ext == ".csv") {
        st = csv_stamp(p);
      } else if (ext == ".json") {
        const json j = read_json_file(p);
        st = json_stamp(j);
        if (j.contains("best")) summary[p.stem().string()] = j.at("best");
        if (j.contains("results") && p.stem() == "retrain") summary["retrain"] = j.at("results");
        if (j.contains("reports")) summary["order_report"] = j.at("reports");
      } else if (ext == ".ckpt") {
        const Supernet net = load_checkpoint(p);
        auto h = net.provenance.find("config_hash");
        auto s = net.provenance.find("master_seed");
        if (h != net.provenance.end() && s != net.provenance.end()) st = Stamp{h->second, s->second};
        entry["train_steps"] = net.train_steps;
        entry["checksum"] = net.checksum();
      } else {
        continue;
      }
    } catch (const Error& e) {
      problems.push_back(rel + ": " + e.what());
      entry["error"] = e.what();
      artifacts.push_back(entry);
      continue;
    }
    const bool ok = st && st->hash == expected->hash && st->seed == expected->seed;
    entry["consistent"] = ok;
    if (st) {
      entry["config_hash"] = st->hash;
      entry["master_seed"] = st->seed;
    }
    if (!ok) problems.push_back(rel + ": config hash / master seed do not match config.json");
    artifacts.push_back(entry);
  }
  json report{{"config_hash", expected->hash},
              {"master_seed", std::stoull(expected->seed)},
              {"artifacts", artifacts},
              {"summary", summary},
              {"consistent", problems.empty()},
              {"problems", problems}};
  std::ofstream os(run_dir / "results" / "report.json", std::ios::trunc);
  if (os) os << report.dump(2) << '\n';
  if (!problems.empty()) throw ConfigError("run directory is inconsistent: " + problems.front());
  return report;
}

}  // namespace shiftnas
