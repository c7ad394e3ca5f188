#include <CLI11.hpp>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "shiftnas/app.hpp"
#include "shiftnas/error.hpp"

namespace fs = std::filesystem;
using namespace shiftnas;

namespace {

int fail(std::string_view kind, const std::string& message, std::optional<std::size_t> line = std::nullopt) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (line) j["line"] = *line;
  std::cerr << j.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-path supernet training and evolutionary search with supernet shifting"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string config, checkpoint, genomes, checkpoints, good, poor, dataset, reference, run_dir;
  bool no_shifting = false;
  std::size_t jobs = 1;

  auto* train = app.add_subcommand("train", "train a supernet; writes checkpoints/supernet.ckpt");
  train->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);

  auto* search = app.add_subcommand("search", "evolutionary search on a trained supernet");
  search->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  search->add_option("--checkpoint", checkpoint, "supernet checkpoint")->required()->check(CLI::ExistingFile);
  search->add_flag("--no-shifting", no_shifting, "frozen-supernet search (weights never updated)");

  auto* retrain = app.add_subcommand("retrain", "train genomes from scratch and report validation accuracy");
  retrain->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  retrain->add_option("--genome", genomes, "genome such as 1-0-3-2; several may be comma separated")->required();
  retrain->add_option("--jobs", jobs, "concurrent retrains")->check(CLI::PositiveNumber);

  auto* audit = app.add_subcommand("order-audit", "rank-order report of supernet checkpoints against ground truth");
  audit->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  audit->add_option("--checkpoints", checkpoints, "comma separated checkpoint paths")->required();
  audit->add_option("--good", good, "genome[,accuracy] per line")->required()->check(CLI::ExistingFile);
  audit->add_option("--poor", poor, "genome[,accuracy] per line")->required()->check(CLI::ExistingFile);
  audit->add_option("--jobs", jobs, "concurrent retrains for genomes without accuracy")->check(CLI::PositiveNumber);

  auto* transfer = app.add_subcommand("transfer", "reuse a pretrained supernet on a new dataset");
  transfer->add_option("--config", config, "run config JSON")->required()->check(CLI::ExistingFile);
  transfer->add_option("--checkpoint", checkpoint, "pretrained supernet")->required()->check(CLI::ExistingFile);
  transfer->add_option("--dataset", dataset, "synthetic preset name or CSV file")->required();
  transfer->add_option("--reference", reference, "supernet trained on the new dataset (trained here if omitted)")
      ->check(CLI::ExistingFile);

  auto* report = app.add_subcommand("report", "summarize and cross-check a run directory");
  report->add_option("--run-dir", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    fs::path out;
    if (*report) {
      std::cout << cmd_report(run_dir).dump(2) << '\n';
      return 0;
    }
    const RunConfig cfg = load_run_config(config);
    if (*train) {
      out = cmd_train(cfg);
    } else if (*search) {
      out = cmd_search(cfg, checkpoint, no_shifting);
    } else if (*retrain) {
      std::vector<ArchGenome> gs;
      for (const auto& s : split_list(genomes)) gs.push_back(ArchGenome::parse(s));
      out = cmd_retrain(cfg, gs, jobs);
    } else if (*audit) {
      std::vector<fs::path> paths;
      for (const auto& s : split_list(checkpoints)) paths.emplace_back(s);
      out = cmd_order_audit(cfg, paths, good, poor, jobs);
    } else if (*transfer) {
      std::optional<fs::path> ref;
      if (!reference.empty()) ref = reference;
      out = cmd_transfer(cfg, checkpoint, DatasetSource::from_argument(dataset), ref);
    }
    std::cout << nlohmann::json{{"status", "ok"}, {"artifact", out.string()}}.dump() << '\n';
    return 0;
  } catch (const ParseError& e) {
    return fail(e.kind(), e.what(), e.line());
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
