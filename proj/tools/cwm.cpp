#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "cwm/bytes.hpp"
#include "cwm/commands.hpp"
#include "cwm/error.hpp"

namespace fs = std::filesystem;
using namespace cwm;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> epochs;
  std::optional<int> horizon;
  std::optional<int> jobs;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> model;
  bool dry_run = false;
};

void setup_logging() {
  auto logger = spdlog::stderr_logger_mt("cwm");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  const char* env = std::getenv("CWM_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw Error(ErrorKind::ConfigError, "CWM_LOG must be error, info or debug, not '" + level + "'");
}

cli::RunConfig resolve(const Flags& f, const std::string& command) {
  cli::RunConfig c = f.config.empty() ? cli::RunConfig{} : cli::load_run_config(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    c.train.seed = *f.seed;
    c.puzzle.classifier.seed = *f.seed;
  }
  if (f.mode && command == "train") c.mode = model::mode_from_string(*f.mode);
  if (f.epochs) c.train.epochs = *f.epochs;
  if (f.horizon) c.eval.horizon = *f.horizon;
  if (f.jobs) {
    c.gen_jobs = *f.jobs;
    c.eval.jobs = *f.jobs;
  }
  if (f.data) c.io.data = *f.data;
  if (f.model) c.io.model = *f.model;
  if (f.out) {
    if (command == "gen") c.io.data = *f.out;
    else if (command == "train") c.io.model = *f.out;
    else if (command == "eval") c.io.report = *f.out;
    else if (command == "rank") c.io.curves = *f.out;
    else if (command == "plot") c.io.plot = *f.out;
  }
  c.validate();
  return c;
}

int run(const std::string& command, const Flags& f) {
  setup_logging();
  const cli::RunConfig c = resolve(f, command);
  const std::string gen_mode = command == "gen" && f.mode ? *f.mode : "physics";
  if (command == "gen" && gen_mode != "physics" && gen_mode != "puzzle")
    throw Error(ErrorKind::ConfigError, "gen --mode must be physics or puzzle");
  if (f.dry_run) {
    std::cout << cli::run_config_to_json(c).dump(2) << "\n";
    return 0;
  }
  const fs::path data = c.io.data;
  if (command == "gen") {
    const auto r = gen_mode == "puzzle" ? cli::cmd_gen_puzzle(c, data) : cli::cmd_gen(c, data);
    std::cout << "train " << r.train.episode_count << " episodes, test " << r.test.episode_count << " episodes -> "
              << data.string() << "\n";
  } else if (command == "train") {
    cli::HistorySink sink = [](const std::string& line) { std::cout << line << "\n" << std::flush; };
    std::string lines;
    if (!c.io.history.empty()) sink = [&](const std::string& line) { lines += line + "\n"; };
    cli::cmd_train(c, data / "train", c.io.model, sink);
    if (!c.io.history.empty()) bytes::write_text(c.io.history, lines);
  } else if (command == "eval") {
    std::optional<fs::path> traces;
    if (!c.io.traces.empty()) traces = c.io.traces;
    cli::cmd_eval(c, c.io.model, data / "test", c.io.report, traces);
  } else if (command == "rank") {
    cli::cmd_rank(c, c.io.model, data / "tasks.json", c.io.curves);
  } else if (command == "plot") {
    if (c.io.traces.empty()) throw Error(ErrorKind::ConfigError, "plot needs io.traces");
    cli::cmd_plot(c.io.traces, c.io.plot);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal world-model laboratory: generate, train, evaluate, rank, plot"};
  app.require_subcommand(1);
  Flags f;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen", "generate train/test episode datasets (--mode puzzle: puzzle tasks and their episodes)"},
      {"train", "train a world model on <data>/train"},
      {"eval", "dream-quality report on <data>/test"},
      {"rank", "success curves of the CWM ranker, MEM and RAND on <data>/tasks.json"},
      {"plot", "PCA projection of an eval trace file to CSV and SVG"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", f.config, "run config JSON")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "master seed");
    sub->add_option("--mode", f.mode, "train: wm, cwm or crm-cwm; gen: physics or puzzle");
    sub->add_option("--epochs", f.epochs, "training epochs");
    sub->add_option("--horizon", f.horizon, "evaluation horizon");
    sub->add_option("--jobs", f.jobs, "worker threads");
    sub->add_option("--out", f.out, "primary output path");
    sub->add_option("--data", f.data, "dataset root");
    sub->add_option("--model", f.model, "model file");
    sub->add_flag("--dry-run", f.dry_run, "validate and print the resolved config");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, f);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return cli::exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
