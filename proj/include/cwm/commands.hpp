#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "cwm/ball_world.hpp"
#include "cwm/datastore.hpp"
#include "cwm/json_fields.hpp"
#include "cwm/metrics.hpp"
#include "cwm/puzzle.hpp"
#include "cwm/world_model.hpp"

namespace cwm::cli {

struct EvalSection {
  int horizon = 10;
  int references = 10;
  int jobs = 1;
};

struct PuzzleSection {
  puzzle::PuzzleConfig tasks;
  int episodes_per_task = 3;
  int budget = 50;
  puzzle::ClassifierConfig classifier{256, 128, 30, 128, 3e-4, 0};
};

struct IoSection {
  std::string data = "data";          // gen output; train reads data/train, eval data/test
  std::string model = "model.cwmm";
  std::string history;                // JSON lines; empty writes to stdout
  std::string report = "report.json";
  std::string traces;                 // optional eval latent traces
  std::string curves = "curves";      // rank writes curves.json and curves.csv
  std::string plot = "plot";          // plot writes plot.csv and plot.svg
};

/// Everything a command needs. `seed` drives every random stream.
struct RunConfig {
  std::uint64_t seed = 0;
  world::EnvConfig env;
  int train_episodes = 700;
  int test_episodes = 300;
  int gen_jobs = 1;
  model::Mode mode = model::Mode::CWM;
  model::TrainConfig train;
  Json model_overrides = Json::object();  // merged over the desk architecture
  EvalSection eval;
  PuzzleSection puzzle;
  IoSection io;

  void validate() const;
};

Json run_config_to_json(const RunConfig& cfg);
/// Strict: unknown keys, wrong types and invalid values raise ConfigError.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Per-episode seeds. Train and test draw from disjoint index ranges.
std::uint64_t episode_seed(std::uint64_t run_seed, store::Split split, std::size_t index);

struct GenResult {
  store::DatasetManifest train;
  store::DatasetManifest test;
};
/// Writes `out/train` and `out/test`.
GenResult cmd_gen(const RunConfig& cfg, const std::filesystem::path& out);
/// Writes `out/tasks.json` plus world-model episodes of the train and test tasks.
GenResult cmd_gen_puzzle(const RunConfig& cfg, const std::filesystem::path& out);

/// Architecture for a dataset: the desk model for its ball count and resolution, then the overrides.
model::ModelConfig model_for(const RunConfig& cfg, const world::EnvConfig& data_env);

using HistorySink = std::function<void(const std::string& json_line)>;
std::string history_line(const model::EpochStats& stats);
model::TrainedModel cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                              const std::filesystem::path& out, const HistorySink& history);

eval::EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_path,
                          const std::filesystem::path& dataset_dir, const std::filesystem::path& out,
                          const std::optional<std::filesystem::path>& traces_out);

puzzle::AgentCurves cmd_rank(const RunConfig& cfg, const std::filesystem::path& model_path,
                             const std::filesystem::path& tasks_path, const std::filesystem::path& out_prefix);

/// Projects a trace file to two dimensions and writes `<prefix>.csv` and `<prefix>.svg`.
void cmd_plot(const std::filesystem::path& traces_path, const std::filesystem::path& out_prefix);

/// Process exit code for an error kind: 2 config/schema, 3 IO, 4 numerics, 1 otherwise.
int exit_code(ErrorKind kind);

/// Parsed JSON file; syntax errors raise `on_syntax`.
Json read_json(const std::filesystem::path& path, ErrorKind on_syntax);

}  // namespace cwm::cli
