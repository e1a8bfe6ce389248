#include "cwm/commands.hpp"

#include <exception>

#include <spdlog/spdlog.h>

#include "cwm/bytes.hpp"
#include "cwm/config.hpp"
#include "cwm/error.hpp"
#include "cwm/pca.hpp"
#include "cwm/rng.hpp"

namespace cwm::cli {

namespace {

/// Removes `key` from `obj` into `out` when present.
template <class T>
void take(Json& obj, const char* key, T& out, const std::string& context) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ConfigError, context + ": bad value for '" + key + "': " + e.what());
  }
  obj.erase(it);
}

Json classifier_json(const puzzle::ClassifierConfig& c) {
  Json j;
  j["hidden1"] = c.hidden1;
  j["hidden2"] = c.hidden2;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  return j;
}

puzzle::ClassifierConfig classifier_from_json(const Json& j) {
  puzzle::ClassifierConfig c = PuzzleSection{}.classifier;
  JsonFields f(j, "puzzle.classifier");
  f.get("hidden1", c.hidden1);
  f.get("hidden2", c.hidden2);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("lr", c.lr);
  f.finish();
  return c;
}

Json io_json(const IoSection& io) {
  Json j;
  j["data"] = io.data;
  j["model"] = io.model;
  j["history"] = io.history;
  j["report"] = io.report;
  j["traces"] = io.traces;
  j["curves"] = io.curves;
  j["plot"] = io.plot;
  return j;
}

IoSection io_from_json(const Json& j) {
  IoSection io;
  JsonFields f(j, "io");
  f.get("data", io.data);
  f.get("model", io.model);
  f.get("history", io.history);
  f.get("report", io.report);
  f.get("traces", io.traces);
  f.get("curves", io.curves);
  f.get("plot", io.plot);
  f.finish();
  return io;
}

Json section(const Json& root, const char* key) {
  const auto it = root.find(key);
  if (it == root.end()) return Json::object();
  if (!it->is_object()) throw Error(ErrorKind::ConfigError, std::string(key) + ": expected an object");
  return *it;
}

std::vector<world::EpisodePair> generate_split(const RunConfig& cfg, store::Split split, int count) {
  std::vector<world::EpisodePair> out(static_cast<std::size_t>(count));
  std::exception_ptr failure;
#pragma omp parallel for num_threads(cfg.gen_jobs) schedule(dynamic) if (cfg.gen_jobs > 1)
  for (int i = 0; i < count; ++i) {
    try {
      out[i] = world::generate_episode_pair(episode_seed(cfg.seed, split, static_cast<std::size_t>(i)), cfg.env);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

void ensure_parent(const std::filesystem::path& path) {
  const auto parent = path.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(parent, ec);
  if (ec) throw Error(ErrorKind::StorageError, "cannot create " + parent.string() + ": " + ec.message());
}

}  // namespace

void RunConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
  env.validate();
  train.validate();
  if (train_episodes < 1 || test_episodes < 1) bad("env: episode counts must be >= 1");
  if (gen_jobs < 1 || eval.jobs < 1) bad("jobs must be >= 1");
  if (eval.horizon < 1) bad("eval.horizon must be >= 1");
  if (eval.references < 1) bad("eval.references must be >= 1");
  puzzle.tasks.validate();
  puzzle.classifier.validate();
  if (puzzle.episodes_per_task < 1) bad("puzzle.episodes_per_task must be >= 1");
  if (puzzle.budget < 1) bad("puzzle.budget must be >= 1");
  if (!model_overrides.is_object()) bad("train.model must be an object");
  for (const auto* p : {&io.data, &io.model, &io.report, &io.curves, &io.plot})
    if (p->empty()) bad("io paths must not be empty");
  model_for(*this, env);
}

Json run_config_to_json(const RunConfig& c) {
  Json j;
  j["seed"] = c.seed;
  Json env = env_to_json(c.env);
  env["train_episodes"] = c.train_episodes;
  env["test_episodes"] = c.test_episodes;
  env["jobs"] = c.gen_jobs;
  j["env"] = env;
  Json train = train_to_json(c.train);
  train.erase("seed");
  train["mode"] = std::string(model::to_string(c.mode));
  train["model"] = c.model_overrides;
  j["train"] = train;
  j["eval"] = {{"horizon", c.eval.horizon}, {"references", c.eval.references}, {"jobs", c.eval.jobs}};
  Json puz = puzzle::config_to_json(c.puzzle.tasks);
  puz["episodes_per_task"] = c.puzzle.episodes_per_task;
  puz["budget"] = c.puzzle.budget;
  puz["classifier"] = classifier_json(c.puzzle.classifier);
  j["puzzle"] = puz;
  j["io"] = io_json(c.io);
  return j;
}

RunConfig run_config_from_json(const Json& root) {
  if (!root.is_object()) throw Error(ErrorKind::ConfigError, "run config: expected an object");
  RunConfig c;
  for (const auto& [key, value] : root.items())
    if (key != "seed" && key != "env" && key != "train" && key != "eval" && key != "puzzle" && key != "io")
      throw Error(ErrorKind::ConfigError, "run config: unknown key '" + key + "'");
  Json top = root;
  take(top, "seed", c.seed, "run config");

  Json env = section(root, "env");
  take(env, "train_episodes", c.train_episodes, "env");
  take(env, "test_episodes", c.test_episodes, "env");
  take(env, "jobs", c.gen_jobs, "env");
  c.env = env_from_json(env);

  Json train = section(root, "train");
  if (train.contains("seed")) throw Error(ErrorKind::ConfigError, "train: the seed is set at the top level");
  std::string mode(model::to_string(c.mode));
  take(train, "mode", mode, "train");
  c.mode = model::mode_from_string(mode);
  take(train, "model", c.model_overrides, "train");
  c.train = train_from_json(train);

  const Json ev = section(root, "eval");
  JsonFields f(ev, "eval");
  f.get("horizon", c.eval.horizon);
  f.get("references", c.eval.references);
  f.get("jobs", c.eval.jobs);
  f.finish();

  Json puz = section(root, "puzzle");
  take(puz, "episodes_per_task", c.puzzle.episodes_per_task, "puzzle");
  take(puz, "budget", c.puzzle.budget, "puzzle");
  if (const auto it = puz.find("classifier"); it != puz.end()) {
    c.puzzle.classifier = classifier_from_json(*it);
    puz.erase(it);
  }
  c.puzzle.tasks = puzzle::config_from_json(puz);

  c.io = io_from_json(section(root, "io"));
  c.train.seed = c.seed;
  c.puzzle.classifier.seed = c.seed;
  c.validate();
  return c;
}

Json read_json(const std::filesystem::path& path, ErrorKind on_syntax) {
  const std::string text = bytes::read_text(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(on_syntax, path.string() + " is not valid JSON: " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return run_config_from_json(read_json(path, ErrorKind::ConfigError));
}

std::uint64_t episode_seed(std::uint64_t run_seed, store::Split split, std::size_t index) {
  const std::uint64_t offset = split == store::Split::Train ? 0 : (std::uint64_t{1} << 32);
  return mix_seed(run_seed, offset + index);
}

GenResult cmd_gen(const RunConfig& cfg, const std::filesystem::path& out) {
  GenResult r;
  for (auto split : {store::Split::Train, store::Split::Test}) {
    const int count = split == store::Split::Train ? cfg.train_episodes : cfg.test_episodes;
    spdlog::info("generating {} {} episodes", count, store::to_string(split));
    const auto pairs = generate_split(cfg, split, count);
    auto m = store::write_dataset(pairs, out / std::string(store::to_string(split)), cfg.env, split, cfg.seed);
    (split == store::Split::Train ? r.train : r.test) = std::move(m);
  }
  return r;
}

GenResult cmd_gen_puzzle(const RunConfig& cfg, const std::filesystem::path& out) {
  const puzzle::PuzzleConfig& pc = cfg.puzzle.tasks;
  spdlog::info("generating {} train and {} test puzzle tasks", pc.train_tasks, pc.test_tasks);
  const puzzle::TaskSet set = puzzle::generate_task_set(pc, cfg.seed);
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw Error(ErrorKind::StorageError, "cannot create " + out.string() + ": " + ec.message());
  puzzle::save_task_set(set, out / "tasks.json");

  GenResult r;
  puzzle::TaskSet as_train = set;
  const auto train_rewards = puzzle::reward_table(set.train, set.candidates, pc, cfg.gen_jobs);
  const auto train = puzzle::task_episodes(as_train, train_rewards, cfg.puzzle.episodes_per_task, mix_seed(cfg.seed, 2));
  r.train = store::write_dataset(train, out / "train", pc.env(), store::Split::Train, cfg.seed);
  as_train.train = set.test;
  const auto test_rewards = puzzle::reward_table(set.test, set.candidates, pc, cfg.gen_jobs);
  const auto test = puzzle::task_episodes(as_train, test_rewards, 1, mix_seed(cfg.seed, 3));
  r.test = store::write_dataset(test, out / "test", pc.env(), store::Split::Test, cfg.seed);
  return r;
}

model::ModelConfig model_for(const RunConfig& cfg, const world::EnvConfig& data_env) {
  Json j = model_to_json(model::desk_config(data_env.balls, data_env.resolution, cfg.mode));
  if (cfg.model_overrides.contains("mode"))
    throw Error(ErrorKind::ConfigError, "train.model: set the mode with train.mode");
  j.merge_patch(cfg.model_overrides);
  return model_from_json(j);
}

std::string history_line(const model::EpochStats& s) {
  Json j;
  j["epoch"] = s.epoch;
  j["mean_loss"] = s.mean_loss;
  j["wall_seconds"] = s.wall_seconds;
  if (s.dr_weight_mean > 0.0) {
    j["dr_weight_mean"] = s.dr_weight_mean;
    j["dr_weight_clipped"] = s.dr_weight_clipped;
  }
  return j.dump();
}

model::TrainedModel cmd_train(const RunConfig& cfg, const std::filesystem::path& dataset_dir,
                              const std::filesystem::path& out, const HistorySink& history) {
  store::DatasetManifest manifest;
  const auto data = store::read_dataset(dataset_dir, &manifest);
  const model::ModelConfig mc = model_for(cfg, manifest.env_config);
  store::check_model_matches(mc, manifest.env_config);
  spdlog::info("training {} on {} episodes for {} epochs", model::to_string(cfg.mode), data.size(), cfg.train.epochs);
  auto result = model::train(data, mc, cfg.train, [&](const model::EpochStats& s) {
    spdlog::debug("epoch {} loss {:.6f} ({:.2f} s)", s.epoch, s.mean_loss, s.wall_seconds);
    if (history) history(history_line(s));
  });
  ensure_parent(out);
  store::save_model(result.trained, out);
  spdlog::info("saved {}", out.string());
  return std::move(result.trained);
}

eval::EvalReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& model_path,
                          const std::filesystem::path& dataset_dir, const std::filesystem::path& out,
                          const std::optional<std::filesystem::path>& traces_out) {
  const auto trained = store::load_model(model_path);
  store::DatasetManifest manifest;
  const auto data = store::read_dataset(dataset_dir, &manifest);
  store::check_model_matches(trained.model.config, manifest.env_config);
  std::vector<eval::LatentTrace> traces;
  const auto rep = eval::evaluate_rollout(trained.model, data, cfg.eval.horizon, cfg.eval.references, cfg.seed,
                                          cfg.eval.jobs, traces_out ? &traces : nullptr);
  ensure_parent(out);
  bytes::write_text(out, eval::report_to_json(rep).dump(2) + "\n");
  if (traces_out) {
    ensure_parent(*traces_out);
    bytes::write_text(*traces_out, eval::traces_to_json(traces).dump() + "\n");
  }
  double mrr = 0.0;
  for (double v : rep.mrr) mrr += v / static_cast<double>(rep.mrr.size());
  spdlog::info("H@1 step 1 {:.3f}, mean MRR {:.3f}, latent MSE {:.5f}", rep.hits_at_1.front(), mrr, rep.mse_mean);
  return rep;
}

puzzle::AgentCurves cmd_rank(const RunConfig& cfg, const std::filesystem::path& model_path,
                             const std::filesystem::path& tasks_path, const std::filesystem::path& out_prefix) {
  const auto trained = store::load_model(model_path);
  const auto set = puzzle::load_task_set(tasks_path);
  const std::vector<std::uint64_t> seeds{cfg.seed};
  spdlog::info("ranking {} candidates on {} test tasks", set.candidates.size(), set.test.size());
  auto curves = puzzle::compare_agents(trained.model, set, cfg.puzzle.classifier, cfg.puzzle.budget, seeds,
                                       cfg.eval.jobs);
  const std::vector<puzzle::SuccessCurve> all{curves.cwm, curves.mem, curves.rand};
  Json j;
  j["budget"] = cfg.puzzle.budget;
  j["tasks"] = set.test.size();
  Json arr = Json::array();
  for (const auto& c : all) arr.push_back(puzzle::curve_to_json(c));
  j["curves"] = arr;
  ensure_parent(out_prefix);
  bytes::write_text(with_suffix(out_prefix, ".json"), j.dump(2) + "\n");
  bytes::write_text(with_suffix(out_prefix, ".csv"), puzzle::curves_to_csv(all));
  for (const auto& c : all) {
    const std::size_t b10 = std::min<std::size_t>(10, c.solved_fraction.size());
    spdlog::info("{}: solved at budget {} = {:.3f}", c.agent, b10, c.solved_fraction[b10 - 1]);
  }
  return curves;
}

void cmd_plot(const std::filesystem::path& traces_path, const std::filesystem::path& out_prefix) {
  const auto traces = eval::traces_from_json(read_json(traces_path, ErrorKind::CorruptData));
  if (traces.empty()) throw Error(ErrorKind::SchemaError, "trace file has no traces");
  const auto pca = eval::fit_pca(traces);
  ensure_parent(out_prefix);
  bytes::write_text(with_suffix(out_prefix, ".csv"), eval::traces_to_csv(traces, pca));
  bytes::write_text(with_suffix(out_prefix, ".svg"), eval::traces_to_svg(traces, pca));
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::SchemaError:
    case ErrorKind::UnsupportedVersion:
      return 2;
    case ErrorKind::StorageError:
    case ErrorKind::CorruptData:
      return 3;
    case ErrorKind::NumericsError:
    case ErrorKind::TrainingError:
    case ErrorKind::PropensityError:
      return 4;
    default:
      return 1;
  }
}

}  // namespace cwm::cli
