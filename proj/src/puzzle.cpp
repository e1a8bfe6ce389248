#include "cwm/puzzle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cwm/bytes.hpp"
#include "cwm/config.hpp"
#include "cwm/error.hpp"
#include "cwm/rng.hpp"

namespace cwm::puzzle {

namespace {

constexpr int kTaskSetVersion = 1;

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

bool touching(const world::WorldState& s, int a, int b, double gap) {
  if (!s.alive[a] || !s.alive[b]) return false;
  const world::Vec2 d = s.positions[a] - s.positions[b];
  return std::sqrt(world::dot(d, d)) - s.radii[a] - s.radii[b] <= gap;
}

int run_to_horizon(world::WorldState s, const PuzzleTask& task, const PuzzleConfig& c) {
  if (touching(s, task.subject, task.object, c.touch_gap)) return 1;
  const double dt = c.physics.frame_dt / c.physics.substeps;
  for (int f = 1; f < task.horizon; ++f)
    for (int k = 0; k < c.physics.substeps; ++k) {
      s = world::step_world(s, task.confounders, dt, c.physics.arena);
      if (touching(s, task.subject, task.object, c.touch_gap)) return 1;
    }
  return 0;
}

std::vector<world::Observation> render_all(const std::vector<world::WorldState>& states, const PuzzleConfig& c) {
  std::vector<world::Observation> out;
  out.reserve(states.size());
  for (const auto& s : states) out.push_back(world::render(s, c.resolution, c.physics.arena));
  return out;
}

std::vector<world::WorldState> quantized_rollout(const world::WorldState& s0, const PuzzleTask& task,
                                                 const PuzzleConfig& c) {
  std::vector<world::WorldState> out;
  for (const auto& s : world::rollout(s0, task.confounders, c.env(), task.horizon)) out.push_back(world::quantize(s));
  return out;
}

void check_model(const model::Model& m, const PuzzleConfig& c) {
  if (m.config.input_channels != c.slots() + 1 || m.config.resolution != c.resolution)
    throw Error(ErrorKind::SchemaError, "model input does not match the puzzle scenes");
}

PuzzleTask sample_task(const PuzzleConfig& c, Rng& rng, std::uint64_t seed) {
  const int slots = c.slots();
  const int n = c.min_balls + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.max_balls - c.min_balls + 1)));
  PuzzleTask t;
  t.seed = seed;
  t.horizon = c.horizon;
  t.confounders = world::sample_confounders(rng, c.physics, static_cast<std::size_t>(slots));
  double friction = 0.0;
  for (int i = 0; i < n; ++i) friction += t.confounders.frictions[i];
  t.confounders.masses[slots - 1] = f32(c.action_mass);
  t.confounders.frictions[slots - 1] = f32(friction / n);

  auto& s = t.scene;
  s.positions.assign(slots, {});
  s.velocities.assign(slots, {});
  s.radii.assign(slots, f32(c.physics.radius.lo));
  s.alive.assign(slots, false);
  const auto& arena = c.physics.arena;
  for (int i = 0; i < n; ++i) {
    const double r = f32(rng.uniform(c.physics.radius.lo, c.physics.radius.hi));
    bool placed = false;
    for (int attempt = 0; attempt < c.physics.placement_retries && !placed; ++attempt) {
      const world::Vec2 p{f32(rng.uniform(r, arena.width - r)), f32(rng.uniform(r, arena.height - r))};
      bool clear = true;
      for (int j = 0; j < i; ++j) {
        const world::Vec2 d = p - s.positions[j];
        if (world::dot(d, d) < (r + s.radii[j]) * (r + s.radii[j])) clear = false;
      }
      if (!clear) continue;
      s.positions[i] = p;
      s.radii[i] = r;
      s.alive[i] = true;
      placed = true;
    }
    if (!placed) throw Error(ErrorKind::GenerationFailed, "could not place scene ball " + std::to_string(i));
  }
  t.subject = 0;
  t.object = 1;
  return t;
}

/// Template layout with fresh confounders and every live ball moved by up to `jitter` per axis.
bool jitter_task(const PuzzleTask& base, const PuzzleConfig& c, Rng& rng, std::uint64_t seed, PuzzleTask& out) {
  out = base;
  out.seed = seed;
  const int slots = c.slots();
  out.confounders = world::sample_confounders(rng, c.physics, static_cast<std::size_t>(slots));
  double friction = 0.0;
  int n = 0;
  for (int i = 0; i + 1 < slots; ++i)
    if (base.scene.alive[i]) {
      friction += out.confounders.frictions[i];
      ++n;
    }
  out.confounders.masses[slots - 1] = f32(c.action_mass);
  out.confounders.frictions[slots - 1] = f32(friction / n);
  const auto& arena = c.physics.arena;
  auto& s = out.scene;
  for (int i = 0; i + 1 < slots; ++i) {
    if (!s.alive[i]) continue;
    const double r = s.radii[i];
    const double x = std::clamp(base.scene.positions[i].x + rng.uniform(-c.jitter, c.jitter), r, arena.width - r);
    const double y = std::clamp(base.scene.positions[i].y + rng.uniform(-c.jitter, c.jitter), r, arena.height - r);
    s.positions[i] = {f32(x), f32(y)};
    for (int j = 0; j < i; ++j) {
      if (!s.alive[j]) continue;
      const world::Vec2 d = s.positions[i] - s.positions[j];
      if (world::dot(d, d) < (r + s.radii[j]) * (r + s.radii[j])) return false;
    }
  }
  return true;
}

Json pair_json(double a, double b) { return Json::array({a, b}); }

Json task_json(const PuzzleTask& t) {
  Json j;
  j["seed"] = t.seed;
  j["subject"] = t.subject;
  j["object"] = t.object;
  j["horizon"] = t.horizon;
  Json pos = Json::array(), vel = Json::array();
  for (std::size_t i = 0; i < t.scene.size(); ++i) {
    pos.push_back(pair_json(t.scene.positions[i].x, t.scene.positions[i].y));
    vel.push_back(pair_json(t.scene.velocities[i].x, t.scene.velocities[i].y));
  }
  j["positions"] = pos;
  j["velocities"] = vel;
  j["radii"] = t.scene.radii;
  std::vector<bool> alive(t.scene.alive.begin(), t.scene.alive.end());
  j["alive"] = alive;
  j["masses"] = t.confounders.masses;
  j["frictions"] = t.confounders.frictions;
  j["gravity"] = pair_json(t.confounders.gravity.x, t.confounders.gravity.y);
  return j;
}

PuzzleTask task_from_json(const Json& j, const std::string& context) {
  PuzzleTask t;
  JsonFields f(j, context);
  f.get("seed", t.seed);
  f.get("subject", t.subject);
  f.get("object", t.object);
  f.get("horizon", t.horizon);
  std::vector<std::array<double, 2>> pos, vel;
  std::vector<bool> alive;
  std::array<double, 2> g{};
  f.get("positions", pos);
  f.get("velocities", vel);
  f.get("radii", t.scene.radii);
  f.get("alive", alive);
  f.get("masses", t.confounders.masses);
  f.get("frictions", t.confounders.frictions);
  f.get("gravity", g);
  f.finish();
  for (const auto& p : pos) t.scene.positions.push_back({p[0], p[1]});
  for (const auto& v : vel) t.scene.velocities.push_back({v[0], v[1]});
  t.scene.alive = alive;
  t.confounders.gravity = {g[0], g[1]};
  try {
    validate_task(t);
  } catch (const Error& e) {
    f.fail(e.what());
  }
  return t;
}

}  // namespace

void PuzzleConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, "puzzle: " + m); };
  if (min_balls < 2 || max_balls < min_balls) bad("need 2 <= min_balls <= max_balls");
  if (horizon < 2) bad("horizon must be >= 2");
  if (resolution < 1) bad("resolution must be positive");
  if (!(action_radius.lo > 0.0) || action_radius.hi < action_radius.lo) bad("invalid action_radius");
  if (!(action_mass > 0.0)) bad("action_mass must be positive");
  if (!(touch_gap >= 0.0)) bad("touch_gap must be >= 0");
  if (candidates < 1) bad("candidates must be >= 1");
  if (train_tasks < 0 || test_tasks < 0 || train_tasks + test_tasks < 1) bad("need at least one task");
  if (generation_retries < 1) bad("generation_retries must be >= 1");
  if (templates < 0 || !(jitter >= 0.0)) bad("templates and jitter must be >= 0");
  env().validate();
}

world::EnvConfig PuzzleConfig::env() const {
  world::EnvConfig e = physics;
  e.balls = slots();
  e.horizon_factual = horizon;
  e.horizon_cf = horizon;
  e.resolution = resolution;
  return e;
}

void validate_task(const PuzzleTask& t) {
  world::validate_state(t.scene);
  world::validate_confounders(t.confounders, t.scene.size());
  const int n = static_cast<int>(t.scene.size());
  auto bad = [](const std::string& m) { throw Error(ErrorKind::InvalidState, "task: " + m); };
  if (n < 3) bad("scene needs two balls and an action slot");
  if (t.subject == t.object) bad("subject and object must differ");
  for (int b : {t.subject, t.object})
    if (b < 0 || b >= n - 1 || !t.scene.alive[b]) bad("goal ball " + std::to_string(b) + " is not a live scene ball");
  if (t.scene.alive[n - 1]) bad("action slot must start empty");
  if (t.horizon < 2) bad("horizon must be >= 2");
}

bool action_valid(const PuzzleTask& task, const PlacementAction& a, const world::Arena& arena) {
  const world::Intervention iv{world::InterventionKind::Placement, task.scene.size() - 1, {a.x, a.y}, a.r};
  return world::intervention_valid(task.scene, iv, arena);
}

world::WorldState place(const PuzzleTask& task, const PlacementAction& a, const world::Arena& arena) {
  if (!action_valid(task, a, arena))
    throw Error(ErrorKind::InvalidAction, "placement overlaps a ball or leaves the arena");
  const world::Intervention iv{world::InterventionKind::Placement, task.scene.size() - 1, {a.x, a.y}, a.r};
  return world::apply_intervention(task.scene, iv, arena);
}

int simulate_action(const PuzzleTask& task, const PlacementAction& action, const PuzzleConfig& c) {
  return run_to_horizon(place(task, action, c.physics.arena), task, c);
}

int simulate_noop(const PuzzleTask& task, const PuzzleConfig& c) { return run_to_horizon(task.scene, task, c); }

std::vector<PlacementAction> sample_candidates(const PuzzleConfig& c, std::uint64_t seed, int count) {
  Rng rng(mix_seed(seed, 7));
  const auto& arena = c.physics.arena;
  std::vector<PlacementAction> out;
  for (int i = 0; i < count; ++i) {
    const double r = f32(rng.uniform(c.action_radius.lo, c.action_radius.hi));
    const double x = f32(rng.uniform(r, arena.width - r));
    const double y = f32(rng.uniform(r, arena.height - r));
    out.push_back({x, y, r});
  }
  return out;
}

TaskSet generate_task_set(const PuzzleConfig& c, std::uint64_t seed) {
  c.validate();
  TaskSet set;
  set.config = c;
  set.seed = seed;
  set.candidates = sample_candidates(c, seed, c.candidates);
  auto acceptable = [&](const PuzzleTask& t) {
    if (simulate_noop(t, c) == 1) return false;
    for (const auto& a : set.candidates)
      if (action_valid(t, a, c.physics.arena) && simulate_action(t, a, c) == 1) return true;
    return false;
  };
  std::vector<PuzzleTask> bases;
  for (int k = 0; k < c.templates; ++k) {
    bool done = false;
    for (int attempt = 0; attempt < c.generation_retries && !done; ++attempt) {
      const std::uint64_t base_seed = mix_seed(mix_seed(seed, 1'000'000 + static_cast<std::uint64_t>(k)), attempt);
      Rng rng(base_seed);
      PuzzleTask t = sample_task(c, rng, base_seed);
      if (!acceptable(t)) continue;
      bases.push_back(std::move(t));
      done = true;
    }
    if (!done) throw Error(ErrorKind::GenerationFailed, "no acceptable scene for template " + std::to_string(k));
  }

  const int total = c.train_tasks + c.test_tasks;
  for (int i = 0; i < total; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < c.generation_retries && !done; ++attempt) {
      const std::uint64_t task_seed = mix_seed(mix_seed(seed, 1 + static_cast<std::uint64_t>(i)), attempt);
      Rng rng(task_seed);
      PuzzleTask t;
      if (bases.empty()) t = sample_task(c, rng, task_seed);
      else if (!jitter_task(bases[static_cast<std::size_t>(i % c.templates)], c, rng, task_seed, t)) continue;
      if (!acceptable(t)) continue;
      (i < c.train_tasks ? set.train : set.test).push_back(std::move(t));
      done = true;
    }
    if (!done) throw Error(ErrorKind::GenerationFailed, "no acceptable scene for task " + std::to_string(i));
  }
  return set;
}

RewardTable reward_table(std::span<const PuzzleTask> tasks, std::span<const PlacementAction> candidates,
                         const PuzzleConfig& c, int jobs) {
  RewardTable out(tasks.size(), std::vector<int>(candidates.size(), -1));
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(dynamic) if (jobs > 1)
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    try {
      for (std::size_t a = 0; a < candidates.size(); ++a)
        if (action_valid(tasks[t], candidates[a], c.physics.arena)) out[t][a] = simulate_action(tasks[t], candidates[a], c);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

world::EpisodePair task_episode(const PuzzleTask& task, const PlacementAction& action, const PuzzleConfig& c) {
  validate_task(task);
  world::EpisodePair ep;
  ep.seed = task.seed;
  ep.confounders = task.confounders;
  ep.intervention = {world::InterventionKind::Placement, task.scene.size() - 1, {action.x, action.y}, action.r};
  ep.factual_states = quantized_rollout(task.scene, task, c);
  ep.cf_states = quantized_rollout(place(task, action, c.physics.arena), task, c);
  ep.factual_obs = render_all(ep.factual_states, c);
  ep.cf_obs = render_all(ep.cf_states, c);
  return ep;
}

std::vector<ad::Tensor> dream_terminal(const model::Model& m, const PuzzleTask& task,
                                       std::span<const PlacementAction> candidates, const PuzzleConfig& c) {
  validate_task(task);
  check_model(m, c);
  const bool uses_u = m.config.mode != model::Mode::WM;
  ad::Tensor u;
  if (uses_u) {
    const auto factual = render_all(quantized_rollout(task.scene, task, c), c);
    u = model::estimate_confounders(m, model::encode_many(m, factual));
  }
  std::vector<std::size_t> valid;
  std::vector<world::Observation> firsts;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!action_valid(task, candidates[i], c.physics.arena)) continue;
    valid.push_back(i);
    firsts.push_back(world::render(world::quantize(place(task, candidates[i], c.physics.arena)), c.resolution,
                                   c.physics.arena));
  }
  const auto s0 = model::encode_many(m, firsts);
  std::vector<ad::Tensor> out(candidates.size());
  for (std::size_t k = 0; k < valid.size(); ++k) {
    auto traj = model::rollout_latent(m, s0[k], uses_u ? &u : nullptr, task.horizon - 1);
    out[valid[k]] = traj.empty() ? s0[k] : traj.back();
  }
  return out;
}

Ranking rank_actions(const model::Model& m, const Classifier& clf, const PuzzleTask& task,
                     std::span<const PlacementAction> candidates, const PuzzleConfig& c) {
  if (candidates.empty()) throw Error(ErrorKind::SchemaError, "no candidate actions to rank");
  const auto terminal = dream_terminal(m, task, candidates, c);
  std::vector<ad::Tensor> inputs;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < terminal.size(); ++i)
    if (terminal[i].size() > 0) {
      valid.push_back(i);
      inputs.push_back(terminal[i]);
    }
  Ranking r;
  r.scores.assign(candidates.size(), -std::numeric_limits<double>::infinity());
  if (!inputs.empty()) {
    const auto probs = clf.predict_proba(inputs);
    for (std::size_t k = 0; k < valid.size(); ++k) r.scores[valid[k]] = probs[k][1];
  }
  r.order.resize(candidates.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](std::size_t a, std::size_t b) { return r.scores[a] > r.scores[b]; });
  return r;
}

std::vector<std::size_t> mem_order(const RewardTable& train_rewards) {
  if (train_rewards.empty()) throw Error(ErrorKind::SchemaError, "MEM needs training tasks");
  const std::size_t n = train_rewards[0].size();
  std::vector<int> solved(n, 0);
  for (const auto& row : train_rewards) {
    if (row.size() != n) throw Error(ErrorKind::SchemaError, "reward rows differ in length");
    for (std::size_t a = 0; a < n; ++a) solved[a] += row[a] == 1;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return solved[a] > solved[b]; });
  return order;
}

std::vector<std::size_t> rand_attempts(std::span<const int> task_rewards, int count, std::uint64_t seed) {
  std::vector<std::size_t> valid;
  for (std::size_t a = 0; a < task_rewards.size(); ++a)
    if (task_rewards[a] >= 0) valid.push_back(a);
  std::vector<std::size_t> out;
  if (valid.empty()) return out;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) out.push_back(valid[rng.below(valid.size())]);
  return out;
}

SuccessCurve success_curve(const std::string& agent_name, const Agent& agent, const RewardTable& rewards, int budget,
                           std::span<const std::uint64_t> seeds) {
  if (budget < 1) throw Error(ErrorKind::ConfigError, "budget must be >= 1");
  if (seeds.empty()) throw Error(ErrorKind::ConfigError, "success curve needs at least one seed");
  if (rewards.empty()) throw Error(ErrorKind::SchemaError, "success curve needs tasks");
  SuccessCurve curve;
  curve.agent = agent_name;
  curve.seeds.assign(seeds.begin(), seeds.end());
  std::vector<double> solved_at(static_cast<std::size_t>(budget) + 1, 0.0);
  for (std::uint64_t seed : seeds)
    for (std::size_t t = 0; t < rewards.size(); ++t) {
      int used = 0;
      for (std::size_t a : agent(t, seed)) {
        if (used == budget) break;
        if (a >= rewards[t].size()) throw Error(ErrorKind::SchemaError, "agent chose an unknown action");
        const int r = rewards[t][a];
        if (r < 0) continue;
        ++used;
        if (r == 1) {
          solved_at[static_cast<std::size_t>(used)] += 1.0;
          break;
        }
      }
    }
  const double denom = static_cast<double>(seeds.size() * rewards.size());
  double cumulative = 0.0;
  for (int b = 1; b <= budget; ++b) {
    cumulative += solved_at[static_cast<std::size_t>(b)];
    curve.solved_fraction.push_back(cumulative / denom);
  }
  return curve;
}

std::vector<world::EpisodePair> task_episodes(const TaskSet& set, const RewardTable& train_rewards, int per_task,
                                              std::uint64_t seed) {
  if (per_task < 1) throw Error(ErrorKind::ConfigError, "episodes per task must be >= 1");
  if (train_rewards.size() != set.train.size()) throw Error(ErrorKind::SchemaError, "reward table does not match tasks");
  std::vector<world::EpisodePair> out;
  for (std::size_t t = 0; t < set.train.size(); ++t)
    for (std::size_t a : rand_attempts(train_rewards[t], per_task, mix_seed(seed, t))) {
      out.push_back(task_episode(set.train[t], set.candidates[a], set.config));
      out.back().seed = mix_seed(set.train[t].seed, a);
    }
  return out;
}

AgentCurves compare_agents(const model::Model& m, const TaskSet& set, const ClassifierConfig& cc, int budget,
                           std::span<const std::uint64_t> seeds, int jobs) {
  const PuzzleConfig& c = set.config;
  if (set.train.empty() || set.test.empty()) throw Error(ErrorKind::SchemaError, "agents need train and test tasks");
  const RewardTable train = reward_table(set.train, set.candidates, c, jobs);
  const RewardTable test = reward_table(set.test, set.candidates, c, jobs);

  std::vector<std::vector<ad::Tensor>> terminals(set.train.size());
  std::exception_ptr failure;
#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(dynamic) if (jobs > 1)
  for (std::size_t t = 0; t < set.train.size(); ++t) {
    try {
      terminals[t] = dream_terminal(m, set.train[t], set.candidates, c);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<ad::Tensor> inputs;
  std::vector<int> labels;
  for (std::size_t t = 0; t < terminals.size(); ++t)
    for (std::size_t a = 0; a < terminals[t].size(); ++a)
      if (train[t][a] >= 0) {
        inputs.push_back(std::move(terminals[t][a]));
        labels.push_back(train[t][a]);
      }

  AgentCurves out;
  out.classifier = train_classifier(inputs, labels, cc);
  std::vector<std::vector<std::size_t>> orders(set.test.size());
#pragma omp parallel for num_threads(std::max(jobs, 1)) schedule(dynamic) if (jobs > 1)
  for (std::size_t t = 0; t < set.test.size(); ++t) {
    try {
      orders[t] = rank_actions(m, out.classifier, set.test[t], set.candidates, c).order;
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  const auto mem = mem_order(train);
  out.cwm = success_curve("cwm", [&](std::size_t t, std::uint64_t) { return orders[t]; }, test, budget, seeds);
  out.mem = success_curve("mem", [&](std::size_t, std::uint64_t) { return mem; }, test, budget, seeds);
  out.rand = success_curve(
      "rand", [&](std::size_t t, std::uint64_t s) { return rand_attempts(test[t], budget, mix_seed(s, t)); }, test,
      budget, seeds);
  return out;
}

Json config_to_json(const PuzzleConfig& c) {
  Json j;
  j["min_balls"] = c.min_balls;
  j["max_balls"] = c.max_balls;
  j["horizon"] = c.horizon;
  j["resolution"] = c.resolution;
  j["physics"] = env_to_json(c.physics);
  j["action_radius"] = pair_json(c.action_radius.lo, c.action_radius.hi);
  j["action_mass"] = c.action_mass;
  j["touch_gap"] = c.touch_gap;
  j["candidates"] = c.candidates;
  j["train_tasks"] = c.train_tasks;
  j["test_tasks"] = c.test_tasks;
  j["generation_retries"] = c.generation_retries;
  j["templates"] = c.templates;
  j["jitter"] = c.jitter;
  return j;
}

PuzzleConfig config_from_json(const Json& j) {
  PuzzleConfig c;
  JsonFields f(j, "puzzle");
  f.get("min_balls", c.min_balls);
  f.get("max_balls", c.max_balls);
  f.get("horizon", c.horizon);
  f.get("resolution", c.resolution);
  if (const Json* p = f.child("physics")) c.physics = env_from_json(*p);
  std::array<double, 2> ar{c.action_radius.lo, c.action_radius.hi};
  f.get("action_radius", ar);
  c.action_radius = {ar[0], ar[1]};
  f.get("action_mass", c.action_mass);
  f.get("touch_gap", c.touch_gap);
  f.get("candidates", c.candidates);
  f.get("train_tasks", c.train_tasks);
  f.get("test_tasks", c.test_tasks);
  f.get("generation_retries", c.generation_retries);
  f.get("templates", c.templates);
  f.get("jitter", c.jitter);
  f.finish();
  c.validate();
  return c;
}

Json task_set_to_json(const TaskSet& set) {
  Json j;
  j["format_version"] = kTaskSetVersion;
  j["config"] = config_to_json(set.config);
  j["seed"] = set.seed;
  Json cands = Json::array();
  for (const auto& a : set.candidates) cands.push_back(Json::array({a.x, a.y, a.r}));
  j["candidates"] = cands;
  for (const char* split : {"train", "test"}) {
    Json arr = Json::array();
    for (const auto& t : split[1] == 'r' ? set.train : set.test) arr.push_back(task_json(t));
    j[split] = arr;
  }
  return j;
}

TaskSet task_set_from_json(const Json& j) {
  TaskSet set;
  JsonFields f(j, "task set");
  int version = 0;
  f.get("format_version", version);
  if (version != kTaskSetVersion)
    throw Error(ErrorKind::UnsupportedVersion, "task set format " + std::to_string(version));
  const Json* cj = f.child("config");
  if (!cj) f.fail("missing config");
  set.config = config_from_json(*cj);
  f.get("seed", set.seed);
  std::vector<std::array<double, 3>> cands;
  f.get("candidates", cands);
  for (const auto& a : cands) set.candidates.push_back({a[0], a[1], a[2]});
  std::vector<Json> train, test;
  f.get("train", train);
  f.get("test", test);
  f.finish();
  for (std::size_t i = 0; i < train.size(); ++i) set.train.push_back(task_from_json(train[i], "train task " + std::to_string(i)));
  for (std::size_t i = 0; i < test.size(); ++i) set.test.push_back(task_from_json(test[i], "test task " + std::to_string(i)));
  for (const auto* tasks : {&set.train, &set.test})
    for (const auto& t : *tasks)
      if (static_cast<int>(t.scene.size()) != set.config.slots())
        f.fail("task scene size does not match the config");
  return set;
}

void save_task_set(const TaskSet& set, const std::filesystem::path& path) {
  bytes::write_text(path, task_set_to_json(set).dump(1) + "\n");
}

TaskSet load_task_set(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(bytes::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptData, "task set is not valid JSON: " + std::string(e.what()));
  }
  return task_set_from_json(j);
}

Json curve_to_json(const SuccessCurve& curve) {
  Json j;
  j["agent"] = curve.agent;
  j["seeds"] = curve.seeds;
  j["solved_fraction"] = curve.solved_fraction;
  return j;
}

std::string curves_to_csv(std::span<const SuccessCurve> curves) {
  std::string out = "agent,budget,solved_fraction\n";
  char buf[64];
  for (const auto& c : curves)
    for (std::size_t b = 0; b < c.solved_fraction.size(); ++b) {
      std::snprintf(buf, sizeof buf, ",%zu,%.17g\n", b + 1, c.solved_fraction[b]);
      out += c.agent + buf;
    }
  return out;
}

}  // namespace cwm::puzzle
