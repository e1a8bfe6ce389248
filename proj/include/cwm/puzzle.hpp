#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cwm/ball_world.hpp"
#include "cwm/classifier.hpp"
#include "cwm/json_fields.hpp"
#include "cwm/world_model.hpp"

namespace cwm::puzzle {

struct PuzzleConfig {
  int min_balls = 2;
  int max_balls = 4;
  int horizon = 20;  // frames, including t = 0
  int resolution = 50;
  /// Mass, friction and radius ranges, gravity, arena and time step of the scenes.
  world::EnvConfig physics;
  world::Range action_radius{0.05, 0.12};
  double action_mass = 1.0;
  double touch_gap = 1e-3;
  int candidates = 200;
  int train_tasks = 70;
  int test_tasks = 30;
  int generation_retries = 500;
  /// Tasks are jittered variants of this many base scenes (0: every scene independent).
  int templates = 10;
  double jitter = 0.02;  // max per-axis offset of each ball from its template position

  void validate() const;
  /// Ball slots per scene: max_balls plus the action slot (the last one).
  int slots() const { return max_balls + 1; }
  /// Environment describing task episodes (for datasets and model shapes).
  world::EnvConfig env() const;
};

struct PlacementAction {
  double x = 0.0;
  double y = 0.0;
  double r = 0.0;

  friend bool operator==(const PlacementAction&, const PlacementAction&) = default;
};

/// Scene with `slots()` entries; unused scene slots and the action slot are dead.
/// Generated tasks always use ball 0 as the subject and ball 1 as the object.
struct PuzzleTask {
  world::WorldState scene;
  world::Confounders confounders;
  int subject = 0;
  int object = 1;  // goal: subject Touching object
  int horizon = 20;
  std::uint64_t seed = 0;

  friend bool operator==(const PuzzleTask&, const PuzzleTask&) = default;
};

struct TaskSet {
  PuzzleConfig config;
  std::uint64_t seed = 0;
  std::vector<PlacementAction> candidates;  // shared by every task
  std::vector<PuzzleTask> train;
  std::vector<PuzzleTask> test;
};

void validate_task(const PuzzleTask& task);
bool action_valid(const PuzzleTask& task, const PlacementAction& action, const world::Arena& arena);
/// Scene with the action ball inserted. InvalidAction if it overlaps or leaves the arena.
world::WorldState place(const PuzzleTask& task, const PlacementAction& action, const world::Arena& arena);

/// 1 iff subject and object come within `touch_gap` at any physics step up to the horizon.
int simulate_action(const PuzzleTask& task, const PlacementAction& action, const PuzzleConfig& config);
/// Reward without any action ball.
int simulate_noop(const PuzzleTask& task, const PuzzleConfig& config);

/// `count` actions, seeded, uniform over the arena and the action radius range.
std::vector<PlacementAction> sample_candidates(const PuzzleConfig& config, std::uint64_t seed, int count);
/// Seeded tasks that no-op does not solve and at least one candidate does.
/// Task i uses template i mod `templates`.
TaskSet generate_task_set(const PuzzleConfig& config, std::uint64_t seed);

/// [task][candidate]: -1 invalid placement, otherwise the reward.
using RewardTable = std::vector<std::vector<int>>;
RewardTable reward_table(std::span<const PuzzleTask> tasks, std::span<const PlacementAction> candidates,
                         const PuzzleConfig& config, int jobs = 1);

/// Factual branch without the action ball, counterfactual branch with it.
world::EpisodePair task_episode(const PuzzleTask& task, const PlacementAction& action, const PuzzleConfig& config);

/// Dreamed terminal latent state per candidate (empty tensor for invalid placements).
std::vector<ad::Tensor> dream_terminal(const model::Model& model, const PuzzleTask& task,
                                       std::span<const PlacementAction> candidates, const PuzzleConfig& config);

struct Ranking {
  std::vector<std::size_t> order;  // candidate indices, best first
  std::vector<double> scores;      // per candidate; invalid placements score -inf
};
/// Scores candidates by the classifier on the dreamed terminal state; ties keep index order.
Ranking rank_actions(const model::Model& model, const Classifier& classifier, const PuzzleTask& task,
                     std::span<const PlacementAction> candidates, const PuzzleConfig& config);

/// One global order by descending training solve fraction, ties by index.
std::vector<std::size_t> mem_order(const RewardTable& train_rewards);
/// `count` draws, uniform with replacement over the valid candidates of one task.
std::vector<std::size_t> rand_attempts(std::span<const int> task_rewards, int count, std::uint64_t seed);

struct SuccessCurve {
  std::string agent;
  std::vector<double> solved_fraction;  // index b-1 holds budget b
  std::vector<std::uint64_t> seeds;
};

/// Attempt sequence of an agent for (task index, seed).
using Agent = std::function<std::vector<std::size_t>(std::size_t task, std::uint64_t seed)>;
/// Invalid placements are skipped without using budget.
SuccessCurve success_curve(const std::string& agent_name, const Agent& agent, const RewardTable& rewards, int budget,
                           std::span<const std::uint64_t> seeds);

/// Training episodes for a world model: `per_task` random valid candidates per task.
std::vector<world::EpisodePair> task_episodes(const TaskSet& set, const RewardTable& train_rewards, int per_task,
                                              std::uint64_t seed);

struct AgentCurves {
  SuccessCurve cwm;
  SuccessCurve mem;
  SuccessCurve rand;
  Classifier classifier;
};

/// Trains the classifier on dreamed terminal states of the training tasks
/// (labels from the simulator), then scores the CWM ranker, MEM and RAND on
/// the test tasks.
AgentCurves compare_agents(const model::Model& model, const TaskSet& set, const ClassifierConfig& classifier, int budget,
                           std::span<const std::uint64_t> seeds, int jobs = 1);

Json config_to_json(const PuzzleConfig& config);
PuzzleConfig config_from_json(const Json& j);
Json task_set_to_json(const TaskSet& set);
TaskSet task_set_from_json(const Json& j);
void save_task_set(const TaskSet& set, const std::filesystem::path& path);
TaskSet load_task_set(const std::filesystem::path& path);
Json curve_to_json(const SuccessCurve& curve);
std::string curves_to_csv(std::span<const SuccessCurve> curves);

}  // namespace cwm::puzzle
