#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "cwm/error.hpp"
#include "cwm/puzzle.hpp"
#include "cwm/rng.hpp"
#include "doctest.h"
#include "tmpdir.hpp"

using namespace cwm;
using namespace cwm::puzzle;
using world::Vec2;

namespace {

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::ConfigError;
}

// Two scene balls, frictionless and weightless unless told otherwise.
PuzzleConfig flat_config() {
  PuzzleConfig c;
  c.min_balls = 2;
  c.max_balls = 2;
  c.resolution = 10;
  c.physics.gravity = {0.0, 0.0};
  return c;
}

PuzzleTask make_task(const PuzzleConfig& c, std::vector<Vec2> pos, std::vector<Vec2> vel, double radius = 0.05) {
  const int slots = c.slots();
  PuzzleTask t;
  t.horizon = c.horizon;
  t.scene.positions.assign(slots, {});
  t.scene.velocities.assign(slots, {});
  t.scene.radii.assign(slots, radius);
  t.scene.alive.assign(slots, false);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    t.scene.positions[i] = pos[i];
    t.scene.velocities[i] = vel[i];
    t.scene.alive[i] = true;
  }
  t.confounders.masses.assign(slots, 1.0);
  t.confounders.frictions.assign(slots, 0.0);
  t.confounders.gravity = c.physics.gravity;
  return t;
}

model::ModelConfig tiny_model(const PuzzleConfig& c) {
  model::ModelConfig m;
  m.mode = model::Mode::CWM;
  m.input_channels = c.slots() + 1;
  m.resolution = c.resolution;
  m.slots = c.slots();
  m.extractor = {{3, 1, 1, 0, model::Activation::LeakyRelu, true}, {0, 5, 5, 0, model::Activation::Sigmoid, false}};
  m.hidden = 8;
  m.confounder_dim = 5;
  return m;
}

Classifier constant_classifier(std::size_t dim) {
  std::vector<Tensor> x;
  std::vector<int> y;
  Rng rng(3);
  for (int i = 0; i < 8; ++i) {
    Tensor t({static_cast<int>(dim)});
    for (std::size_t j = 0; j < dim; ++j) t[j] = rng.uniform();
    x.push_back(t);
    y.push_back(i % 2);
  }
  ClassifierConfig cc;
  cc.hidden1 = 4;
  cc.hidden2 = 4;
  cc.epochs = 1;
  Classifier clf = train_classifier(x, y, cc);
  for (auto& p : clf.params) std::fill(p.values().begin(), p.values().end(), 0.0);
  return clf;
}

std::vector<Tensor> blobs(int n, std::uint64_t seed, std::vector<int>& labels) {
  Rng rng(seed);
  std::vector<Tensor> out;
  labels.clear();
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    Tensor t({4});
    for (int j = 0; j < 4; ++j) t[j] = (y ? 1.5 : -1.5) + rng.uniform(-1.0, 1.0);
    out.push_back(t);
    labels.push_back(y);
  }
  return out;
}

PuzzleConfig small_generation() {
  PuzzleConfig c;
  c.resolution = 10;
  c.candidates = 30;
  c.train_tasks = 4;
  c.test_tasks = 2;
  c.templates = 2;
  return c;
}

}  // namespace

TEST_CASE("goal balls touching at the start are solved by every action") {
  const PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.3, 0.5}, {0.4, 0.5}}, {{0, 0}, {0, 0}});
  CHECK(simulate_noop(t, c) == 1);
  CHECK(simulate_action(t, {0.8, 0.8, 0.05}, c) == 1);
}

TEST_CASE("static scene with a far placement is not solved") {
  const PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0, 0}, {0, 0}});
  CHECK(simulate_noop(t, c) == 0);
  CHECK(simulate_action(t, {0.5, 0.1, 0.05}, c) == 0);
}

TEST_CASE("a placed ball deflects the object into the subject") {
  const PuzzleConfig c = flat_config();
  // Object travels right along y = 0.3 and passes well below the subject.
  const PuzzleTask t = make_task(c, {{0.9, 0.8}, {0.1, 0.3}}, {{0, 0}, {1.0, 0}});
  CHECK(simulate_noop(t, c) == 0);
  // An obstacle just below its path bounces it up and to the right.
  CHECK(simulate_action(t, {0.6, 0.24, 0.05}, c) == 1);
  CHECK(simulate_action(t, {0.6, 0.6, 0.05}, c) == 0);
}

TEST_CASE("placements overlapping a ball or the walls are invalid") {
  const PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0, 0}, {0, 0}});
  CHECK_FALSE(action_valid(t, {0.22, 0.5, 0.05}, c.physics.arena));
  CHECK_FALSE(action_valid(t, {0.02, 0.5, 0.05}, c.physics.arena));
  CHECK(action_valid(t, {0.5, 0.5, 0.05}, c.physics.arena));
  CHECK(kind_of([&] { place(t, {0.22, 0.5, 0.05}, c.physics.arena); }) == ErrorKind::InvalidAction);
  CHECK(kind_of([&] { simulate_action(t, {0.8, 0.52, 0.05}, c); }) == ErrorKind::InvalidAction);
  const auto placed = place(t, {0.5, 0.5, 0.07}, c.physics.arena);
  CHECK(placed.alive.back());
  CHECK(placed.radii.back() == 0.07);
}

TEST_CASE("simulation leaves the task untouched and repeats exactly") {
  const PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.9, 0.8}, {0.1, 0.3}}, {{0, 0}, {1.0, 0}});
  const PuzzleTask copy = t;
  const int a = simulate_action(t, {0.6, 0.24, 0.05}, c);
  CHECK(t == copy);
  CHECK(simulate_action(t, {0.6, 0.24, 0.05}, c) == a);
}

TEST_CASE("task validation") {
  const PuzzleConfig c = flat_config();
  PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0, 0}, {0, 0}});
  CHECK_NOTHROW(validate_task(t));
  PuzzleTask same = t;
  same.object = 0;
  CHECK(kind_of([&] { validate_task(same); }) == ErrorKind::InvalidState);
  PuzzleTask action_goal = t;
  action_goal.object = 2;
  CHECK(kind_of([&] { validate_task(action_goal); }) == ErrorKind::InvalidState);
  PuzzleTask occupied = t;
  occupied.scene.alive[2] = true;
  CHECK(kind_of([&] { validate_task(occupied); }) == ErrorKind::InvalidState);
}

TEST_CASE("task episode branches differ only by the action ball") {
  const PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0.1, 0}, {0, 0}});
  const auto ep = task_episode(t, {0.5, 0.2, 0.06}, c);
  REQUIRE(ep.factual_obs.size() == static_cast<std::size_t>(c.horizon));
  REQUIRE(ep.cf_obs.size() == static_cast<std::size_t>(c.horizon));
  CHECK(ep.factual_obs[0].channels == c.slots() + 1);
  CHECK_FALSE(ep.factual_states[0].alive.back());
  CHECK(ep.cf_states[0].alive.back());
  CHECK(ep.factual_states[0].positions[0] == ep.cf_states[0].positions[0]);
}

TEST_CASE("candidates are seeded and inside the arena") {
  PuzzleConfig c;
  const auto a = sample_candidates(c, 5, 200);
  CHECK(a == sample_candidates(c, 5, 200));
  CHECK(a != sample_candidates(c, 6, 200));
  for (const auto& p : a) {
    CHECK(p.r >= static_cast<float>(c.action_radius.lo));
    CHECK(p.r <= static_cast<float>(c.action_radius.hi));
    CHECK(p.x - p.r >= -1e-7);
    CHECK(p.x + p.r <= c.physics.arena.width + 1e-7);
  }
}

TEST_CASE("generated tasks need an action and are solvable") {
  const PuzzleConfig c = small_generation();
  const TaskSet set = generate_task_set(c, 9);
  REQUIRE(set.train.size() == 4);
  REQUIRE(set.test.size() == 2);
  const auto rewards = reward_table(set.train, set.candidates, c);
  for (std::size_t i = 0; i < set.train.size(); ++i) {
    CHECK(simulate_noop(set.train[i], c) == 0);
    CHECK(std::count(rewards[i].begin(), rewards[i].end(), 1) >= 1);
    CHECK(set.train[i].subject == 0);
    CHECK(set.train[i].object == 1);
  }
  CHECK(reward_table(set.train, set.candidates, c, 3) == rewards);
}

TEST_CASE("task sets round-trip through JSON") {
  const PuzzleConfig c = small_generation();
  const TaskSet set = generate_task_set(c, 4);
  testing::TempDir dir("puzzle");
  save_task_set(set, dir / "tasks.json");
  const TaskSet back = load_task_set(dir / "tasks.json");
  CHECK(back.seed == set.seed);
  CHECK(back.candidates == set.candidates);
  CHECK(back.train == set.train);
  CHECK(back.test == set.test);
  CHECK(config_to_json(back.config) == config_to_json(set.config));

  Json j = task_set_to_json(set);
  j["extra"] = 1;
  CHECK(kind_of([&] { task_set_from_json(j); }) == ErrorKind::ConfigError);
  Json v = task_set_to_json(set);
  v["format_version"] = 99;
  CHECK(kind_of([&] { task_set_from_json(v); }) == ErrorKind::UnsupportedVersion);
}

TEST_CASE("classifier separates separable data") {
  std::vector<int> y;
  const auto x = blobs(200, 1, y);
  ClassifierConfig cc;
  cc.hidden1 = 16;
  cc.hidden2 = 8;
  cc.epochs = 30;
  cc.batch_size = 16;
  cc.lr = 3e-3;
  const Classifier clf = train_classifier(x, y, cc);
  const auto p = clf.predict_proba(x);
  int correct = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(p[i][0] + p[i][1] == doctest::Approx(1.0).epsilon(1e-12));
    correct += (p[i][1] > 0.5) == (y[i] == 1);
  }
  CHECK(correct >= 198);
  CHECK(clf.score(x[1]) == p[1][1]);

  const Classifier again = train_classifier(x, y, cc);
  CHECK(again.params == clf.params);
  cc.seed = 1;
  CHECK(train_classifier(x, y, cc).params != clf.params);
}

TEST_CASE("classifier rejects degenerate data") {
  std::vector<int> y;
  auto x = blobs(10, 2, y);
  ClassifierConfig cc;
  cc.epochs = 1;
  std::vector<int> ones(x.size(), 1);
  CHECK(kind_of([&] { train_classifier(x, ones, cc); }) == ErrorKind::TrainingError);
  CHECK(kind_of([&] { train_classifier(std::span<const Tensor>(), std::span<const int>(), cc); }) ==
        ErrorKind::TrainingError);
  std::vector<int> bad = y;
  bad[0] = 2;
  CHECK(kind_of([&] { train_classifier(x, bad, cc); }) == ErrorKind::SchemaError);
  CHECK(kind_of([&] { train_classifier(x, std::span(y).first(3), cc); }) == ErrorKind::SchemaError);
}

TEST_CASE("ranking orders every candidate once, invalid ones last") {
  PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0.1, 0}, {0, 0}});
  auto cands = sample_candidates(c, 1, 200);
  const model::Model m = model::Model::init(tiny_model(c), 2);
  const std::size_t dim = static_cast<std::size_t>(c.slots()) * m.config.latent_dim;

  const Ranking flat = rank_actions(m, constant_classifier(dim), t, cands, c);
  std::vector<std::size_t> sorted = flat.order;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(cands.size());
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  // Constant scores keep index order among valid actions, then invalid ones.
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (action_valid(t, cands[i], c.physics.arena)) expect.push_back(i);
  const std::size_t n_valid = expect.size();
  for (std::size_t i = 0; i < cands.size(); ++i)
    if (!action_valid(t, cands[i], c.physics.arena)) expect.push_back(i);
  CHECK(flat.order == expect);
  for (std::size_t k = n_valid; k < expect.size(); ++k) CHECK(std::isinf(flat.scores[expect[k]]));

  std::vector<int> y;
  Rng rng(8);
  std::vector<Tensor> x;
  for (int i = 0; i < 20; ++i) {
    Tensor v({static_cast<int>(dim)});
    for (auto& e : v.values()) e = rng.uniform();
    x.push_back(v);
    y.push_back(i % 2);
  }
  ClassifierConfig cc;
  cc.hidden1 = 8;
  cc.hidden2 = 8;
  cc.epochs = 2;
  const Classifier clf = train_classifier(x, y, cc);
  cands.push_back(cands[expect.front()]);
  const Ranking r = rank_actions(m, clf, t, cands, c);
  const auto a = std::find(r.order.begin(), r.order.end(), expect.front());
  const auto b = std::find(r.order.begin(), r.order.end(), cands.size() - 1);
  CHECK(std::abs(std::distance(a, b)) == 1);
}

TEST_CASE("dreamed terminals skip invalid placements and check the model") {
  PuzzleConfig c = flat_config();
  const PuzzleTask t = make_task(c, {{0.2, 0.5}, {0.8, 0.5}}, {{0.1, 0}, {0, 0}});
  const std::vector<PlacementAction> cands{{0.5, 0.5, 0.05}, {0.21, 0.5, 0.05}};
  const model::Model m = model::Model::init(tiny_model(c), 2);
  const auto term = dream_terminal(m, t, cands, c);
  CHECK(term[0].size() == static_cast<std::size_t>(c.slots()) * m.config.latent_dim);
  CHECK(term[1].size() == 0);
  CHECK(dream_terminal(m, t, cands, c)[0] == term[0]);
  PuzzleConfig other = c;
  other.resolution = 20;
  CHECK(kind_of([&] { dream_terminal(m, t, cands, other); }) == ErrorKind::SchemaError);
}

TEST_CASE("MEM ranks by training solve counts") {
  const RewardTable train{{0, 1, 1, -1}, {0, 0, 1, 1}, {-1, 1, 1, 0}};
  CHECK(mem_order(train) == std::vector<std::size_t>{2, 1, 3, 0});
  const RewardTable zeros(3, std::vector<int>(4, 0));
  CHECK(mem_order(zeros) == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(kind_of([&] { mem_order(RewardTable{}); }) == ErrorKind::SchemaError);
}

TEST_CASE("RAND draws valid actions reproducibly") {
  const std::vector<int> row{-1, 0, 1, -1, 0};
  const auto a = rand_attempts(row, 100, 5);
  CHECK(a == rand_attempts(row, 100, 5));
  CHECK(a.size() == 100);
  std::set<std::size_t> seen(a.begin(), a.end());
  CHECK(seen == std::set<std::size_t>{1, 2, 4});
  CHECK(rand_attempts(std::vector<int>{-1, -1}, 10, 1).empty());
}

TEST_CASE("success curves") {
  const std::vector<std::uint64_t> seeds{1, 2};
  auto in_order = [](std::size_t, std::uint64_t) { return std::vector<std::size_t>{0, 1, 2, 3}; };
  const RewardTable ones(5, std::vector<int>(4, 1));
  const RewardTable zeros(5, std::vector<int>(4, 0));
  for (double v : success_curve("a", in_order, ones, 10, seeds).solved_fraction) CHECK(v == 1.0);
  for (double v : success_curve("a", in_order, zeros, 10, seeds).solved_fraction) CHECK(v == 0.0);

  // Invalid attempts do not consume budget.
  const RewardTable skip{{-1, -1, 1, 0}};
  CHECK(success_curve("a", in_order, skip, 1, seeds).solved_fraction[0] == 1.0);
  const RewardTable late{{0, 0, 1, 0}};
  const auto c = success_curve("a", in_order, late, 4, seeds);
  CHECK(c.solved_fraction == std::vector<double>{0.0, 0.0, 1.0, 1.0});
  CHECK(kind_of([&] { success_curve("a", in_order, late, 0, seeds); }) == ErrorKind::ConfigError);
}

TEST_CASE("RAND success matches the geometric law") {
  // Each task has 3 solving actions among 10 valid ones.
  RewardTable rewards(1000, std::vector<int>{1, 1, 1, 0, 0, 0, 0, 0, 0, 0, -1});
  for (std::size_t t = 0; t < rewards.size(); ++t) std::rotate(rewards[t].begin(), rewards[t].begin() + t % 11, rewards[t].end());
  const std::vector<std::uint64_t> seeds{7};
  auto agent = [&](std::size_t t, std::uint64_t s) { return rand_attempts(rewards[t], 50, mix_seed(s, t)); };
  const auto curve = success_curve("rand", agent, rewards, 50, seeds);
  const double p = 0.3;
  for (int b : {1, 2, 5, 10}) {
    const double expect = 1.0 - std::pow(1.0 - p, b);
    const double se = std::sqrt(expect * (1.0 - expect) / 1000.0);
    CHECK(std::abs(curve.solved_fraction[b - 1] - expect) <= 3.0 * se);
  }
  for (std::size_t b = 1; b < curve.solved_fraction.size(); ++b)
    CHECK(curve.solved_fraction[b] >= curve.solved_fraction[b - 1]);
}

TEST_CASE("MEM dominates RAND when one action solves everything") {
  RewardTable rewards(40, std::vector<int>(20, 0));
  for (auto& row : rewards) row[7] = 1;
  const auto mem = mem_order(rewards);
  CHECK(mem.front() == 7);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const auto m = success_curve("mem", [&](std::size_t, std::uint64_t) { return mem; }, rewards, 20, seeds);
  const auto r = success_curve(
      "rand", [&](std::size_t t, std::uint64_t s) { return rand_attempts(rewards[t], 20, mix_seed(s, t)); }, rewards, 20,
      seeds);
  for (std::size_t b = 0; b < 20; ++b) CHECK(m.solved_fraction[b] >= r.solved_fraction[b]);
  CHECK(m.solved_fraction[0] == 1.0);
}

TEST_CASE("curve exports") {
  SuccessCurve a{"mem", {0.5, 1.0}, {1}};
  SuccessCurve b{"rand", {0.25, 0.5}, {1}};
  const std::vector<SuccessCurve> both{a, b};
  const std::string csv = curves_to_csv(both);
  CHECK(csv.rfind("agent,budget,solved_fraction\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("rand,2,0.5") != std::string::npos);
  const Json j = curve_to_json(a);
  CHECK(j["agent"] == "mem");
  CHECK(j["solved_fraction"].size() == 2);
}

TEST_CASE("puzzle config validation and strict JSON") {
  PuzzleConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));
  PuzzleConfig bad = c;
  bad.min_balls = 1;
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::ConfigError);
  Json j = config_to_json(c);
  j["unknown"] = 0;
  CHECK(kind_of([&] { config_from_json(j); }) == ErrorKind::ConfigError);
}
