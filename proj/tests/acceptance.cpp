// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--allow-red 7,...]
//
// Exit status is 0 when every selected criterion passes or is listed in
// --allow-red, 1 otherwise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cwm/bytes.hpp"
#include "cwm/commands.hpp"
#include "cwm/metrics.hpp"
#include "cwm/puzzle.hpp"
#include "cwm/world_model.hpp"
#include "dr_monte_carlo.hpp"
#include "model_oracle.hpp"
#include "op_suite.hpp"
#include "rank_oracle.hpp"
#include "tmpdir.hpp"

using namespace cwm;
namespace fs = std::filesystem;
using ad::Tensor;

namespace {

// Tolerances and budgets.
constexpr double kGradRel = 1e-5;
constexpr double kGradFloor = 1e-8;
constexpr int kGradTrials = 100;
constexpr std::size_t kGradCoords = 40;
constexpr double kGradKinkShare = 0.01;
constexpr double kGradSeconds = 120.0;

constexpr int kDrEpisodes = 100000;
constexpr int kDrSeeds = 5;
constexpr double kDrSigmas = 3.0;
constexpr double kDrSeconds = 60.0;

constexpr double kConservationTol = 1e-9;
constexpr int kConservationSteps = 1000;
constexpr int kConservationScenes = 20;

constexpr int kRankInstances = 1000;

constexpr double kDrLossTol = 1e-12;

constexpr double kEquivarianceTol = 1e-9;
constexpr int kEquivarianceInputs = 100;

constexpr int kDreamTrain = 200;
constexpr int kDreamTest = 50;
constexpr int kDreamFrames = 15;
constexpr int kDreamEpochs = 50;
constexpr int kDreamReferences = 10;
constexpr double kDreamStep1Hits = 0.8;
constexpr double kDreamSeconds = 45.0 * 60.0;

constexpr int kPuzzleTestTasks = 20;
constexpr int kPuzzleTrainTasks = 70;
constexpr int kPuzzleCandidates = 200;
constexpr int kPuzzleBudget = 50;
constexpr int kPuzzleEpisodesPerTask = 3;
constexpr int kPuzzleEpochs = 20;
constexpr double kPuzzleSeconds = 30.0 * 60.0;

constexpr double kDensityTol = 1e-6;

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Tensor permute_rows(const Tensor& t, const std::vector<int>& perm) {
  Tensor out(t.shape());
  const std::size_t w = t.size() / perm.size();
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy_n(t.data() + perm[i] * w, w, out.data() + i * w);
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

model::ModelConfig small_config(model::Mode mode, int slots) {
  model::ModelConfig c;
  c.input_channels = slots + 1;
  c.resolution = 10;
  c.slots = slots;
  c.extractor = {{3, 1, 1, 0, model::Activation::LeakyRelu, true}, {0, 5, 5, 0, model::Activation::Sigmoid, false}};
  c.hidden = 8;
  c.confounder_dim = 5;
  c.mode = mode;
  return c;
}

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::size_t trials = 0, failures = 0, kinks = 0, checked = 0;
  double worst = -1.0;
  for (const auto& op : testing::op_names()) {
    for (int i = 0; i < kGradTrials; ++i) {
      const auto r = testing::check_trial(testing::op_trial(op, rng), kGradRel, kGradFloor, 0, rng);
      ++trials;
      failures += r.result.ok() ? 0 : 1;
      kinks += r.kinks;
      checked += r.result.checked;
      worst = std::max(worst, r.result.worst_excess);
    }
  }
  for (auto mode : {model::Mode::WM, model::Mode::CWM, model::Mode::CRM_CWM}) {
    for (int i = 0; i < kGradTrials; ++i) {
      const auto r = testing::check_trial(testing::loss_trial(mode, rng), kGradRel, kGradFloor, kGradCoords, rng);
      ++trials;
      failures += r.result.ok() ? 0 : 1;
      kinks += r.kinks;
      checked += r.result.checked;
      worst = std::max(worst, r.result.worst_excess);
    }
  }
  const double secs = seconds_since(t0);
  const double kink_share = static_cast<double>(kinks) / static_cast<double>(checked + kinks);
  return {failures == 0 && kink_share <= kGradKinkShare && secs < kGradSeconds,
          std::to_string(trials) + " trials, " + std::to_string(failures) + " failed, " + std::to_string(checked) +
              " coords, kinks skipped " + std::to_string(kinks) + ", worst excess " + fmt(worst) + ", " +
              fmt(secs) + " s"};
}

Verdict dr_unbiased() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  double worst = 0.0, model_z = 1e300;
  for (int s = 0; s < kDrSeeds; ++s) {
    const auto r = testing::dr_monte_carlo(mix_seed(2718, s), kDrEpisodes);
    const double z = std::abs(r.dr_bias) / r.dr_se;
    worst = std::max(worst, z);
    model_z = std::min(model_z, std::abs(r.model_bias) / r.model_se);
    ok = ok && z <= kDrSigmas;
  }
  const double secs = seconds_since(t0);
  return {ok && secs < kDrSeconds, "max |bias|/SE " + fmt(worst) + " (model-only min " + fmt(model_z) + "), " +
                                       fmt(secs) + " s"};
}

Verdict conservation() {
  world::EnvConfig env;
  env.balls = 4;
  env.gravity = {0.0, 0.0};
  constexpr double dt = 0.05;
  Rng rng(303);
  double worst_energy = 0.0, worst_momentum = 0.0;
  long events = 0;
  for (int scene = 0; scene < kConservationScenes; ++scene) {
    world::WorldState s = world::sample_initial_state(rng, env);
    world::Confounders u = world::sample_confounders(rng, env, s.size());
    std::fill(u.frictions.begin(), u.frictions.end(), 0.0);
    u.gravity = {0.0, 0.0};
    for (int step = 0; step < kConservationSteps; ++step) {
      const double before = world::kinetic_energy(s, u);
      world::integrate(s, u, dt);
      const world::Vec2 p0 = world::momentum(s, u);
      if (world::resolve_ball_collisions(s, u) > 0) {
        ++events;
        const world::Vec2 p1 = world::momentum(s, u);
        const double scale = std::max(std::hypot(p0.x, p0.y), 1e-12);
        worst_momentum = std::max(worst_momentum, std::hypot(p1.x - p0.x, p1.y - p0.y) / scale);
      }
      world::resolve_walls(s, env.arena);
      worst_energy = std::max(worst_energy, std::abs(world::kinetic_energy(s, u) - before) / before);
    }
  }
  return {worst_energy <= kConservationTol && worst_momentum <= kConservationTol && events > 0,
          std::to_string(kConservationScenes) + " scenes x " + std::to_string(kConservationSteps) +
              " steps, worst energy " + fmt(worst_energy) + ", " + std::to_string(events) +
              " collision steps, worst momentum " + fmt(worst_momentum)};
}

Verdict metric_oracle() {
  Rng rng(404);
  int mismatches = 0;
  std::vector<eval::RankingInstance> all;
  double oracle_mrr = 0.0;
  for (int i = 0; i < kRankInstances; ++i) {
    auto inst = testing::random_instance(rng, i % 2 == 0);
    if (eval::hits_at_1(inst) != (testing::oracle_position(inst, false) == 1 ? 1 : 0)) ++mismatches;
    const int pos = testing::oracle_position(inst, true);
    if (eval::rank_of(inst) != pos) ++mismatches;
    oracle_mrr += 1.0 / pos;
    all.push_back(std::move(inst));
  }
  oracle_mrr /= kRankInstances;
  const double got = eval::mrr(all);
  const bool mrr_ok = std::abs(got - oracle_mrr) <= 4 * std::numeric_limits<double>::epsilon();
  return {mismatches == 0 && mrr_ok, std::to_string(kRankInstances) + " instances, " + std::to_string(mismatches) +
                                         " mismatches, MRR " + fmt(got) + " vs " + fmt(oracle_mrr)};
}

Verdict loss_algebra() {
  auto c = small_config(model::Mode::WM, 1);
  c.latent_dim = 1;
  auto m = model::Model::init(c, 1);
  for (const char* n : {"node.fc3.w", "node.fc3.b"})
    for (auto& v : m.param(n).values()) v = 0.0;
  auto t1 = [](double v) { return Tensor({1, 1}, v); };

  bool ok = true;
  // Worked example: prediction 1.0, truth 1.3, negative 2.3; H~ = 2 >= gamma.
  const double h = 2.0 * ((1.3 - 1.0) * (1.3 - 1.0));
  ok = ok && model::hinge_loss(m, t1(1.0), t1(1.3), t1(2.3), nullptr) == h;
  ok = ok && std::abs(h - 0.18) < 1e-15;
  // Negative at the truth: H~ = 0.
  ok = ok && model::hinge_loss(m, t1(1.0), t1(1.3), t1(1.3), nullptr) == h + 1.0;
  const double hn = 2.0 * ((1.3 - 1.5) * (1.3 - 1.5));
  ok = ok && model::hinge_loss(m, t1(1.0), t1(1.3), t1(1.5), nullptr) == h + (1.0 - hn);

  Rng rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(3));
    const auto dc = small_config(model::Mode::CRM_CWM, k);
    const auto dm = model::Model::init(dc, rng.next_u64());
    std::vector<model::DrSample> batch;
    const int n = 2 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i)
      batch.push_back({random_tensor({k, 4}, rng), random_tensor({k, 4}, rng), random_tensor({k, 4}, rng),
                       random_tensor({k, 5}, rng), random_tensor({k, 4}, rng, -0.5, 0.5)});
    std::vector<Tensor> s0s;
    for (const auto& b : batch) s0s.push_back(b.s0);
    const auto prop = model::fit_propensity(s0s);
    double expected = 0.0;
    for (const auto& b : batch) {
      const double w = std::min(10.0, 1.0 / prop.density(b.s0));
      const Tensor f = testing::oracle_delta(dm, b.s_t, &b.u);
      Tensor s_dr(b.s_t.shape());
      for (std::size_t i = 0; i < s_dr.size(); ++i) s_dr[i] = w * (b.s_next[i] - b.s_t[i] - f[i]) + (b.s_t[i] + f[i]);
      expected += testing::oracle_energy(dc, s_dr, b.s_next) +
                  std::max(0.0, dc.gamma - testing::oracle_energy(dc, b.s_neg, b.s_next));
    }
    expected /= static_cast<double>(batch.size());
    worst = std::max(worst, std::abs(model::dr_loss(dm, batch, prop) - expected));
  }
  return {ok && worst <= kDrLossTol,
          std::string("hinge identities ") + (ok ? "exact" : "violated") + ", DR loss max diff " + fmt(worst)};
}

Verdict equivariance() {
  Rng rng(606);
  double worst = 0.0;
  int inputs = 0;
  for (int k = 2; k <= 6; ++k) {
    for (auto mode : {model::Mode::WM, model::Mode::CWM}) {
      const auto c = small_config(mode, k);
      const auto m = model::Model::init(c, mix_seed(606, k));
      for (int trial = 0; trial < kEquivarianceInputs; ++trial, ++inputs) {
        const Tensor s = random_tensor({k, c.latent_dim}, rng);
        const Tensor u = random_tensor({k, c.confounder_dim}, rng);
        const Tensor* up = mode == model::Mode::WM ? nullptr : &u;
        const Tensor delta = model::transition_delta(m, s, up);
        std::vector<int> perm(k);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = k - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        const Tensor ps = permute_rows(s, perm), pu = permute_rows(u, perm);
        const Tensor pd = model::transition_delta(m, ps, up ? &pu : nullptr);
        worst = std::max(worst, max_abs_diff(pd, permute_rows(delta, perm)));
      }
    }
  }
  return {worst <= kEquivarianceTol, std::to_string(inputs) + " inputs over K=2..6, max diff " + fmt(worst)};
}

struct DreamScore {
  double step1_hits = 0.0;
  double mean_mrr = 0.0;
  double mse = 0.0;
};

Verdict dream_quality() {
  const auto t0 = std::chrono::steady_clock::now();
  const model::Mode modes[] = {model::Mode::WM, model::Mode::CWM, model::Mode::CRM_CWM};
  world::EnvConfig env;
  env.balls = 2;
  env.horizon_factual = kDreamFrames;
  env.horizon_cf = kDreamFrames;
  std::vector<std::array<DreamScore, 3>> scores;
  for (const auto seed : kSeeds) {
    std::vector<world::EpisodePair> train, test;
    for (int i = 0; i < kDreamTrain; ++i)
      train.push_back(world::generate_episode_pair(cli::episode_seed(seed, store::Split::Train, i), env));
    for (int i = 0; i < kDreamTest; ++i)
      test.push_back(world::generate_episode_pair(cli::episode_seed(seed, store::Split::Test, i), env));
    std::array<DreamScore, 3> row;
    for (int m = 0; m < 3; ++m) {
      model::TrainConfig tc;
      tc.epochs = kDreamEpochs;
      tc.seed = seed;
      const auto r = model::train(train, model::desk_config(env.balls, env.resolution, modes[m]), tc);
      const auto rep = eval::evaluate_rollout(r.trained.model, test, kDreamFrames - 1, kDreamReferences, seed);
      row[m] = {rep.hits_at_1[0], std::accumulate(rep.mrr.begin(), rep.mrr.end(), 0.0) / rep.mrr.size(),
                rep.mse_mean};
      std::printf("  seed %llu %-7s step-1 H@1 %.3f  MRR %.4f  MSE %.5f\n", static_cast<unsigned long long>(seed),
                  std::string(model::to_string(modes[m])).c_str(), row[m].step1_hits, row[m].mean_mrr, row[m].mse);
      std::fflush(stdout);
    }
    scores.push_back(row);
  }
  bool hits_ok = true;
  int mrr_wins = 0;
  double mse[3] = {0, 0, 0};
  for (const auto& row : scores) {
    hits_ok = hits_ok && row[1].step1_hits >= kDreamStep1Hits;
    mrr_wins += row[1].mean_mrr >= row[0].mean_mrr ? 1 : 0;
    for (int m = 0; m < 3; ++m) mse[m] += row[m].mse / static_cast<double>(scores.size());
  }
  const bool order_ok = mse[2] <= mse[1] && mse[1] <= mse[0];
  const double secs = seconds_since(t0);
  return {hits_ok && mrr_wins >= 2 && order_ok && secs < kDreamSeconds,
          std::string("(a) step-1 H@1 ") + (hits_ok ? "ok" : "low") + ", (b) CWM>=WM MRR on " +
              std::to_string(mrr_wins) + "/3, (c) mean MSE CRM-CWM " + fmt(mse[2]) + " CWM " + fmt(mse[1]) +
              " WM " + fmt(mse[0]) + (order_ok ? " ordered" : " not ordered") + ", " + fmt(secs) + " s"};
}

Verdict dream_usability() {
  const auto t0 = std::chrono::steady_clock::now();
  puzzle::PuzzleConfig pc;
  pc.train_tasks = kPuzzleTrainTasks;
  pc.test_tasks = kPuzzleTestTasks;
  pc.candidates = kPuzzleCandidates;
  std::vector<double> mem(kPuzzleBudget, 0.0), rnd(kPuzzleBudget, 0.0);
  int wins = 0;
  for (const auto seed : kSeeds) {
    const auto set = puzzle::generate_task_set(pc, seed);
    const auto train_rewards = puzzle::reward_table(set.train, set.candidates, pc);
    const auto episodes = puzzle::task_episodes(set, train_rewards, kPuzzleEpisodesPerTask, seed);
    model::TrainConfig tc;
    tc.epochs = kPuzzleEpochs;
    tc.seed = seed;
    const auto r = model::train(episodes, model::desk_config(pc.slots(), pc.resolution, model::Mode::CWM), tc);
    const puzzle::ClassifierConfig cc{256, 128, 30, 128, 3e-4, seed};
    const std::vector<std::uint64_t> seeds{seed};
    const auto curves = puzzle::compare_agents(r.trained.model, set, cc, kPuzzleBudget, seeds);
    for (int b = 0; b < kPuzzleBudget; ++b) {
      mem[b] += curves.mem.solved_fraction[b] / static_cast<double>(kSeeds.size());
      rnd[b] += curves.rand.solved_fraction[b] / static_cast<double>(kSeeds.size());
    }
    const double c10 = curves.cwm.solved_fraction[9], m10 = curves.mem.solved_fraction[9];
    wins += c10 >= m10 ? 1 : 0;
    std::printf("  seed %llu  b1 CWM %.2f MEM %.2f RAND %.2f  b10 CWM %.2f MEM %.2f RAND %.2f\n",
                static_cast<unsigned long long>(seed), curves.cwm.solved_fraction[0], curves.mem.solved_fraction[0],
                curves.rand.solved_fraction[0], c10, m10, curves.rand.solved_fraction[9]);
    std::fflush(stdout);
  }
  int dominated = 0;
  for (int b = 0; b < kPuzzleBudget; ++b) dominated += mem[b] >= rnd[b] ? 1 : 0;
  const double secs = seconds_since(t0);
  return {dominated == kPuzzleBudget && wins >= 2 && secs < kPuzzleSeconds,
          "MEM>=RAND at " + std::to_string(dominated) + "/" + std::to_string(kPuzzleBudget) +
              " budgets, CWM>=MEM at b10 on " + std::to_string(wins) + "/3 seeds, " + fmt(secs) + " s"};
}

bool same_tree(const fs::path& a, const fs::path& b, int& files) {
  std::set<fs::path> names;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), a));
  std::size_t other = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) other += e.is_regular_file() ? 1 : 0;
  if (other != names.size()) return false;
  for (const auto& n : names) {
    if (!fs::exists(b / n) || bytes::read_text(a / n) != bytes::read_text(b / n)) return false;
    ++files;
  }
  return true;
}

Verdict determinism() {
  cli::RunConfig c;
  c.seed = 77;
  c.env.balls = 2;
  c.env.horizon_factual = 10;
  c.env.horizon_cf = 10;
  c.train_episodes = 30;
  c.test_episodes = 10;
  c.mode = model::Mode::CRM_CWM;
  c.train.epochs = 2;
  c.train.seed = c.seed;
  c.eval.horizon = 9;
  testing::TempDir a("accept_a"), b("accept_b");
  for (const auto* d : {&a, &b}) {
    cli::cmd_gen(c, d->path() / "data");
    cli::cmd_train(c, d->path() / "data" / "train", *d / "model.cwmm", nullptr);
    cli::cmd_eval(c, *d / "model.cwmm", d->path() / "data" / "test", *d / "report.json", std::nullopt);
  }
  int files = 0;
  const bool ok = same_tree(a.path(), b.path(), files);
  return {ok, std::to_string(files) + " files compared" + (ok ? ", identical" : ", differ")};
}

Verdict propensity() {
  Rng rng(1010);
  double worst_integral = 0.0;
  bool means_exact = true;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Tensor> xs;
    const int n = 5 + static_cast<int>(rng.below(60));
    const double mu = rng.uniform(-2.0, 2.0), sd = rng.uniform(0.05, 2.0);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      xs.push_back(Tensor({1}, mu + sd * rng.normal()));
      sum += xs.back()[0];
    }
    const auto q = model::fit_propensity(xs);
    means_exact = means_exact && q.mean[0] == sum / n;
    const double s = std::sqrt(q.variance[0]);
    const int steps = 200000;
    const double lo = q.mean[0] - 10 * s, h = 20 * s / steps;
    double integral = 0.0;
    for (int i = 0; i <= steps; ++i) {
      const std::vector<double> x{lo + i * h};
      integral += (i == 0 || i == steps ? 0.5 : 1.0) * q.density(x);
    }
    worst_integral = std::max(worst_integral, std::abs(integral * h - 1.0));
  }
  return {worst_integral <= kDensityTol && means_exact,
          "worst |integral - 1| " + fmt(worst_integral) + ", means " + (means_exact ? "exact" : "inexact")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::vector<int> only, allow_red;
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  app.add_option("--allow-red", allow_red, "criteria whose failure does not fail the run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradients},     {"DR unbiasedness", dr_unbiased},
      {"simulator conservation", conservation}, {"metric oracle equivalence", metric_oracle},
      {"loss algebra", loss_algebra},           {"permutation equivariance", equivariance},
      {"dream quality", dream_quality},         {"dream usability", dream_usability},
      {"end-to-end determinism", determinism},  {"propensity sanity", propensity},
  };
  int blocking = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const bool tolerated = std::find(allow_red.begin(), allow_red.end(), id) != allow_red.end();
    if (!v.pass && !tolerated) ++blocking;
    std::printf("%s %2d %s: %s%s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str(),
                !v.pass && tolerated ? " [allowed red]" : "");
    std::fflush(stdout);
  }
  return blocking == 0 ? 0 : 1;
}
