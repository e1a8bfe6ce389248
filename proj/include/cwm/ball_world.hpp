#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cwm/rng.hpp"

namespace cwm::world {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct Arena {
  double width = 1.0;
  double height = 1.0;
};

/// Ground-truth physical state of K balls at one instant.
struct WorldState {
  std::vector<Vec2> positions;
  std::vector<Vec2> velocities;
  std::vector<double> radii;
  std::vector<bool> alive;

  std::size_t size() const { return positions.size(); }
  std::size_t alive_count() const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

/// Hidden per-episode physical parameters. Never rendered.
struct Confounders {
  std::vector<double> masses;
  std::vector<double> frictions;
  Vec2 gravity;

  friend bool operator==(const Confounders&, const Confounders&) = default;
};

enum class InterventionKind : std::uint32_t { Removal = 0, Displacement = 1, Placement = 2 };

/// A do-operation applied to the t=0 state. Placement inserts a ball into a
/// dead slot at `offset` with `radius`; it is used by the puzzle harness.
struct Intervention {
  InterventionKind kind = InterventionKind::Removal;
  std::size_t ball_index = 0;
  Vec2 offset;  // displacement, or absolute position for Placement
  double radius = 0.0;

  friend bool operator==(const Intervention&, const Intervention&) = default;
};

/// C x H x W coverage grid: channel i is ball i, the last channel is background.
struct Observation {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> grid;

  float at(int c, int row, int col) const {
    return grid[(static_cast<std::size_t>(c) * height + row) * width + col];
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

struct EnvConfig {
  int balls = 2;
  int horizon_factual = 29;
  int horizon_cf = 29;
  int resolution = 50;
  Range mass{0.5, 2.0};
  Range friction{0.0, 0.2};
  Range radius{0.04, 0.08};
  Range speed{0.05, 0.4};
  Vec2 gravity{0.0, -0.5};
  bool randomize_gravity = false;
  Range gravity_magnitude{0.25, 0.75};
  double gravity_angle_jitter = 0.5;  // radians around straight down
  Arena arena;
  double removal_prob = 0.5;
  double displacement_radius = 0.2;
  double frame_dt = 0.1;
  int substeps = 4;
  int placement_retries = 1000;

  /// Throws ConfigError when a field is out of its domain.
  void validate() const;
};

struct EpisodePair {
  Confounders confounders;
  std::vector<WorldState> factual_states;
  std::vector<Observation> factual_obs;
  Intervention intervention;
  std::vector<WorldState> cf_states;
  std::vector<Observation> cf_obs;
  std::uint64_t seed = 0;

  friend bool operator==(const EpisodePair&, const EpisodePair&) = default;
};

void validate_state(const WorldState& state);
void validate_confounders(const Confounders& u, std::size_t balls);

// Stages of one simulation step; step_world runs them in this order.
void integrate(WorldState& state, const Confounders& u, double dt);
/// Returns the number of pairwise impulses applied.
int resolve_ball_collisions(WorldState& state, const Confounders& u);
void resolve_walls(WorldState& state, const Arena& arena);

/// One semi-implicit Euler step with elastic ball and wall collisions.
WorldState step_world(const WorldState& state, const Confounders& u, double dt,
                      const Arena& arena = {});

/// `frames - 1` frame advances from `initial`, each frame being cfg.substeps steps.
std::vector<WorldState> rollout(const WorldState& initial, const Confounders& u,
                                const EnvConfig& cfg, int frames);

bool intervention_valid(const WorldState& state, const Intervention& iv, const Arena& arena = {});
WorldState apply_intervention(const WorldState& state, const Intervention& iv,
                              const Arena& arena = {});

Confounders sample_confounders(Rng& rng, const EnvConfig& cfg, std::size_t balls);
WorldState sample_initial_state(Rng& rng, const EnvConfig& cfg);
Intervention sample_intervention(Rng& rng, const WorldState& state, const EnvConfig& cfg);

EpisodePair generate_episode_pair(std::uint64_t seed, const EnvConfig& cfg);

/// Coverage raster with 4x4 supersampling; channels = balls + 1.
Observation render(const WorldState& state, int resolution, const Arena& arena = {});

double kinetic_energy(const WorldState& state, const Confounders& u);
Vec2 momentum(const WorldState& state, const Confounders& u);

/// Rounds every stored quantity through f32 (what the dataset container keeps).
WorldState quantize(const WorldState& state);

}  // namespace cwm::world
