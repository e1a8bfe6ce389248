#include "cwm/ball_world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cwm/error.hpp"

namespace cwm::world {

namespace {

bool finite(Vec2 v) { return std::isfinite(v.x) && std::isfinite(v.y); }

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

bool inside(Vec2 p, double r, const Arena& arena) {
  return p.x - r >= 0.0 && p.x + r <= arena.width && p.y - r >= 0.0 && p.y + r <= arena.height;
}

bool overlaps_any(const WorldState& state, std::size_t skip, Vec2 p, double r) {
  for (std::size_t j = 0; j < state.size(); ++j) {
    if (j == skip || !state.alive[j]) continue;
    const Vec2 d = state.positions[j] - p;
    const double reach = r + state.radii[j];
    if (dot(d, d) < reach * reach) return true;
  }
  return false;
}

void check_range(const Range& r, const char* name, bool allow_equal = true) {
  if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.hi < r.lo || (!allow_equal && r.hi == r.lo))
    throw Error(ErrorKind::ConfigError, std::string("empty or invalid range for ") + name);
}

}  // namespace

std::size_t WorldState::alive_count() const {
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), true));
}

void EnvConfig::validate() const {
  if (balls < 1 || balls > 8) throw Error(ErrorKind::ConfigError, "balls must be in [1,8]");
  if (horizon_factual < 2 || horizon_cf < 2)
    throw Error(ErrorKind::ConfigError, "horizons must be >= 2");
  if (resolution < 8) throw Error(ErrorKind::ConfigError, "resolution must be >= 8");
  check_range(mass, "mass");
  check_range(friction, "friction");
  check_range(radius, "radius");
  check_range(speed, "speed");
  check_range(gravity_magnitude, "gravity_magnitude");
  if (mass.lo <= 0.0) throw Error(ErrorKind::ConfigError, "masses must be positive");
  if (friction.lo < 0.0 || friction.hi >= 1.0)
    throw Error(ErrorKind::ConfigError, "friction must lie in [0,1)");
  if (radius.lo <= 0.0) throw Error(ErrorKind::ConfigError, "radii must be positive");
  if (speed.lo < 0.0) throw Error(ErrorKind::ConfigError, "speed must be non-negative");
  if (!(arena.width > 2 * radius.hi) || !(arena.height > 2 * radius.hi))
    throw Error(ErrorKind::ConfigError, "arena too small for radius range");
  if (!finite(gravity)) throw Error(ErrorKind::ConfigError, "gravity must be finite");
  if (removal_prob < 0.0 || removal_prob > 1.0)
    throw Error(ErrorKind::ConfigError, "removal_prob must lie in [0,1]");
  if (!(displacement_radius > 0.0)) throw Error(ErrorKind::ConfigError, "displacement_radius must be > 0");
  if (!(frame_dt > 0.0) || substeps < 1) throw Error(ErrorKind::ConfigError, "frame_dt > 0 and substeps >= 1 required");
  if (placement_retries < 1) throw Error(ErrorKind::ConfigError, "placement_retries must be >= 1");
}

void validate_state(const WorldState& state) {
  const std::size_t k = state.positions.size();
  if (state.velocities.size() != k || state.radii.size() != k || state.alive.size() != k)
    throw Error(ErrorKind::InvalidState, "state arrays differ in length");
  for (std::size_t i = 0; i < k; ++i) {
    if (!finite(state.positions[i]) || !finite(state.velocities[i]) || !std::isfinite(state.radii[i]))
      throw Error(ErrorKind::InvalidState, "non-finite value for ball " + std::to_string(i));
    if (!(state.radii[i] > 0.0)) throw Error(ErrorKind::InvalidState, "radius must be positive");
  }
}

void validate_confounders(const Confounders& u, std::size_t balls) {
  if (u.masses.size() != balls || u.frictions.size() != balls)
    throw Error(ErrorKind::InvalidState, "confounder arrays do not match ball count");
  if (!finite(u.gravity)) throw Error(ErrorKind::InvalidState, "non-finite gravity");
  for (std::size_t i = 0; i < balls; ++i) {
    if (!std::isfinite(u.masses[i]) || !(u.masses[i] > 0.0))
      throw Error(ErrorKind::InvalidState, "mass must be positive and finite");
    if (!std::isfinite(u.frictions[i]) || u.frictions[i] < 0.0 || u.frictions[i] >= 1.0)
      throw Error(ErrorKind::InvalidState, "friction must lie in [0,1)");
  }
}

void integrate(WorldState& state, const Confounders& u, double dt) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!state.alive[i]) continue;
    Vec2 v = state.velocities[i] + dt * u.gravity;
    v = (1.0 - u.frictions[i] * dt) * v;
    state.velocities[i] = v;
    state.positions[i] = state.positions[i] + dt * v;
  }
}

int resolve_ball_collisions(WorldState& state, const Confounders& u) {
  int impulses = 0;
  const std::size_t k = state.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (!state.alive[i]) continue;
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!state.alive[j]) continue;
      const Vec2 d = state.positions[j] - state.positions[i];
      const double reach = state.radii[i] + state.radii[j];
      const double dist2 = dot(d, d);
      if (dist2 >= reach * reach) continue;
      const double dist = std::sqrt(dist2);
      const Vec2 n = dist > 0.0 ? (1.0 / dist) * d : Vec2{1.0, 0.0};
      const double inv_i = 1.0 / u.masses[i];
      const double inv_j = 1.0 / u.masses[j];
      const double inv_sum = inv_i + inv_j;

      // Separate along the normal in inverse-mass proportion (centre of mass fixed).
      const double overlap = reach - dist;
      state.positions[i] = state.positions[i] - (overlap * inv_i / inv_sum) * n;
      state.positions[j] = state.positions[j] + (overlap * inv_j / inv_sum) * n;

      const double approach = dot(state.velocities[j] - state.velocities[i], n);
      if (approach >= 0.0) continue;
      const double impulse = -2.0 * approach / inv_sum;
      state.velocities[i] = state.velocities[i] - (impulse * inv_i) * n;
      state.velocities[j] = state.velocities[j] + (impulse * inv_j) * n;
      ++impulses;
    }
  }
  return impulses;
}

void resolve_walls(WorldState& state, const Arena& arena) {
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!state.alive[i]) continue;
    const double r = state.radii[i];
    Vec2& p = state.positions[i];
    Vec2& v = state.velocities[i];
    if (p.x - r < 0.0) {
      p.x = 2.0 * r - p.x;
      v.x = std::abs(v.x);
    } else if (p.x + r > arena.width) {
      p.x = 2.0 * (arena.width - r) - p.x;
      v.x = -std::abs(v.x);
    }
    if (p.y - r < 0.0) {
      p.y = 2.0 * r - p.y;
      v.y = std::abs(v.y);
    } else if (p.y + r > arena.height) {
      p.y = 2.0 * (arena.height - r) - p.y;
      v.y = -std::abs(v.y);
    }
    p.x = std::clamp(p.x, r, arena.width - r);
    p.y = std::clamp(p.y, r, arena.height - r);
  }
}

WorldState step_world(const WorldState& state, const Confounders& u, double dt, const Arena& arena) {
  validate_state(state);
  validate_confounders(u, state.size());
  if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorKind::InvalidState, "dt must be positive");
  WorldState next = state;
  integrate(next, u, dt);
  resolve_ball_collisions(next, u);
  resolve_walls(next, arena);
  return next;
}

std::vector<WorldState> rollout(const WorldState& initial, const Confounders& u, const EnvConfig& cfg,
                                int frames) {
  std::vector<WorldState> out;
  out.reserve(static_cast<std::size_t>(std::max(frames, 0)));
  if (frames <= 0) return out;
  const double dt = cfg.frame_dt / cfg.substeps;
  WorldState s = initial;
  out.push_back(s);
  for (int f = 1; f < frames; ++f) {
    for (int k = 0; k < cfg.substeps; ++k) s = step_world(s, u, dt, cfg.arena);
    out.push_back(s);
  }
  return out;
}

bool intervention_valid(const WorldState& state, const Intervention& iv, const Arena& arena) {
  if (iv.ball_index >= state.size()) return false;
  const std::size_t i = iv.ball_index;
  switch (iv.kind) {
    case InterventionKind::Removal:
      return state.alive[i];
    case InterventionKind::Displacement: {
      if (!state.alive[i] || !finite(iv.offset)) return false;
      const Vec2 p = state.positions[i] + iv.offset;
      return inside(p, state.radii[i], arena) && !overlaps_any(state, i, p, state.radii[i]);
    }
    case InterventionKind::Placement:
      if (state.alive[i] || !finite(iv.offset) || !(iv.radius > 0.0)) return false;
      return inside(iv.offset, iv.radius, arena) && !overlaps_any(state, i, iv.offset, iv.radius);
  }
  return false;
}

WorldState apply_intervention(const WorldState& state, const Intervention& iv, const Arena& arena) {
  validate_state(state);
  if (iv.ball_index >= state.size())
    throw Error(ErrorKind::InvalidIntervention, "ball index " + std::to_string(iv.ball_index) + " out of range");
  if (!intervention_valid(state, iv, arena))
    throw Error(ErrorKind::InvalidIntervention, "intervention leaves the ball overlapping or outside the arena");
  WorldState out = state;
  const std::size_t i = iv.ball_index;
  switch (iv.kind) {
    case InterventionKind::Removal:
      out.alive[i] = false;
      out.velocities[i] = {};
      break;
    case InterventionKind::Displacement:
      out.positions[i] = out.positions[i] + iv.offset;
      break;
    case InterventionKind::Placement:
      out.alive[i] = true;
      out.positions[i] = iv.offset;
      out.velocities[i] = {};
      out.radii[i] = iv.radius;
      break;
  }
  return out;
}

Confounders sample_confounders(Rng& rng, const EnvConfig& cfg, std::size_t balls) {
  Confounders u;
  u.masses.resize(balls);
  u.frictions.resize(balls);
  for (std::size_t i = 0; i < balls; ++i) {
    u.masses[i] = to_f32(rng.uniform(cfg.mass.lo, cfg.mass.hi));
    u.frictions[i] = to_f32(rng.uniform(cfg.friction.lo, cfg.friction.hi));
  }
  if (cfg.randomize_gravity) {
    const double mag = rng.uniform(cfg.gravity_magnitude.lo, cfg.gravity_magnitude.hi);
    const double angle = -std::numbers::pi / 2 + rng.uniform(-cfg.gravity_angle_jitter, cfg.gravity_angle_jitter);
    u.gravity = {to_f32(mag * std::cos(angle)), to_f32(mag * std::sin(angle))};
  } else {
    u.gravity = {to_f32(cfg.gravity.x), to_f32(cfg.gravity.y)};
  }
  return u;
}

WorldState sample_initial_state(Rng& rng, const EnvConfig& cfg) {
  const auto k = static_cast<std::size_t>(cfg.balls);
  WorldState s;
  s.positions.resize(k);
  s.velocities.resize(k);
  s.radii.resize(k);
  s.alive.assign(k, false);
  for (std::size_t i = 0; i < k; ++i) {
    const double r = to_f32(rng.uniform(cfg.radius.lo, cfg.radius.hi));
    bool placed = false;
    for (int attempt = 0; attempt < cfg.placement_retries && !placed; ++attempt) {
      const Vec2 p{to_f32(rng.uniform(r, cfg.arena.width - r)), to_f32(rng.uniform(r, cfg.arena.height - r))};
      if (overlaps_any(s, k, p, r)) continue;
      s.positions[i] = p;
      s.radii[i] = r;
      s.alive[i] = true;
      placed = true;
    }
    if (!placed) throw Error(ErrorKind::GenerationFailed, "could not place ball " + std::to_string(i));
    const double speed = rng.uniform(cfg.speed.lo, cfg.speed.hi);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    s.velocities[i] = {to_f32(speed * std::cos(angle)), to_f32(speed * std::sin(angle))};
  }
  return s;
}

Intervention sample_intervention(Rng& rng, const WorldState& state, const EnvConfig& cfg) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state.alive[i]) live.push_back(i);
  if (live.empty()) throw Error(ErrorKind::GenerationFailed, "no live ball to intervene on");

  Intervention iv;
  if (rng.uniform() < cfg.removal_prob) {
    iv.kind = InterventionKind::Removal;
    iv.ball_index = live[rng.below(live.size())];
    return iv;
  }
  iv.kind = InterventionKind::Displacement;
  for (int attempt = 0; attempt < cfg.placement_retries; ++attempt) {
    iv.ball_index = live[rng.below(live.size())];
    const double rho = cfg.displacement_radius * std::sqrt(rng.uniform());
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    iv.offset = {to_f32(rho * std::cos(angle)), to_f32(rho * std::sin(angle))};
    if (intervention_valid(state, iv, cfg.arena)) return iv;
  }
  throw Error(ErrorKind::GenerationFailed, "no valid intervention within retry budget");
}

WorldState quantize(const WorldState& state) {
  WorldState q = state;
  for (std::size_t i = 0; i < q.size(); ++i) {
    q.positions[i] = {to_f32(q.positions[i].x), to_f32(q.positions[i].y)};
    q.velocities[i] = {to_f32(q.velocities[i].x), to_f32(q.velocities[i].y)};
    q.radii[i] = to_f32(q.radii[i]);
  }
  return q;
}

EpisodePair generate_episode_pair(std::uint64_t seed, const EnvConfig& cfg) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0));
  EpisodePair ep;
  ep.seed = seed;
  ep.confounders = sample_confounders(rng, cfg, static_cast<std::size_t>(cfg.balls));
  const WorldState initial = sample_initial_state(rng, cfg);
  ep.intervention = sample_intervention(rng, initial, cfg);
  const WorldState cf_initial = apply_intervention(initial, ep.intervention, cfg.arena);

  for (const auto& s : rollout(initial, ep.confounders, cfg, cfg.horizon_factual))
    ep.factual_states.push_back(quantize(s));
  for (const auto& s : rollout(cf_initial, ep.confounders, cfg, cfg.horizon_cf))
    ep.cf_states.push_back(quantize(s));
  for (const auto& s : ep.factual_states) ep.factual_obs.push_back(render(s, cfg.resolution, cfg.arena));
  for (const auto& s : ep.cf_states) ep.cf_obs.push_back(render(s, cfg.resolution, cfg.arena));
  return ep;
}

Observation render(const WorldState& state, int resolution, const Arena& arena) {
  constexpr int kSub = 4;
  const int k = static_cast<int>(state.size());
  Observation obs;
  obs.channels = k + 1;
  obs.height = resolution;
  obs.width = resolution;
  const std::size_t plane = static_cast<std::size_t>(resolution) * resolution;
  obs.grid.assign(plane * obs.channels, 0.0f);
  const double px = arena.width / resolution;
  const double py = arena.height / resolution;

  std::vector<double> total(plane, 0.0);
  for (int b = 0; b < k; ++b) {
    if (!state.alive[b]) continue;
    const Vec2 c = state.positions[b];
    const double r = state.radii[b];
    const int col_lo = std::max(0, static_cast<int>(std::floor((c.x - r) / px)));
    const int col_hi = std::min(resolution - 1, static_cast<int>(std::floor((c.x + r) / px)));
    // Row 0 is the top of the arena.
    const int row_lo = std::max(0, static_cast<int>(std::floor((arena.height - (c.y + r)) / py)));
    const int row_hi = std::min(resolution - 1, static_cast<int>(std::floor((arena.height - (c.y - r)) / py)));
    float* channel = obs.grid.data() + plane * b;
    bool painted = false;
    for (int row = row_lo; row <= row_hi; ++row) {
      for (int col = col_lo; col <= col_hi; ++col) {
        int hits = 0;
        for (int sy = 0; sy < kSub; ++sy) {
          const double y = arena.height - (row + (sy + 0.5) / kSub) * py;
          for (int sx = 0; sx < kSub; ++sx) {
            const double x = (col + (sx + 0.5) / kSub) * px;
            const double dx = x - c.x;
            const double dy = y - c.y;
            if (dx * dx + dy * dy <= r * r) ++hits;
          }
        }
        if (hits == 0) continue;
        const double cov = static_cast<double>(hits) / (kSub * kSub);
        channel[static_cast<std::size_t>(row) * resolution + col] = static_cast<float>(cov);
        total[static_cast<std::size_t>(row) * resolution + col] += cov;
        painted = true;
      }
    }
    if (!painted) {
      const int col = std::clamp(static_cast<int>(std::floor(c.x / px)), 0, resolution - 1);
      const int row = std::clamp(static_cast<int>(std::floor((arena.height - c.y) / py)), 0, resolution - 1);
      const double cov = std::min(1.0, std::numbers::pi * r * r / (px * py));
      channel[static_cast<std::size_t>(row) * resolution + col] = static_cast<float>(cov);
      total[static_cast<std::size_t>(row) * resolution + col] += cov;
    }
  }
  float* background = obs.grid.data() + plane * k;
  for (std::size_t p = 0; p < plane; ++p) background[p] = static_cast<float>(std::max(0.0, 1.0 - total[p]));
  return obs;
}

double kinetic_energy(const WorldState& state, const Confounders& u) {
  double e = 0.0;
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state.alive[i]) e += 0.5 * u.masses[i] * dot(state.velocities[i], state.velocities[i]);
  return e;
}

Vec2 momentum(const WorldState& state, const Confounders& u) {
  Vec2 p;
  for (std::size_t i = 0; i < state.size(); ++i)
    if (state.alive[i]) p = p + u.masses[i] * state.velocities[i];
  return p;
}

}  // namespace cwm::world
