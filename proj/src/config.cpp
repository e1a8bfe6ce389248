#include "cwm/config.hpp"

#include <array>

namespace cwm {

namespace {

Json range_json(world::Range r) { return Json::array({r.lo, r.hi}); }
Json vec_json(world::Vec2 v) { return Json::array({v.x, v.y}); }

void read_pair(JsonFields& f, const char* key, double& a, double& b) {
  std::array<double, 2> v{a, b};
  f.get(key, v);
  a = v[0];
  b = v[1];
}

Json conv_json(const model::ConvSpec& s) {
  Json j;
  j["channels"] = s.channels;
  j["kernel"] = s.kernel;
  j["stride"] = s.stride;
  j["pad"] = s.pad;
  j["act"] = std::string(model::to_string(s.act));
  j["norm"] = s.norm;
  return j;
}

model::ConvSpec conv_from_json(const Json& j, std::size_t i) {
  model::ConvSpec s;
  JsonFields f(j, "model.extractor[" + std::to_string(i) + "]");
  f.get("channels", s.channels);
  f.get("kernel", s.kernel);
  f.get("stride", s.stride);
  f.get("pad", s.pad);
  std::string act(model::to_string(s.act));
  f.get("act", act);
  s.act = model::activation_from_string(act);
  f.get("norm", s.norm);
  f.finish();
  return s;
}

}  // namespace

Json env_to_json(const world::EnvConfig& c) {
  Json j;
  j["balls"] = c.balls;
  j["horizon_factual"] = c.horizon_factual;
  j["horizon_cf"] = c.horizon_cf;
  j["resolution"] = c.resolution;
  j["mass"] = range_json(c.mass);
  j["friction"] = range_json(c.friction);
  j["radius"] = range_json(c.radius);
  j["speed"] = range_json(c.speed);
  j["gravity"] = vec_json(c.gravity);
  j["randomize_gravity"] = c.randomize_gravity;
  j["gravity_magnitude"] = range_json(c.gravity_magnitude);
  j["gravity_angle_jitter"] = c.gravity_angle_jitter;
  j["arena"] = Json::array({c.arena.width, c.arena.height});
  j["removal_prob"] = c.removal_prob;
  j["displacement_radius"] = c.displacement_radius;
  j["frame_dt"] = c.frame_dt;
  j["substeps"] = c.substeps;
  j["placement_retries"] = c.placement_retries;
  return j;
}

world::EnvConfig env_from_json(const Json& j) {
  world::EnvConfig c;
  JsonFields f(j, "env");
  f.get("balls", c.balls);
  f.get("horizon_factual", c.horizon_factual);
  f.get("horizon_cf", c.horizon_cf);
  f.get("resolution", c.resolution);
  read_pair(f, "mass", c.mass.lo, c.mass.hi);
  read_pair(f, "friction", c.friction.lo, c.friction.hi);
  read_pair(f, "radius", c.radius.lo, c.radius.hi);
  read_pair(f, "speed", c.speed.lo, c.speed.hi);
  read_pair(f, "gravity", c.gravity.x, c.gravity.y);
  f.get("randomize_gravity", c.randomize_gravity);
  read_pair(f, "gravity_magnitude", c.gravity_magnitude.lo, c.gravity_magnitude.hi);
  f.get("gravity_angle_jitter", c.gravity_angle_jitter);
  read_pair(f, "arena", c.arena.width, c.arena.height);
  f.get("removal_prob", c.removal_prob);
  f.get("displacement_radius", c.displacement_radius);
  f.get("frame_dt", c.frame_dt);
  f.get("substeps", c.substeps);
  f.get("placement_retries", c.placement_retries);
  f.finish();
  c.validate();
  return c;
}

Json model_to_json(const model::ModelConfig& c) {
  Json j;
  j["mode"] = std::string(model::to_string(c.mode));
  j["input_channels"] = c.input_channels;
  j["resolution"] = c.resolution;
  j["slots"] = c.slots;
  j["latent_dim"] = c.latent_dim;
  Json ex = Json::array();
  for (const auto& s : c.extractor) ex.push_back(conv_json(s));
  j["extractor"] = ex;
  j["hidden"] = c.hidden;
  j["edge_out"] = c.edge_out;
  j["confounder_dim"] = c.confounder_dim;
  j["gru_layers"] = c.gru_layers;
  j["gamma"] = c.gamma;
  j["sigma"] = c.sigma;
  return j;
}

model::ModelConfig model_from_json(const Json& j) {
  model::ModelConfig c;
  JsonFields f(j, "model");
  std::string mode(model::to_string(c.mode));
  f.get("mode", mode);
  c.mode = model::mode_from_string(mode);
  f.get("input_channels", c.input_channels);
  f.get("resolution", c.resolution);
  f.get("slots", c.slots);
  f.get("latent_dim", c.latent_dim);
  if (const Json* ex = f.child("extractor")) {
    if (!ex->is_array()) f.fail("extractor must be an array");
    c.extractor.clear();
    for (std::size_t i = 0; i < ex->size(); ++i) c.extractor.push_back(conv_from_json((*ex)[i], i));
  }
  f.get("hidden", c.hidden);
  f.get("edge_out", c.edge_out);
  f.get("confounder_dim", c.confounder_dim);
  f.get("gru_layers", c.gru_layers);
  f.get("gamma", c.gamma);
  f.get("sigma", c.sigma);
  f.finish();
  c.validate();
  return c;
}

Json train_to_json(const model::TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.adam.lr;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["eps"] = c.adam.eps;
  j["transitions_per_episode"] = c.transitions_per_episode;
  j["dr_weight_clip"] = c.dr_weight_clip;
  j["seed"] = c.seed;
  return j;
}

model::TrainConfig train_from_json(const Json& j) {
  model::TrainConfig c;
  JsonFields f(j, "train");
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("lr", c.adam.lr);
  f.get("beta1", c.adam.beta1);
  f.get("beta2", c.adam.beta2);
  f.get("eps", c.adam.eps);
  f.get("transitions_per_episode", c.transitions_per_episode);
  f.get("dr_weight_clip", c.dr_weight_clip);
  f.get("seed", c.seed);
  f.finish();
  c.validate();
  return c;
}

}  // namespace cwm
