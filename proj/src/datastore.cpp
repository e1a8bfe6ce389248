#include "cwm/datastore.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cwm/bytes.hpp"
#include "cwm/config.hpp"

namespace cwm {

namespace bytes {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::StorageError, "cannot open " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::StorageError, "read failed: " + path.string());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::StorageError, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::StorageError, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  const auto data = read_file(path);
  return {data.begin(), data.end()};
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace bytes

namespace store {

namespace {

constexpr std::string_view kMagic = "CWM1";
constexpr int kStateFloats = 6;
constexpr int kInterventionFloats = 5;

struct Dims {
  std::uint32_t balls, t_factual, t_cf, channels, height, width;
  friend bool operator==(const Dims&, const Dims&) = default;
};

Dims dims_of(const world::EpisodePair& ep) {
  const auto& obs = ep.factual_obs.empty() ? world::Observation{} : ep.factual_obs.front();
  return {static_cast<std::uint32_t>(ep.confounders.masses.size()),
          static_cast<std::uint32_t>(ep.factual_states.size()),
          static_cast<std::uint32_t>(ep.cf_states.size()),
          static_cast<std::uint32_t>(obs.channels),
          static_cast<std::uint32_t>(obs.height),
          static_cast<std::uint32_t>(obs.width)};
}

void check_consistent(const world::EpisodePair& ep, const Dims& d, std::size_t index) {
  auto bad = [&](const std::string& what) {
    throw Error(ErrorKind::SchemaError, "episode " + std::to_string(index) + ": " + what);
  };
  if (ep.confounders.frictions.size() != d.balls) bad("friction count differs from mass count");
  if (ep.factual_obs.size() != d.t_factual || ep.cf_obs.size() != d.t_cf) bad("observation count differs from state count");
  auto check_states = [&](const std::vector<world::WorldState>& states) {
    for (const auto& s : states)
      if (s.size() != d.balls || s.velocities.size() != d.balls || s.radii.size() != d.balls || s.alive.size() != d.balls)
        bad("state ball count differs");
  };
  check_states(ep.factual_states);
  check_states(ep.cf_states);
  auto check_obs = [&](const std::vector<world::Observation>& obs) {
    for (const auto& o : obs)
      if (static_cast<std::uint32_t>(o.channels) != d.channels || static_cast<std::uint32_t>(o.height) != d.height ||
          static_cast<std::uint32_t>(o.width) != d.width ||
          o.grid.size() != static_cast<std::size_t>(d.channels) * d.height * d.width)
        bad("observation shape differs");
  };
  check_obs(ep.factual_obs);
  check_obs(ep.cf_obs);
}

void put_state(bytes::Writer& w, const world::WorldState& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    w.f32(static_cast<float>(s.positions[i].x));
    w.f32(static_cast<float>(s.positions[i].y));
    w.f32(static_cast<float>(s.velocities[i].x));
    w.f32(static_cast<float>(s.velocities[i].y));
    w.f32(static_cast<float>(s.radii[i]));
    w.f32(s.alive[i] ? 1.0f : 0.0f);
  }
}

world::WorldState get_state(bytes::Reader& r, std::uint32_t balls) {
  world::WorldState s;
  for (std::uint32_t i = 0; i < balls; ++i) {
    const double x = r.f32(), y = r.f32(), vx = r.f32(), vy = r.f32(), rad = r.f32();
    const float alive = r.f32();
    if (alive != 0.0f && alive != 1.0f) r.fail("alive flag is not 0 or 1");
    s.positions.push_back({x, y});
    s.velocities.push_back({vx, vy});
    s.radii.push_back(rad);
    s.alive.push_back(alive == 1.0f);
  }
  return s;
}

void put_obs(bytes::Writer& w, const world::Observation& o) {
  for (float v : o.grid) w.f32(v);
}

world::Observation get_obs(bytes::Reader& r, const Dims& d) {
  world::Observation o;
  o.channels = static_cast<int>(d.channels);
  o.height = static_cast<int>(d.height);
  o.width = static_cast<int>(d.width);
  o.grid.resize(static_cast<std::size_t>(d.channels) * d.height * d.width);
  for (auto& v : o.grid) v = r.f32();
  return o;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 18 || s.rfind("0x", 0) != 0) throw Error(ErrorKind::CorruptData, "bad checksum '" + s + "'");
  std::uint64_t v = 0;
  for (std::size_t i = 2; i < s.size(); ++i) {
    const char c = s[i];
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else throw Error(ErrorKind::CorruptData, "bad checksum '" + s + "'");
    v = (v << 4) | static_cast<std::uint64_t>(d);
  }
  return v;
}

Json manifest_json(const DatasetManifest& m) {
  Json j;
  j["format_version"] = m.format_version;
  j["env_config"] = env_to_json(m.env_config);
  j["episode_count"] = m.episode_count;
  j["split"] = std::string(to_string(m.split));
  j["base_seed"] = m.base_seed;
  j["seeds"] = m.seeds;
  Json sums = Json::array();
  for (auto c : m.checksums) sums.push_back(hex64(c));
  j["checksums"] = sums;
  return j;
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::Train ? "train" : "test"; }

std::filesystem::path episode_path(const std::filesystem::path& dir, std::size_t index) {
  return dir / ("ep_" + std::to_string(index) + ".cwmb");
}

std::vector<std::uint8_t> encode_episode(const world::EpisodePair& ep) {
  const Dims d = dims_of(ep);
  check_consistent(ep, d, 0);
  bytes::Writer w;
  w.raw(kMagic);
  for (auto v : {d.balls, d.t_factual, d.t_cf, d.channels, d.height, d.width}) w.u32(v);
  for (double m : ep.confounders.masses) w.f32(static_cast<float>(m));
  for (double f : ep.confounders.frictions) w.f32(static_cast<float>(f));
  w.f32(static_cast<float>(ep.confounders.gravity.x));
  w.f32(static_cast<float>(ep.confounders.gravity.y));
  for (const auto& s : ep.factual_states) put_state(w, s);
  for (const auto& o : ep.factual_obs) put_obs(w, o);
  const auto& iv = ep.intervention;
  w.f32(static_cast<float>(static_cast<std::uint32_t>(iv.kind)));
  w.f32(static_cast<float>(iv.ball_index));
  w.f32(static_cast<float>(iv.offset.x));
  w.f32(static_cast<float>(iv.offset.y));
  w.f32(static_cast<float>(iv.radius));
  for (const auto& s : ep.cf_states) put_state(w, s);
  for (const auto& o : ep.cf_obs) put_obs(w, o);
  return w.take();
}

world::EpisodePair decode_episode(std::span<const std::uint8_t> data, std::size_t index) {
  bytes::Reader r(data, "episode " + std::to_string(index));
  if (r.raw(kMagic.size()) != kMagic) r.fail("bad magic");
  Dims d{};
  d.balls = r.u32();
  d.t_factual = r.u32();
  d.t_cf = r.u32();
  d.channels = r.u32();
  d.height = r.u32();
  d.width = r.u32();
  if (d.balls == 0 || d.balls > 64 || d.channels == 0 || d.height == 0 || d.width == 0 || d.height > 4096 ||
      d.width > 4096 || d.channels > 65)
    r.fail("implausible header dimensions");

  const std::uint64_t frame = static_cast<std::uint64_t>(d.balls) * kStateFloats +
                              static_cast<std::uint64_t>(d.channels) * d.height * d.width;
  const std::uint64_t floats = 2ull * d.balls + 2 + kInterventionFloats +
                               frame * (static_cast<std::uint64_t>(d.t_factual) + d.t_cf);
  if (r.remaining() != floats * 4)
    r.fail("payload is " + std::to_string(r.remaining()) + " bytes, header implies " + std::to_string(floats * 4));

  world::EpisodePair ep;
  for (std::uint32_t i = 0; i < d.balls; ++i) ep.confounders.masses.push_back(r.f32());
  for (std::uint32_t i = 0; i < d.balls; ++i) ep.confounders.frictions.push_back(r.f32());
  ep.confounders.gravity.x = r.f32();
  ep.confounders.gravity.y = r.f32();
  for (std::uint32_t t = 0; t < d.t_factual; ++t) ep.factual_states.push_back(get_state(r, d.balls));
  for (std::uint32_t t = 0; t < d.t_factual; ++t) ep.factual_obs.push_back(get_obs(r, d));
  const float kind = r.f32(), ball = r.f32();
  if (kind != 0.0f && kind != 1.0f && kind != 2.0f) r.fail("unknown intervention kind");
  if (!(ball >= 0.0f) || ball != static_cast<float>(static_cast<std::uint32_t>(ball)) || ball >= static_cast<float>(d.balls))
    r.fail("intervention ball index out of range");
  ep.intervention.kind = static_cast<world::InterventionKind>(static_cast<std::uint32_t>(kind));
  ep.intervention.ball_index = static_cast<std::size_t>(ball);
  ep.intervention.offset.x = r.f32();
  ep.intervention.offset.y = r.f32();
  ep.intervention.radius = r.f32();
  for (std::uint32_t t = 0; t < d.t_cf; ++t) ep.cf_states.push_back(get_state(r, d.balls));
  for (std::uint32_t t = 0; t < d.t_cf; ++t) ep.cf_obs.push_back(get_obs(r, d));
  return ep;
}

DatasetManifest write_dataset(std::span<const world::EpisodePair> pairs, const std::filesystem::path& dir,
                              const world::EnvConfig& env, Split split, std::uint64_t base_seed) {
  if (pairs.empty()) throw Error(ErrorKind::SchemaError, "no episodes to write");
  const Dims d0 = dims_of(pairs.front());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (dims_of(pairs[i]) != d0) throw Error(ErrorKind::SchemaError, "episode " + std::to_string(i) + " dimensions differ from episode 0");
    check_consistent(pairs[i], d0, i);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::StorageError, "cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.env_config = env;
  m.episode_count = pairs.size();
  m.split = split;
  m.base_seed = base_seed;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto data = encode_episode(pairs[i]);
    bytes::write_file(episode_path(dir, i), data);
    m.seeds.push_back(pairs[i].seed);
    m.checksums.push_back(bytes::fnv1a64(data));
  }
  bytes::write_text(dir / "manifest.json", manifest_json(m).dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::CorruptData, "missing manifest in " + dir.string());
  Json j;
  try {
    j = Json::parse(bytes::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::CorruptData, "manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer())
    throw Error(ErrorKind::CorruptData, "manifest lacks format_version");
  DatasetManifest m;
  m.format_version = j["format_version"].get<int>();
  if (m.format_version != kDatasetFormatVersion)
    throw Error(ErrorKind::UnsupportedVersion, "dataset format " + std::to_string(m.format_version) +
                                                   ", expected " + std::to_string(kDatasetFormatVersion));
  try {
    JsonFields f(j, "manifest");
    int version = 0;
    f.get("format_version", version);
    const Json* env = f.child("env_config");
    if (!env) f.fail("missing env_config");
    m.env_config = env_from_json(*env);
    f.get("episode_count", m.episode_count);
    std::string split = "train";
    f.get("split", split);
    if (split != "train" && split != "test") f.fail("split must be train or test");
    m.split = split == "train" ? Split::Train : Split::Test;
    f.get("base_seed", m.base_seed);
    f.get("seeds", m.seeds);
    std::vector<std::string> sums;
    f.get("checksums", sums);
    f.finish();
    for (const auto& s : sums) m.checksums.push_back(parse_hex64(s));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::CorruptData) throw;
    throw Error(ErrorKind::CorruptData, e.what());
  }
  if (m.seeds.size() != m.episode_count || m.checksums.size() != m.episode_count)
    throw Error(ErrorKind::CorruptData, "manifest lists do not match episode_count");
  for (std::size_t i = 0; i < m.episode_count; ++i)
    if (!std::filesystem::exists(episode_path(dir, i)))
      throw Error(ErrorKind::CorruptData, "episode " + std::to_string(i) + ": file missing");
  if (std::filesystem::exists(episode_path(dir, m.episode_count)))
    throw Error(ErrorKind::CorruptData, "more episode files than episode_count");
  return m;
}

world::EpisodePair read_episode(const std::filesystem::path& dir, const DatasetManifest& m, std::size_t index) {
  if (index >= m.episode_count) throw Error(ErrorKind::StorageError, "episode index out of range");
  const auto data = bytes::read_file(episode_path(dir, index));
  if (bytes::fnv1a64(data) != m.checksums[index])
    throw Error(ErrorKind::CorruptData, "episode " + std::to_string(index) + ": checksum mismatch");
  auto ep = decode_episode(data, index);
  ep.seed = m.seeds[index];
  return ep;
}

std::vector<world::EpisodePair> read_dataset(const std::filesystem::path& dir, DatasetManifest* manifest_out) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<world::EpisodePair> out;
  out.reserve(m.episode_count);
  for (std::size_t i = 0; i < m.episode_count; ++i) out.push_back(read_episode(dir, m, i));
  if (manifest_out) *manifest_out = m;
  return out;
}

std::vector<std::uint8_t> encode_model(const model::TrainedModel& trained) {
  const model::Model& m = trained.model;
  Json header;
  header["model"] = model_to_json(m.config);
  header["train"] = train_to_json(trained.train);
  header["epochs_completed"] = trained.epochs_completed;
  Json params = Json::array();
  for (std::size_t i = 0; i < m.specs.size(); ++i) {
    Json p;
    p["name"] = m.specs[i].name;
    p["shape"] = m.params[i].shape();
    params.push_back(p);
  }
  header["params"] = params;
  const std::string text = header.dump();

  bytes::Writer w;
  w.raw("CWMM");
  w.u32(kModelFormatVersion);
  w.u64(text.size());
  w.raw(text);
  for (const auto& t : m.params)
    for (double v : t.values()) w.f64(v);
  return w.take();
}

model::TrainedModel decode_model(std::span<const std::uint8_t> data) {
  bytes::Reader r(data, "model");
  if (r.raw(4) != "CWMM") r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kModelFormatVersion)
    throw Error(ErrorKind::UnsupportedVersion, "model format " + std::to_string(version) + ", expected " +
                                                   std::to_string(kModelFormatVersion));
  const std::uint64_t len = r.u64();
  if (len > r.remaining()) r.fail("header truncated");
  Json header;
  try {
    header = Json::parse(r.raw(static_cast<std::size_t>(len)));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("header is not valid JSON: ") + e.what());
  }

  model::TrainedModel out;
  model::ModelConfig config;
  std::vector<Json> params;
  try {
    JsonFields f(header, "model header");
    const Json* mj = f.child("model");
    const Json* tj = f.child("train");
    if (!mj || !tj) f.fail("missing model or train section");
    config = model_from_json(*mj);
    out.train = train_from_json(*tj);
    f.get("epochs_completed", out.epochs_completed);
    f.get("params", params);
    f.finish();
  } catch (const Error& e) {
    throw Error(ErrorKind::CorruptData, e.what());
  }

  const auto specs = model::Model::layout(config);
  if (params.size() != specs.size()) r.fail("parameter count does not match the config");
  std::vector<ad::Tensor> tensors;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::string name;
    ad::Shape shape;
    try {
      JsonFields f(params[i], "param");
      f.get("name", name);
      f.get("shape", shape);
      f.finish();
    } catch (const Error& e) {
      throw Error(ErrorKind::CorruptData, e.what());
    }
    if (name != specs[i].name || shape != specs[i].shape) r.fail("parameter '" + name + "' does not match the config");
    ad::Tensor t(shape);
    for (auto& v : t.values()) v = r.f64();
    tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  out.model = model::Model::from_parts(config, std::move(tensors));
  return out;
}

void save_model(const model::TrainedModel& trained, const std::filesystem::path& path) {
  bytes::write_file(path, encode_model(trained));
}

model::TrainedModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorKind::StorageError, "no model file at " + path.string());
  return decode_model(bytes::read_file(path));
}

void check_model_matches(const model::ModelConfig& config, const world::EnvConfig& env) {
  if (config.input_channels != env.balls + 1 || config.resolution != env.resolution)
    throw Error(ErrorKind::SchemaError, "model expects " + std::to_string(config.input_channels) + " channels at " +
                                            std::to_string(config.resolution) + "px; dataset has " +
                                            std::to_string(env.balls + 1) + " at " + std::to_string(env.resolution) +
                                            "px");
}

}  // namespace store
}  // namespace cwm
