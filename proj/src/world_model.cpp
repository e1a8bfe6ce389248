#include "cwm/world_model.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cwm/error.hpp"
#include "cwm/rng.hpp"

namespace cwm::model {

using ad::Var;

namespace {

[[noreturn]] void schema(const std::string& msg) { throw Error(ErrorKind::SchemaError, msg); }

std::string normalized(std::string_view name) {
  std::string s(name);
  for (char& c : s) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void add_mlp(std::vector<ad::ParamSpec>& specs, const std::string& p, int in, int hidden, int out) {
  using ad::InitKind;
  specs.push_back({p + ".fc1.w", {hidden, in}, InitKind::Weight});
  specs.push_back({p + ".fc1.b", {hidden}, InitKind::Bias});
  specs.push_back({p + ".fc2.w", {hidden, hidden}, InitKind::Weight});
  specs.push_back({p + ".fc2.b", {hidden}, InitKind::Bias});
  specs.push_back({p + ".ln.g", {hidden}, InitKind::Gain});
  specs.push_back({p + ".ln.b", {hidden}, InitKind::Bias});
  specs.push_back({p + ".fc3.w", {out, hidden}, InitKind::Weight});
  specs.push_back({p + ".fc3.b", {out}, InitKind::Bias});
}

Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::None: return x;
    case Activation::Relu: return ad::relu(x);
    case Activation::LeakyRelu: return ad::leaky_relu(x);
    case Activation::Sigmoid: return ad::sigmoid(x);
  }
  return x;
}

void check_latent(const ModelConfig& c, const Tensor& s, const char* what) {
  if (s.shape() != ad::Shape{c.slots, c.latent_dim})
    schema(std::string(what) + " must be [" + std::to_string(c.slots) + ", " + std::to_string(c.latent_dim) +
           "], got " + ad::to_string(s.shape()));
}

void check_u(const ModelConfig& c, const Tensor* u) {
  if (c.mode == Mode::WM) {
    if (u) schema("WM mode takes no confounder estimate");
    return;
  }
  if (!u) schema("confounder estimate required in " + std::string(to_string(c.mode)) + " mode");
  if (u->shape() != ad::Shape{c.slots, c.confounder_dim})
    schema("confounder estimate must be [slots, " + std::to_string(c.confounder_dim) + "], got " +
           ad::to_string(u->shape()));
}

double dr_weight(const PropensityModel& p, const Tensor& s0, double clip) {
  return std::min(clip, std::exp(-p.log_density(s0.values())));
}

}  // namespace

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::WM: return "wm";
    case Mode::CWM: return "cwm";
    case Mode::CRM_CWM: return "crm-cwm";
  }
  return "?";
}

Mode mode_from_string(std::string_view name) {
  const std::string s = normalized(name);
  if (s == "wm") return Mode::WM;
  if (s == "cwm") return Mode::CWM;
  if (s == "crm-cwm") return Mode::CRM_CWM;
  throw Error(ErrorKind::ConfigError, "unknown mode '" + std::string(name) + "' (wm, cwm, crm-cwm)");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky-relu";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  const std::string s = normalized(name);
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::Relu;
  if (s == "leaky-relu") return Activation::LeakyRelu;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw Error(ErrorKind::ConfigError, "unknown activation '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, "model: " + m); };
  if (input_channels < 1 || resolution < 1) bad("input_channels and resolution must be positive");
  if (slots < 1 || latent_dim < 1 || hidden < 1 || edge_out < 0) bad("slots, latent_dim, hidden must be positive");
  if (mode != Mode::WM && (confounder_dim < 1 || gru_layers < 1)) bad("confounder_dim and gru_layers must be positive");
  if (!(gamma > 0.0) || !(sigma > 0.0)) bad("gamma and sigma must be positive");
  if (extractor.empty()) bad("extractor needs at least one layer");
  int h = resolution;
  for (std::size_t i = 0; i < extractor.size(); ++i) {
    const auto& l = extractor[i];
    if (l.kernel < 1 || l.stride < 1 || l.pad < 0) bad("conv layer " + std::to_string(i) + " has invalid geometry");
    if (i + 1 < extractor.size() && l.channels < 1) bad("conv layer " + std::to_string(i) + " needs channels");
    if (h + 2 * l.pad < l.kernel) bad("conv layer " + std::to_string(i) + " kernel exceeds its input");
    h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
  }
}

int ModelConfig::map_size() const {
  int h = resolution;
  for (const auto& l : extractor) h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
  return h * h;
}

ModelConfig desk_config(int balls, int resolution, Mode mode) {
  ModelConfig c;
  c.input_channels = balls + 1;
  c.resolution = resolution;
  c.slots = balls;
  c.extractor = {{16, 5, 5, 0, Activation::LeakyRelu, true}, {0, 1, 1, 0, Activation::Sigmoid, false}};
  c.hidden = 64;
  c.mode = mode;
  return c;
}

std::vector<ad::ParamSpec> Model::layout(const ModelConfig& c) {
  c.validate();
  std::vector<ad::ParamSpec> specs;
  int in = c.input_channels;
  for (std::size_t i = 0; i < c.extractor.size(); ++i) {
    const auto& l = c.extractor[i];
    const int out = i + 1 == c.extractor.size() ? c.slots : l.channels;
    const std::string p = "conv" + std::to_string(i);
    specs.push_back({p + ".w", {out, in, l.kernel, l.kernel}, ad::InitKind::Weight});
    specs.push_back({p + ".b", {out}, ad::InitKind::Bias});
    in = out;
  }
  const int x = c.latent_dim + c.u_dim();
  add_mlp(specs, "enc", c.map_size(), c.hidden, c.latent_dim);
  add_mlp(specs, "edge", 2 * x, c.hidden, c.edge_width());
  add_mlp(specs, "node", x + c.edge_width(), c.hidden, c.latent_dim);
  if (c.mode != Mode::WM) {
    const int u = c.confounder_dim;
    for (int l = 0; l < c.gru_layers; ++l) {
      const std::string p = "gru" + std::to_string(l);
      specs.push_back({p + ".w_ih", {3 * u, l == 0 ? c.latent_dim : u}, ad::InitKind::Weight});
      specs.push_back({p + ".w_hh", {3 * u, u}, ad::InitKind::Weight});
      specs.push_back({p + ".b_ih", {3 * u}, ad::InitKind::Bias});
      specs.push_back({p + ".b_hh", {3 * u}, ad::InitKind::Bias});
    }
  }
  return specs;
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  Model m;
  m.config = config;
  m.specs = layout(config);
  m.params = ad::init_params(m.specs, seed);
  m.build_lookup();
  return m;
}

void Model::build_lookup() {
  lookup_.clear();
  for (std::size_t i = 0; i < specs.size(); ++i) lookup_.emplace(specs[i].name, i);
}

Model Model::from_parts(const ModelConfig& config, std::vector<Tensor> params) {
  Model m;
  m.config = config;
  m.specs = layout(config);
  if (params.size() != m.specs.size())
    schema("expected " + std::to_string(m.specs.size()) + " parameter tensors, got " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != m.specs[i].shape)
      schema("parameter " + m.specs[i].name + " is " + ad::to_string(params[i].shape()) + ", expected " +
             ad::to_string(m.specs[i].shape));
  m.params = std::move(params);
  m.build_lookup();
  return m;
}

bool Model::has(std::string_view name) const {
  return lookup_.find(name) != lookup_.end();
}

std::size_t Model::index(std::string_view name) const {
  const auto it = lookup_.find(name);
  if (it == lookup_.end()) schema("model has no parameter '" + std::string(name) + "'");
  return it->second;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

Tensor stack_observations(std::span<const world::Observation* const> obs, const ModelConfig& c) {
  const std::size_t plane = static_cast<std::size_t>(c.input_channels) * c.resolution * c.resolution;
  Tensor x({static_cast<int>(obs.size()), c.input_channels, c.resolution, c.resolution});
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& o = *obs[i];
    if (o.channels != c.input_channels || o.height != c.resolution || o.width != c.resolution || o.grid.size() != plane)
      schema("observation is " + std::to_string(o.channels) + "x" + std::to_string(o.height) + "x" +
             std::to_string(o.width) + ", model expects " + std::to_string(c.input_channels) + "x" +
             std::to_string(c.resolution) + "x" + std::to_string(c.resolution));
    std::copy(o.grid.begin(), o.grid.end(), x.data() + i * plane);
  }
  return x;
}

Tensor stack_observations(std::span<const world::Observation> obs, const ModelConfig& c) {
  std::vector<const world::Observation*> ptrs;
  for (const auto& o : obs) ptrs.push_back(&o);
  return stack_observations(std::span<const world::Observation* const>(ptrs), c);
}

namespace graph {

Net::Net(ad::Tape& tape, const Model& model, bool trainable) : tape_(&tape), model_(&model) {
  vars_.reserve(model.params.size());
  for (const auto& p : model.params) vars_.push_back(trainable ? tape.parameter(p) : tape.constant(p));
}

Net::Net(ad::Tape& tape, const Model& model, std::vector<Var> vars)
    : tape_(&tape), model_(&model), vars_(std::move(vars)) {
  if (vars_.size() != model.params.size()) schema("one tape variable per model parameter required");
}

Var mlp(const Net& net, std::string_view prefix, Var x) {
  const std::string p(prefix);
  Var h = ad::relu(ad::linear(x, net[p + ".fc1.w"], net[p + ".fc1.b"]));
  h = ad::linear(h, net[p + ".fc2.w"], net[p + ".fc2.b"]);
  h = ad::relu(ad::layer_norm(h, net[p + ".ln.g"], net[p + ".ln.b"]));
  return ad::linear(h, net[p + ".fc3.w"], net[p + ".fc3.b"]);
}

Var encode(const Net& net, Var obs) {
  const ModelConfig& c = net.config();
  const ad::Shape& in = obs.shape();
  if (in.size() != 4 || in[1] != c.input_channels || in[2] != c.resolution || in[3] != c.resolution)
    schema("encode input " + ad::to_string(in) + " does not match the model");
  const int n = in[0];
  Var x = obs;
  for (std::size_t i = 0; i < c.extractor.size(); ++i) {
    const auto& l = c.extractor[i];
    const std::string p = "conv" + std::to_string(i);
    x = ad::conv2d(x, net[p + ".w"], net[p + ".b"], l.stride, l.pad);
    if (l.norm) {
      const ad::Shape s = x.shape();
      x = ad::reshape(ad::layer_norm(ad::reshape(x, {n, s[1] * s[2] * s[3]})), s);
    }
    x = activate(x, l.act);
  }
  x = ad::reshape(x, {n * c.slots, c.map_size()});
  return mlp(net, "enc", x);
}

Var estimate_confounders(const Net& net, std::span<const Var> steps) {
  const ModelConfig& c = net.config();
  if (c.mode == Mode::WM) schema("WM mode has no confounder estimator");
  if (steps.size() < 2) schema("confounder estimation needs a trajectory of length >= 2");
  const int rows = steps[0].shape()[0];
  std::vector<Var> h(c.gru_layers, net.tape().constant(Tensor({rows, c.confounder_dim})));
  for (const Var& x : steps) {
    Var in = x;
    for (int l = 0; l < c.gru_layers; ++l) {
      const std::string p = "gru" + std::to_string(l);
      h[l] = ad::gru_cell(in, h[l], net[p + ".w_ih"], net[p + ".w_hh"], net[p + ".b_ih"], net[p + ".b_hh"]);
      in = h[l];
    }
  }
  return h.back();
}

Var transition_delta(const Net& net, Var s, std::optional<Var> u) {
  const ModelConfig& c = net.config();
  const int rows = s.shape()[0];
  if (s.shape().size() != 2 || s.shape()[1] != c.latent_dim || rows % c.slots != 0)
    schema("transition input " + ad::to_string(s.shape()) + " is not [M * slots, latent_dim]");
  if ((c.mode == Mode::WM) != !u.has_value()) schema("confounder estimate must be given iff mode is not WM");
  const Var x = u ? ad::concat({s, *u}) : s;
  const int k = c.slots;
  Var agg;
  if (k > 1) {
    std::vector<int> src, dst;
    for (int m = 0; m < rows / k; ++m)
      for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) {
          if (i == j) continue;
          src.push_back(m * k + i);
          dst.push_back(m * k + j);
        }
    const Var e = mlp(net, "edge", ad::concat({ad::gather_rows(x, src), ad::gather_rows(x, dst)}));
    agg = ad::segment_sum(e, dst, rows);
  } else {
    agg = net.tape().constant(Tensor({rows, c.edge_width()}));
  }
  return mlp(net, "node", ad::concat({x, agg}));
}

Var energy(const Net& net, Var a, Var b) {
  const ModelConfig& c = net.config();
  const int rows = a.shape()[0];
  const Var per_slot = ad::reshape(ad::squared_distance(a, b), {rows / c.slots, c.slots});
  return ad::scale(ad::row_sum(per_slot), c.distance_scale() / c.slots);
}

Var hinge_objective(const Net& net, Var predicted, Var next, Var negative) {
  const Var pos = energy(net, predicted, next);
  const Var neg = energy(net, negative, next);
  return ad::mean(ad::add(pos, ad::hinge(ad::add_scalar(ad::scale(neg, -1.0), net.config().gamma))));
}

Var dr_prediction(Var s, Var next, Var delta, const Tensor& row_weights) {
  const ad::Shape& shape = s.shape();
  if (shape.size() != 2 || row_weights.size() != static_cast<std::size_t>(shape[0]))
    schema("one DR weight per latent row required");
  Tensor w(shape);
  for (int r = 0; r < shape[0]; ++r)
    for (int j = 0; j < shape[1]; ++j) w[static_cast<std::size_t>(r) * shape[1] + j] = row_weights[r];
  // Rearranged as next + (w - 1) * resid so unit weight and zero residual are exact.
  for (auto& v : w.values()) v -= 1.0;
  const Var resid = ad::sub(ad::sub(next, s), delta);
  return ad::add(next, ad::mul(resid, s.tape->constant(std::move(w))));
}

Var dr_objective(const Net& net, Var s, Var next, Var delta, Var negative, const Tensor& row_weights) {
  const Var s_dr = dr_prediction(s, next, delta, row_weights);
  const Var pos = energy(net, s_dr, next);
  const Var neg = energy(net, negative, next);
  return ad::mean(ad::add(pos, ad::hinge(ad::add_scalar(ad::scale(neg, -1.0), net.config().gamma))));
}

}  // namespace graph

Tensor encode(const Model& model, const world::Observation& obs) {
  return encode_many(model, std::span(&obs, 1)).front();
}

std::vector<Tensor> encode_many(const Model& model, std::span<const world::Observation> obs) {
  constexpr std::size_t kChunk = 128;
  const ModelConfig& c = model.config;
  std::vector<Tensor> out;
  out.reserve(obs.size());
  for (std::size_t start = 0; start < obs.size(); start += kChunk) {
    const auto chunk = obs.subspan(start, std::min(kChunk, obs.size() - start));
    ad::Tape tape;
    const graph::Net net(tape, model, false);
    const Var z = graph::encode(net, tape.constant(stack_observations(chunk, c)));
    const Tensor& zv = z.value();
    const std::size_t per = static_cast<std::size_t>(c.slots) * c.latent_dim;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      Tensor s({c.slots, c.latent_dim});
      std::copy_n(zv.data() + i * per, per, s.data());
      out.push_back(std::move(s));
    }
  }
  return out;
}

Tensor transition_delta(const Model& model, const Tensor& s, const Tensor* u) {
  const ModelConfig& c = model.config;
  check_latent(c, s, "latent state");
  check_u(c, u);
  ad::Tape tape;
  const graph::Net net(tape, model, false);
  std::optional<Var> uv;
  if (u) uv = tape.constant(*u);
  return graph::transition_delta(net, tape.constant(s), uv).value();
}

Tensor combine(const Tensor& s, const Tensor& delta) {
  if (s.shape() != delta.shape())
    schema("combine shapes differ: " + ad::to_string(s.shape()) + " vs " + ad::to_string(delta.shape()));
  Tensor out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = s[i] + delta[i];
  return out;
}

Tensor estimate_confounders(const Model& model, std::span<const Tensor> trajectory) {
  const ModelConfig& c = model.config;
  if (c.mode == Mode::WM) schema("WM mode has no confounder estimator");
  if (trajectory.size() < 2) schema("confounder estimation needs T >= 2");
  ad::Tape tape;
  const graph::Net net(tape, model, false);
  std::vector<Var> steps;
  for (const auto& s : trajectory) {
    check_latent(c, s, "trajectory state");
    steps.push_back(tape.constant(s));
  }
  return graph::estimate_confounders(net, steps).value();
}

std::vector<Tensor> rollout_latent(const Model& model, const Tensor& s0, const Tensor* u, int horizon) {
  if (horizon < 0) schema("horizon must be >= 0");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(horizon));
  Tensor s = s0;
  for (int t = 0; t < horizon; ++t) {
    s = combine(s, transition_delta(model, s, u));
    out.push_back(s);
  }
  return out;
}

std::vector<Tensor> rollout_dream(const Model& model, const world::Observation& cf_obs0,
                                  std::span<const world::Observation> factual_obs, int horizon) {
  std::optional<Tensor> u;
  if (model.config.mode != Mode::WM) u = estimate_confounders(model, encode_many(model, factual_obs));
  return rollout_latent(model, encode(model, cf_obs0), u ? &*u : nullptr, horizon);
}

double hinge_loss(const Model& model, const Tensor& s_t, const Tensor& s_next, const Tensor& s_neg, const Tensor* u) {
  const ModelConfig& c = model.config;
  check_latent(c, s_t, "s_t");
  check_latent(c, s_next, "s_next");
  check_latent(c, s_neg, "s_neg");
  check_u(c, u);
  ad::Tape tape;
  const graph::Net net(tape, model, false);
  const Var s = tape.constant(s_t);
  std::optional<Var> uv;
  if (u) uv = tape.constant(*u);
  const Var pred = ad::add(s, graph::transition_delta(net, s, uv));
  return graph::hinge_objective(net, pred, tape.constant(s_next), tape.constant(s_neg)).value().item();
}

Tensor dr_combine(const Tensor& s_t, const Tensor& s_next, const Tensor& f_hat, double density, bool observed) {
  if (!(density > 0.0) || !std::isfinite(density))
    throw Error(ErrorKind::PropensityError, "propensity density must be positive and finite");
  if (s_t.shape() != s_next.shape() || s_t.shape() != f_hat.shape()) schema("DR operands differ in shape");
  const double w = observed ? 1.0 / density : 0.0;
  Tensor out(s_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s_next[i] + ((s_next[i] - s_t[i]) - f_hat[i]) * (w - 1.0);
  return out;
}

Tensor dr_predict(const Model& model, const Tensor& s_t, const Tensor& s_next, double density, bool observed,
                  const Tensor* u) {
  check_latent(model.config, s_next, "s_next");
  return dr_combine(s_t, s_next, transition_delta(model, s_t, u), density, observed);
}

double PropensityModel::log_density(std::span<const double> x) const {
  if (x.size() != mean.size()) throw Error(ErrorKind::PropensityError, "propensity dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    lp += -0.5 * std::log(2.0 * std::numbers::pi * variance[i]) - d * d / (2.0 * variance[i]);
  }
  return lp;
}

double PropensityModel::density(std::span<const double> x) const { return std::exp(log_density(x)); }

PropensityModel fit_propensity(std::span<const Tensor> initial_latents) {
  if (initial_latents.size() < 2) throw Error(ErrorKind::PropensityError, "propensity fit needs >= 2 samples");
  const std::size_t dim = initial_latents[0].size();
  PropensityModel p;
  p.mean.assign(dim, 0.0);
  p.variance.assign(dim, 0.0);
  for (const auto& s : initial_latents) {
    if (s.size() != dim) throw Error(ErrorKind::PropensityError, "initial latents differ in size");
    if (!s.all_finite()) throw Error(ErrorKind::PropensityError, "non-finite initial latent");
    for (std::size_t i = 0; i < dim; ++i) p.mean[i] += s[i];
  }
  const double n = static_cast<double>(initial_latents.size());
  for (auto& m : p.mean) m /= n;
  for (const auto& s : initial_latents)
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = s[i] - p.mean[i];
      p.variance[i] += d * d;
    }
  for (auto& v : p.variance) v = std::max(v / n, kPropensityVarianceFloor);
  return p;
}

double dr_loss(const Model& model, std::span<const DrSample> batch, const PropensityModel& propensity,
               double weight_clip) {
  const ModelConfig& c = model.config;
  if (c.mode == Mode::WM) schema("DR loss needs a confounder-aware mode");
  if (batch.empty()) schema("empty DR batch");
  const int k = c.slots, d = c.latent_dim, ud = c.confounder_dim;
  const int n = static_cast<int>(batch.size());
  Tensor s({n * k, d}), next({n * k, d}), neg({n * k, d}), u({n * k, ud}), w({n * k});
  auto put = [](Tensor& dst, const Tensor& src, int i) { std::copy(src.values().begin(), src.values().end(), dst.data() + i * src.size()); };
  for (int i = 0; i < n; ++i) {
    const auto& b = batch[i];
    check_latent(c, b.s_t, "s_t");
    check_latent(c, b.s_next, "s_next");
    check_latent(c, b.s_neg, "s_neg");
    check_u(c, &b.u);
    put(s, b.s_t, i);
    put(next, b.s_next, i);
    put(neg, b.s_neg, i);
    put(u, b.u, i);
    const double wi = dr_weight(propensity, b.s0, weight_clip);
    for (int j = 0; j < k; ++j) w[static_cast<std::size_t>(i) * k + j] = wi;
  }
  ad::Tape tape;
  const graph::Net net(tape, model, false);
  const Var sv = tape.constant(s);
  const Var delta = graph::transition_delta(net, sv, tape.constant(u));
  return graph::dr_objective(net, sv, tape.constant(next), delta, tape.constant(neg), w).value().item();
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, "train: " + m); };
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_size < 1) bad("batch_size must be >= 1");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0))
    bad("invalid Adam hyperparameters");
  if (transitions_per_episode < 0) bad("transitions_per_episode must be >= 0");
  if (!(dr_weight_clip >= 1.0)) bad("dr_weight_clip must be >= 1");
}

namespace {

/// Transition indices 0..count-1, or `keep` of them sampled without replacement (sorted).
std::vector<int> pick_transitions(int count, int keep, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), 0);
  if (keep <= 0 || keep >= count) return idx;
  for (int i = 0; i < keep; ++i) std::swap(idx[i], idx[i + rng.below(static_cast<std::uint64_t>(count - i))]);
  idx.resize(static_cast<std::size_t>(keep));
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct BatchPlan {
  std::vector<const world::Observation*> frames;
  std::vector<int> s_frame, next_frame, neg_frame, episode_slot;  // per transition
  std::vector<std::vector<int>> factual_frame;                    // [b][t], CWM modes
};

}  // namespace

TrainResult train(std::span<const world::EpisodePair> train_set, const ModelConfig& config,
                  const TrainConfig& tc, const EpochCallback& on_epoch) {
  config.validate();
  tc.validate();
  if (train_set.empty()) throw Error(ErrorKind::TrainingError, "training set is empty");
  const bool cwm = config.mode != Mode::WM;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    const auto& ep = train_set[i];
    if (ep.factual_obs.size() < 2 || ep.cf_obs.size() < 2)
      throw Error(ErrorKind::SchemaError, "episode " + std::to_string(i) + " is shorter than two frames");
    for (const auto* branch : {&ep.factual_obs, &ep.cf_obs})
      for (const auto& o : *branch)
        if (o.channels != config.input_channels || o.height != config.resolution || o.width != config.resolution)
          throw Error(ErrorKind::SchemaError, "episode " + std::to_string(i) + " observations do not match the model");
  }

  TrainResult result;
  result.trained.train = tc;
  Model& model = result.trained.model;
  model = Model::init(config, mix_seed(tc.seed, 1));
  ad::AdamState adam = ad::AdamState::zeros_like(model.params, tc.adam);

  std::vector<const world::Observation*> pool;
  for (const auto& ep : train_set) {
    for (const auto& o : ep.factual_obs) pool.push_back(&o);
    for (const auto& o : ep.cf_obs) pool.push_back(&o);
  }
  const int k = config.slots;
  const std::size_t n_eps = train_set.size();

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n_eps);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(mix_seed(tc.seed, 100 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n_eps; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    Rng sampler(mix_seed(tc.seed, 1'000'000 + static_cast<std::uint64_t>(epoch)));

    std::vector<double> weights;
    if (config.mode == Mode::CRM_CWM) {
      std::vector<world::Observation> firsts;
      for (const auto& ep : train_set) firsts.push_back(ep.cf_obs.front());
      const auto s0 = encode_many(model, firsts);
      const PropensityModel prop = fit_propensity(s0);
      for (const auto& s : s0) weights.push_back(dr_weight(prop, s, tc.dr_weight_clip));
    }

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n_eps; start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(n_eps, start + static_cast<std::size_t>(tc.batch_size));
      BatchPlan plan;
      std::vector<double> row_weights;
      for (std::size_t b = 0; b < end - start; ++b) {
        const auto& ep = train_set[order[start + b]];
        if (cwm) {
          plan.factual_frame.emplace_back();
          for (const auto& o : ep.factual_obs) {
            plan.factual_frame.back().push_back(static_cast<int>(plan.frames.size()));
            plan.frames.push_back(&o);
          }
        }
        std::vector<const std::vector<world::Observation>*> branches{&ep.cf_obs};
        if (!cwm) branches.insert(branches.begin(), &ep.factual_obs);
        for (const auto* branch : branches) {
          const int count = static_cast<int>(branch->size()) - 1;
          std::vector<int> frame_of(branch->size(), -1);
          auto frame = [&](int t) {
            if (frame_of[t] < 0) {
              frame_of[t] = static_cast<int>(plan.frames.size());
              plan.frames.push_back(&(*branch)[t]);
            }
            return frame_of[t];
          };
          for (int t : pick_transitions(count, tc.transitions_per_episode, sampler)) {
            plan.s_frame.push_back(frame(t));
            plan.next_frame.push_back(frame(t + 1));
            plan.episode_slot.push_back(static_cast<int>(b));
            if (!weights.empty()) row_weights.push_back(weights[order[start + b]]);
          }
        }
      }
      for (std::size_t i = 0; i < plan.s_frame.size(); ++i) {
        plan.neg_frame.push_back(static_cast<int>(plan.frames.size()));
        plan.frames.push_back(pool[sampler.below(pool.size())]);
      }

      try {
        ad::Tape tape;
        const graph::Net net(tape, model, true);
        const Var z = graph::encode(net, tape.constant(stack_observations(plan.frames, config)));
        auto slot_rows = [k](const std::vector<int>& frames) {
          std::vector<int> rows;
          rows.reserve(frames.size() * static_cast<std::size_t>(k));
          for (int f : frames)
            for (int j = 0; j < k; ++j) rows.push_back(f * k + j);
          return rows;
        };
        const Var s = ad::gather_rows(z, slot_rows(plan.s_frame));
        const Var next = ad::gather_rows(z, slot_rows(plan.next_frame));
        const Var neg = ad::gather_rows(z, slot_rows(plan.neg_frame));
        std::optional<Var> u;
        if (cwm) {
          const std::size_t steps = plan.factual_frame.front().size();
          std::vector<Var> seq;
          for (std::size_t t = 0; t < steps; ++t) {
            std::vector<int> at_t;
            for (const auto& ep_frames : plan.factual_frame) {
              if (ep_frames.size() != steps) throw Error(ErrorKind::SchemaError, "factual horizons differ within a batch");
              at_t.push_back(ep_frames[t]);
            }
            seq.push_back(ad::gather_rows(z, slot_rows(at_t)));
          }
          const Var u_ep = graph::estimate_confounders(net, seq);
          u = ad::gather_rows(u_ep, slot_rows(plan.episode_slot));
        }
        const Var delta = graph::transition_delta(net, s, u);
        Var loss;
        if (config.mode == Mode::CRM_CWM) {
          Tensor w({static_cast<int>(row_weights.size()) * k});
          for (std::size_t i = 0; i < row_weights.size(); ++i)
            for (int j = 0; j < k; ++j) w[i * k + j] = row_weights[i];
          loss = graph::dr_objective(net, s, next, delta, neg, w);
        } else {
          loss = graph::hinge_objective(net, ad::add(s, delta), next, neg);
        }
        tape.backward(loss);
        std::vector<Tensor> grads;
        grads.reserve(model.params.size());
        for (const Var& v : net.vars()) grads.push_back(tape.grad(v));
        ad::adam_step(model.params, grads, adam);
        for (const auto& p : model.params)
          if (!p.all_finite()) throw Error(ErrorKind::NumericsError, "non-finite parameter after update");
        loss_sum += loss.value().item();
        ++batches;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NumericsError) throw;
        throw Error(ErrorKind::NumericsError,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches + 1) + ": " + e.what());
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochStats stats{epoch, loss_sum / batches, wall};
    for (double w : weights) {
      stats.dr_weight_mean += w / static_cast<double>(weights.size());
      if (w >= tc.dr_weight_clip) stats.dr_weight_clipped += 1.0 / static_cast<double>(weights.size());
    }
    result.history.push_back(stats);
    result.trained.epochs_completed = epoch;
    if (on_epoch) on_epoch(result.history.back());
  }
  return result;
}

}  // namespace cwm::model
