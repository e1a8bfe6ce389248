#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cwm/ball_world.hpp"
#include "cwm/ops.hpp"
#include "cwm/optim.hpp"
#include "cwm/tape.hpp"

namespace cwm::model {

using ad::Tensor;

enum class Mode { WM, CWM, CRM_CWM };
std::string_view to_string(Mode mode);
/// Accepts "wm", "cwm", "crm-cwm" (case-insensitive, '_' or '-'). ConfigError otherwise.
Mode mode_from_string(std::string_view name);

enum class Activation { None, Relu, LeakyRelu, Sigmoid };
std::string_view to_string(Activation act);
Activation activation_from_string(std::string_view name);

/// One extractor layer: conv -> optional per-sample layer norm -> activation.
struct ConvSpec {
  int channels = 32;
  int kernel = 9;
  int stride = 1;
  int pad = 4;
  Activation act = Activation::LeakyRelu;
  bool norm = true;
};

struct ModelConfig {
  int input_channels = 3;
  int resolution = 50;
  int slots = 2;
  int latent_dim = 4;
  /// The last layer always emits `slots` maps; its `channels` field is ignored.
  std::vector<ConvSpec> extractor = {{32, 9, 1, 4, Activation::LeakyRelu, true},
                                     {0, 5, 5, 0, Activation::Sigmoid, false}};
  int hidden = 512;
  int edge_out = 0;  // 0 means latent_dim
  int confounder_dim = 32;
  int gru_layers = 2;
  Mode mode = Mode::CWM;
  double gamma = 1.0;
  double sigma = 0.5;

  void validate() const;
  /// Spatial size of one extractor output map (the encoder MLP's input width).
  int map_size() const;
  int edge_width() const { return edge_out > 0 ? edge_out : latent_dim; }
  int u_dim() const { return mode == Mode::WM ? 0 : confounder_dim; }
  double distance_scale() const { return 0.5 / (sigma * sigma); }
};

/// Reduced extractor for one-core runs: 5x5 stride-5 conv to 16 channels,
/// then a 1x1 conv to the slot maps; 64-wide MLPs.
ModelConfig desk_config(int balls, int resolution, Mode mode);

/// Parameter set plus the config that shaped it.
struct Model {
  ModelConfig config;
  std::vector<ad::ParamSpec> specs;
  std::vector<Tensor> params;

  static Model init(const ModelConfig& config, std::uint64_t seed);
  /// Wraps loaded tensors; SchemaError unless they match layout(config).
  static Model from_parts(const ModelConfig& config, std::vector<Tensor> params);
  /// Parameter specs implied by a config, in storage order.
  static std::vector<ad::ParamSpec> layout(const ModelConfig& config);

  bool has(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  const Tensor& param(std::string_view name) const { return params[index(name)]; }
  Tensor& param(std::string_view name) { return params[index(name)]; }
  std::size_t parameter_count() const;

  friend bool operator==(const Model& a, const Model& b) {
    return a.params == b.params && a.specs.size() == b.specs.size();
  }

 private:
  std::map<std::string, std::size_t, std::less<>> lookup_;
  void build_lookup();
};

/// Observations as one [N, C, H, W] tensor. SchemaError on shape mismatch.
Tensor stack_observations(std::span<const world::Observation> obs, const ModelConfig& config);
Tensor stack_observations(std::span<const world::Observation* const> obs, const ModelConfig& config);

// Graph builders shared by training, inference and the loss functions. All
// latent tensors are slot-major rows: [N * slots, latent_dim].
namespace graph {

/// Model parameters bound to a tape, addressable by name.
class Net {
 public:
  Net(ad::Tape& tape, const Model& model, bool trainable);
  /// Uses caller-provided variables (one per parameter, in storage order).
  Net(ad::Tape& tape, const Model& model, std::vector<ad::Var> vars);
  ad::Var operator[](std::string_view name) const { return vars_[model_->index(name)]; }
  ad::Tape& tape() const { return *tape_; }
  const ModelConfig& config() const { return model_->config; }
  std::span<const ad::Var> vars() const { return vars_; }

 private:
  ad::Tape* tape_;
  const Model* model_;
  std::vector<ad::Var> vars_;
};

/// Three-layer MLP `prefix`: fc1 -> relu -> fc2 -> layer norm -> relu -> fc3.
ad::Var mlp(const Net& net, std::string_view prefix, ad::Var x);
/// [N, C, H, W] -> [N * slots, latent_dim]
ad::Var encode(const Net& net, ad::Var obs);
/// steps[t] is [B * slots, latent_dim]; returns the last hidden state [B * slots, confounder_dim].
ad::Var estimate_confounders(const Net& net, std::span<const ad::Var> steps);
/// s [M * slots, latent_dim], u [M * slots, confounder_dim] (CWM modes only).
ad::Var transition_delta(const Net& net, ad::Var s, std::optional<ad::Var> u);
/// (0.5 / sigma^2) * sum_k ||a_k - b_k||^2 / slots per sample: [M * slots, d] -> [M]
ad::Var energy(const Net& net, ad::Var a, ad::Var b);
/// mean over samples of H + max(0, gamma - H~).
ad::Var hinge_objective(const Net& net, ad::Var predicted, ad::Var next, ad::Var negative);
/// DR prediction with per-row weights w = O / p(s0): w * (next - s - delta) + (s + delta),
/// evaluated as next + (w - 1) * (next - s - delta).
ad::Var dr_prediction(ad::Var s, ad::Var next, ad::Var delta, const Tensor& row_weights);
/// mean over samples of E(s_DR, next) + max(0, gamma - H~).
ad::Var dr_objective(const Net& net, ad::Var s, ad::Var next, ad::Var delta, ad::Var negative,
                     const Tensor& row_weights);

}  // namespace graph

// Tensor-level API on single samples. Latent slots are [slots, latent_dim];
// confounder estimates are [slots, confounder_dim].

Tensor encode(const Model& model, const world::Observation& obs);
/// Batched encode, chunked to bound memory. Same values as per-frame encode.
std::vector<Tensor> encode_many(const Model& model, std::span<const world::Observation> obs);
/// Throws SchemaError when `u` is missing in CWM modes or present in WM mode.
Tensor transition_delta(const Model& model, const Tensor& s, const Tensor* u);
Tensor combine(const Tensor& s, const Tensor& delta);
/// GRU over a latent trajectory (T >= 2), shared across slots. WM mode -> SchemaError.
Tensor estimate_confounders(const Model& model, std::span<const Tensor> trajectory);
/// `horizon` predicted states after s0 (s0 itself excluded).
std::vector<Tensor> rollout_latent(const Model& model, const Tensor& s0, const Tensor* u, int horizon);
/// Encodes the factual branch for u-hat (CWM modes), then rolls out from cf_obs0.
std::vector<Tensor> rollout_dream(const Model& model, const world::Observation& cf_obs0,
                                  std::span<const world::Observation> factual_obs, int horizon);

/// L = H + max(0, gamma - H~) for one transition.
double hinge_loss(const Model& model, const Tensor& s_t, const Tensor& s_next, const Tensor& s_neg,
                  const Tensor* u);

/// (O / density) * (s_next - s_t - f_hat) + (s_t + f_hat). density <= 0 -> PropensityError.
Tensor dr_combine(const Tensor& s_t, const Tensor& s_next, const Tensor& f_hat, double density, bool observed);
/// dr_combine with f_hat = transition_delta under the model.
Tensor dr_predict(const Model& model, const Tensor& s_t, const Tensor& s_next, double density, bool observed,
                  const Tensor* u);

/// Diagonal Gaussian over flattened initial latents.
struct PropensityModel {
  std::vector<double> mean;
  std::vector<double> variance;

  double log_density(std::span<const double> x) const;
  double density(std::span<const double> x) const;
  double density(const Tensor& latent) const { return density(latent.values()); }
};

inline constexpr double kPropensityVarianceFloor = 1e-6;
/// ML fit; variances floored at 1e-6. Fewer than 2 samples -> PropensityError.
PropensityModel fit_propensity(std::span<const Tensor> initial_latents);

/// One DR training sample: transition (s_t, s_next), negative, u-hat, and the
/// episode's initial latent used for the propensity.
struct DrSample {
  Tensor s_t;
  Tensor s_next;
  Tensor s_neg;
  Tensor u;
  Tensor s0;
};
/// Mean over samples of the DR objective; weights are min(1/p(s0), weight_clip).
double dr_loss(const Model& model, std::span<const DrSample> batch, const PropensityModel& propensity,
               double weight_clip = 10.0);

struct TrainConfig {
  int epochs = 200;
  int batch_size = 25;
  ad::AdamConfig adam{5e-4};
  /// 0 uses every transition; otherwise that many per episode and branch, sampled per epoch.
  int transitions_per_episode = 0;
  double dr_weight_clip = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainedModel {
  Model model;
  TrainConfig train;
  int epochs_completed = 0;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_seconds = 0.0;
  double dr_weight_mean = 0.0;     // CRM_CWM only
  double dr_weight_clipped = 0.0;  // fraction of episodes at the clip
};

struct TrainResult {
  TrainedModel trained;
  std::vector<EpochStats> history;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Minimizes the hinge objective (WM, CWM) or the DR objective (CRM_CWM).
/// Numerical failure -> NumericsError naming the epoch and batch.
TrainResult train(std::span<const world::EpisodePair> train_set, const ModelConfig& config,
                  const TrainConfig& train_config, const EpochCallback& on_epoch = {});

}  // namespace cwm::model
