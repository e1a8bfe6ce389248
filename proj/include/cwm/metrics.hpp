#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cwm/ball_world.hpp"
#include "cwm/json_fields.hpp"
#include "cwm/world_model.hpp"

namespace cwm::eval {

using ad::Tensor;

struct RankingInstance {
  Tensor predicted;
  Tensor truth;
  std::vector<Tensor> references;
};

/// SchemaError unless there is at least one reference and all shapes agree.
void validate(const RankingInstance& inst);
/// 1 iff the prediction is strictly closer to the truth than every reference.
int hits_at_1(const RankingInstance& inst);
/// 1 + number of references strictly closer to the truth than the prediction.
int rank_of(const RankingInstance& inst);
double mrr(std::span<const RankingInstance> instances);

struct EvalReport {
  int horizon = 0;
  int n_references = 0;
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  model::ModelConfig model;
  std::vector<double> hits_at_1;  // index t-1 holds step t
  std::vector<double> mrr;
  double h1_step0 = 0.0;
  std::vector<double> episode_mse;
  double mse_mean = 0.0;
  double mse_std = 0.0;  // population std over episodes
};

/// Latent trajectories of one episode, for plotting.
struct LatentTrace {
  std::size_t episode = 0;
  std::string branch;  // "factual", "counterfactual" or "dream"
  std::vector<Tensor> states;
};

/// Dreams each test episode from its counterfactual first frame and scores
/// every step against the encoded truth and `n_references` frames drawn
/// without replacement from the other episodes. `jobs` > 1 scores episodes in
/// parallel; results do not depend on it.
EvalReport evaluate_rollout(const model::Model& model, std::span<const world::EpisodePair> test_set, int horizon,
                            int n_references, std::uint64_t seed, int jobs = 1,
                            std::vector<LatentTrace>* traces = nullptr);

Json report_to_json(const EvalReport& report);

Json traces_to_json(std::span<const LatentTrace> traces);
std::vector<LatentTrace> traces_from_json(const Json& j);

}  // namespace cwm::eval
