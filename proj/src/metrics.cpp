#include "cwm/metrics.hpp"

#include <cmath>

#include "cwm/config.hpp"
#include "cwm/error.hpp"
#include "cwm/rng.hpp"

namespace cwm::eval {

namespace {

double sq_distance(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct Ranked {
  int closer = 0;  // references strictly closer than the prediction
  int tied = 0;
};

Ranked rank_counts(const RankingInstance& inst) {
  validate(inst);
  const double d = sq_distance(inst.truth, inst.predicted);
  Ranked r;
  for (const auto& ref : inst.references) {
    const double dr = sq_distance(inst.truth, ref);
    if (dr < d) ++r.closer;
    else if (dr == d) ++r.tied;
  }
  return r;
}

struct EpisodeScore {
  std::vector<int> hit;  // steps 0..horizon
  std::vector<int> rank;
  double mse = 0.0;
};

}  // namespace

void validate(const RankingInstance& inst) {
  if (inst.references.empty()) throw Error(ErrorKind::SchemaError, "ranking needs at least one reference");
  if (inst.predicted.shape() != inst.truth.shape())
    throw Error(ErrorKind::SchemaError, "prediction and truth shapes differ");
  for (const auto& r : inst.references)
    if (r.shape() != inst.truth.shape()) throw Error(ErrorKind::SchemaError, "reference shape differs from truth");
}

int hits_at_1(const RankingInstance& inst) {
  const Ranked r = rank_counts(inst);
  return r.closer == 0 && r.tied == 0 ? 1 : 0;
}

int rank_of(const RankingInstance& inst) { return 1 + rank_counts(inst).closer; }

double mrr(std::span<const RankingInstance> instances) {
  if (instances.empty()) throw Error(ErrorKind::SchemaError, "mrr over no instances");
  double s = 0.0;
  for (const auto& inst : instances) s += 1.0 / rank_of(inst);
  return s / static_cast<double>(instances.size());
}

EvalReport evaluate_rollout(const model::Model& model, std::span<const world::EpisodePair> test_set, int horizon,
                            int n_references, std::uint64_t seed, int jobs, std::vector<LatentTrace>* traces) {
  const std::size_t n = test_set.size();
  if (n < 2) throw Error(ErrorKind::SchemaError, "evaluation needs at least two test episodes");
  if (n_references < 1) throw Error(ErrorKind::SchemaError, "n_references must be >= 1");
  if (jobs < 1) throw Error(ErrorKind::ConfigError, "jobs must be >= 1");
  std::size_t total_frames = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ep = test_set[i];
    if (horizon < 1 || static_cast<std::size_t>(horizon) + 1 > ep.cf_obs.size())
      throw Error(ErrorKind::SchemaError, "horizon " + std::to_string(horizon) + " does not fit episode " +
                                              std::to_string(i) + " with " + std::to_string(ep.cf_obs.size()) +
                                              " counterfactual frames");
    total_frames += ep.factual_obs.size() + ep.cf_obs.size();
  }

  // Encode every frame once; pool[i] lists (episode, branch, t) latents in a fixed order.
  std::vector<std::vector<Tensor>> factual(n), cf(n);
  {
    const int threads = jobs;
    std::exception_ptr failure;
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
    for (std::size_t i = 0; i < n; ++i) {
      try {
        factual[i] = model::encode_many(model, test_set[i].factual_obs);
        cf[i] = model::encode_many(model, test_set[i].cf_obs);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<const Tensor*> pool;
  std::vector<std::size_t> pool_start(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    pool_start[i] = pool.size();
    for (const auto& t : factual[i]) pool.push_back(&t);
    for (const auto& t : cf[i]) pool.push_back(&t);
  }
  pool_start[n] = pool.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t others = total_frames - (pool_start[i + 1] - pool_start[i]);
    if (others < static_cast<std::size_t>(n_references))
      throw Error(ErrorKind::SchemaError, "not enough reference frames outside episode " + std::to_string(i));
  }

  const bool uses_u = model.config.mode != model::Mode::WM;
  std::vector<EpisodeScore> scores(n);
  std::vector<std::vector<Tensor>> dreams(n);
  std::exception_ptr failure;
#pragma omp parallel for num_threads(jobs) schedule(static) if (jobs > 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      Rng rng(mix_seed(seed, i));
      const Tensor u = uses_u ? model::estimate_confounders(model, factual[i]) : Tensor();
      auto dream = model::rollout_latent(model, cf[i][0], uses_u ? &u : nullptr, horizon);

      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < pool.size(); ++j)
        if (j < pool_start[i] || j >= pool_start[i + 1]) candidates.push_back(j);

      EpisodeScore& sc = scores[i];
      double sq = 0.0;
      std::size_t count = 0;
      for (int t = 0; t <= horizon; ++t) {
        RankingInstance inst;
        inst.truth = cf[i][t];
        inst.predicted = t == 0 ? cf[i][0] : dream[t - 1];
        for (int r = 0; r < n_references; ++r) {
          const std::size_t pick = r + rng.below(candidates.size() - r);
          std::swap(candidates[r], candidates[pick]);
          inst.references.push_back(*pool[candidates[r]]);
        }
        const Ranked rk = rank_counts(inst);
        sc.hit.push_back(rk.closer == 0 && rk.tied == 0 ? 1 : 0);
        sc.rank.push_back(1 + rk.closer);
        if (t > 0) {
          sq += sq_distance(inst.predicted, inst.truth);
          count += inst.truth.size();
        }
      }
      sc.mse = sq / static_cast<double>(count);
      dreams[i] = std::move(dream);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  EvalReport rep;
  rep.horizon = horizon;
  rep.n_references = n_references;
  rep.seed = seed;
  rep.episodes = n;
  rep.model = model.config;
  rep.hits_at_1.assign(static_cast<std::size_t>(horizon), 0.0);
  rep.mrr.assign(static_cast<std::size_t>(horizon), 0.0);
  for (const auto& sc : scores) {
    rep.h1_step0 += sc.hit[0];
    for (int t = 1; t <= horizon; ++t) {
      rep.hits_at_1[t - 1] += sc.hit[t];
      rep.mrr[t - 1] += 1.0 / sc.rank[t];
    }
    rep.episode_mse.push_back(sc.mse);
  }
  const double nd = static_cast<double>(n);
  rep.h1_step0 /= nd;
  for (int t = 0; t < horizon; ++t) {
    rep.hits_at_1[t] /= nd;
    rep.mrr[t] /= nd;
  }
  for (double m : rep.episode_mse) rep.mse_mean += m;
  rep.mse_mean /= nd;
  double var = 0.0;
  for (double m : rep.episode_mse) var += (m - rep.mse_mean) * (m - rep.mse_mean);
  rep.mse_std = std::sqrt(var / nd);

  if (traces) {
    traces->clear();
    for (std::size_t i = 0; i < n; ++i) {
      traces->push_back({i, "factual", factual[i]});
      traces->push_back({i, "counterfactual", std::vector<Tensor>(cf[i].begin(), cf[i].begin() + horizon + 1)});
      std::vector<Tensor> d{cf[i][0]};
      d.insert(d.end(), dreams[i].begin(), dreams[i].end());
      traces->push_back({i, "dream", std::move(d)});
    }
  }
  return rep;
}

Json report_to_json(const EvalReport& r) {
  Json j;
  j["horizon"] = r.horizon;
  j["n_references"] = r.n_references;
  j["seed"] = r.seed;
  j["episodes"] = r.episodes;
  j["model"] = model_to_json(r.model);
  j["hits_at_1"] = r.hits_at_1;
  j["mrr"] = r.mrr;
  j["h1_step0"] = r.h1_step0;
  j["mse_mean"] = r.mse_mean;
  j["mse_std"] = r.mse_std;
  j["episode_mse"] = r.episode_mse;
  return j;
}

Json traces_to_json(std::span<const LatentTrace> traces) {
  Json arr = Json::array();
  for (const auto& tr : traces) {
    Json t;
    t["episode"] = tr.episode;
    t["branch"] = tr.branch;
    Json states = Json::array();
    for (const auto& s : tr.states) {
      Json st;
      st["shape"] = s.shape();
      st["values"] = s.values();
      states.push_back(st);
    }
    t["states"] = states;
    arr.push_back(t);
  }
  Json j;
  j["traces"] = arr;
  return j;
}

std::vector<LatentTrace> traces_from_json(const Json& j) {
  JsonFields f(j, "trace file");
  std::vector<Json> arr;
  f.get("traces", arr);
  f.finish();
  std::vector<LatentTrace> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    LatentTrace tr;
    std::vector<Json> states;
    JsonFields g(arr[i], "trace " + std::to_string(i));
    g.get("episode", tr.episode);
    g.get("branch", tr.branch);
    g.get("states", states);
    g.finish();
    for (const auto& sj : states) {
      ad::Shape shape;
      std::vector<double> values;
      JsonFields h(sj, "trace " + std::to_string(i) + " state");
      h.get("shape", shape);
      h.get("values", values);
      h.finish();
      if (ad::numel(shape) != values.size()) h.fail("shape does not match value count");
      tr.states.emplace_back(shape, std::move(values));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace cwm::eval
