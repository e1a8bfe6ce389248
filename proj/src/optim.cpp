#include "cwm/optim.hpp"

#include <cmath>

#include "cwm/error.hpp"
#include "cwm/rng.hpp"

namespace cwm::ad {

AdamState AdamState::zeros_like(std::span<const Tensor> params, AdamConfig hyper) {
  AdamState s;
  s.hyper = hyper;
  for (const Tensor& p : params) {
    s.first.emplace_back(p.shape(), 0.0);
    s.second.emplace_back(p.shape(), 0.0);
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.first.size() || params.size() != state.second.size())
    throw Error(ErrorKind::GraphError, "adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.first[i].shape())
      throw Error(ErrorKind::GraphError, "adam_step: shape mismatch for parameter " + std::to_string(i));

  const AdamConfig& h = state.hyper;
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    Tensor& m = state.first[i];
    Tensor& v = state.second[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g[j];
      v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g[j] * g[j];
      p[j] -= h.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h.eps);
    }
  }
}

double glorot_limit(const Shape& shape) {
  double fan_in = 1.0, fan_out = 1.0;
  if (shape.size() == 2) {
    fan_out = shape[0];
    fan_in = shape[1];
  } else if (shape.size() == 4) {
    const double receptive = static_cast<double>(shape[2]) * shape[3];
    fan_out = shape[0] * receptive;
    fan_in = shape[1] * receptive;
  } else if (shape.size() == 1) {
    fan_in = fan_out = shape[0];
  }
  return std::sqrt(6.0 / (fan_in + fan_out));
}

std::vector<Tensor> init_params(std::span<const ParamSpec> specs, std::uint64_t seed) {
  std::vector<Tensor> out;
  out.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& s = specs[i];
    switch (s.kind) {
      case InitKind::Bias:
        out.emplace_back(s.shape, 0.0);
        break;
      case InitKind::Gain:
        out.emplace_back(s.shape, 1.0);
        break;
      case InitKind::Weight: {
        Rng rng(mix_seed(seed, i));
        const double a = glorot_limit(s.shape);
        Tensor t(s.shape);
        for (double& v : t.values()) v = rng.uniform(-a, a);
        out.push_back(std::move(t));
        break;
      }
    }
  }
  return out;
}

}  // namespace cwm::ad
