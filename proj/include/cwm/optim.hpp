#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cwm/tensor.hpp"

namespace cwm::ad {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates per parameter plus the step counter.
struct AdamState {
  AdamConfig hyper;
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::int64_t step = 0;

  static AdamState zeros_like(std::span<const Tensor> params, AdamConfig hyper = {});
};

/// Bias-corrected Adam update, in place. Throws GraphError on shape mismatch.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

enum class InitKind { Weight, Bias, Gain };

/// Shape of one learnable tensor. Weight fans come from the shape:
/// [out, in] for dense layers, [O, C, k, k] for convolutions.
struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind kind = InitKind::Weight;
};

/// Glorot-uniform weights, zero biases, unit gains; deterministic per seed.
std::vector<Tensor> init_params(std::span<const ParamSpec> specs, std::uint64_t seed);

/// Half-width a = sqrt(6 / (fan_in + fan_out)) of the uniform init for `shape`.
double glorot_limit(const Shape& shape);

}  // namespace cwm::ad
