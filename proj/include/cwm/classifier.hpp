#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cwm/optim.hpp"
#include "cwm/tensor.hpp"

namespace cwm::puzzle {

using ad::Tensor;

struct ClassifierConfig {
  int hidden1 = 256;
  int hidden2 = 128;
  int epochs = 200;
  int batch_size = 64;
  double lr = 3e-4;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Two-way MLP (hidden1 ReLU, hidden2 ReLU, 2 logits) over flattened latents,
/// with inputs standardized by the training-set moments.
struct Classifier {
  std::vector<double> input_mean;
  std::vector<double> input_scale;
  std::vector<ad::ParamSpec> specs;
  std::vector<Tensor> params;

  std::size_t input_dim() const { return input_mean.size(); }
  /// Softmax class probabilities per input.
  std::vector<std::array<double, 2>> predict_proba(std::span<const Tensor> inputs) const;
  /// Probability of class 1.
  double score(const Tensor& input) const;
};

/// Labels are 0 or 1 and both must occur (TrainingError otherwise).
Classifier train_classifier(std::span<const Tensor> inputs, std::span<const int> labels, const ClassifierConfig& cfg);

}  // namespace cwm::puzzle
