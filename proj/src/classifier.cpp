#include "cwm/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cwm/error.hpp"
#include "cwm/ops.hpp"
#include "cwm/rng.hpp"
#include "cwm/tape.hpp"

namespace cwm::puzzle {

namespace {

using ad::Var;

std::vector<ad::ParamSpec> layout(int in, const ClassifierConfig& c) {
  return {{"fc1.w", {c.hidden1, in}, ad::InitKind::Weight}, {"fc1.b", {c.hidden1}, ad::InitKind::Bias},
          {"fc2.w", {c.hidden2, c.hidden1}, ad::InitKind::Weight}, {"fc2.b", {c.hidden2}, ad::InitKind::Bias},
          {"fc3.w", {2, c.hidden2}, ad::InitKind::Weight}, {"fc3.b", {2}, ad::InitKind::Bias}};
}

Tensor standardized(const Classifier& clf, std::span<const Tensor> inputs, std::span<const std::size_t> rows) {
  const std::size_t d = clf.input_dim();
  Tensor x({static_cast<int>(rows.size()), static_cast<int>(d)});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Tensor& in = inputs[rows[r]];
    if (in.size() != d) throw Error(ErrorKind::SchemaError, "classifier input has the wrong width");
    for (std::size_t j = 0; j < d; ++j) x[r * d + j] = (in[j] - clf.input_mean[j]) / clf.input_scale[j];
  }
  return x;
}

Var logits(std::span<const Var> p, Var x) {
  const Var h1 = ad::relu(ad::linear(x, p[0], p[1]));
  const Var h2 = ad::relu(ad::linear(h1, p[2], p[3]));
  return ad::linear(h2, p[4], p[5]);
}

}  // namespace

void ClassifierConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw Error(ErrorKind::ConfigError, "classifier: hidden widths must be positive");
  if (epochs < 0 || batch_size < 1) throw Error(ErrorKind::ConfigError, "classifier: bad epochs or batch_size");
  if (!(lr > 0.0)) throw Error(ErrorKind::ConfigError, "classifier: lr must be positive");
}

std::vector<std::array<double, 2>> Classifier::predict_proba(std::span<const Tensor> inputs) const {
  std::vector<std::size_t> rows(inputs.size());
  std::iota(rows.begin(), rows.end(), 0);
  ad::Tape tape;
  std::vector<Var> p;
  for (const auto& t : params) p.push_back(tape.constant(t));
  const Tensor z = logits(p, tape.constant(standardized(*this, inputs, rows))).value();
  std::vector<std::array<double, 2>> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double a = z[2 * i], b = z[2 * i + 1];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    out[i] = {ea / (ea + eb), eb / (ea + eb)};
  }
  return out;
}

double Classifier::score(const Tensor& input) const { return predict_proba(std::span(&input, 1))[0][1]; }

Classifier train_classifier(std::span<const Tensor> inputs, std::span<const int> labels, const ClassifierConfig& cfg) {
  cfg.validate();
  if (inputs.size() != labels.size()) throw Error(ErrorKind::SchemaError, "inputs and labels differ in length");
  if (inputs.empty()) throw Error(ErrorKind::TrainingError, "no classifier training data");
  bool seen[2] = {false, false};
  for (int l : labels) {
    if (l != 0 && l != 1) throw Error(ErrorKind::SchemaError, "labels must be 0 or 1");
    seen[l] = true;
  }
  if (!seen[0] || !seen[1]) throw Error(ErrorKind::TrainingError, "classifier data contains a single class");

  const std::size_t d = inputs[0].size();
  const double n = static_cast<double>(inputs.size());
  Classifier clf;
  clf.input_mean.assign(d, 0.0);
  clf.input_scale.assign(d, 0.0);
  for (const auto& x : inputs) {
    if (x.size() != d) throw Error(ErrorKind::SchemaError, "classifier inputs differ in width");
    for (std::size_t j = 0; j < d; ++j) clf.input_mean[j] += x[j];
  }
  for (auto& m : clf.input_mean) m /= n;
  for (const auto& x : inputs)
    for (std::size_t j = 0; j < d; ++j) clf.input_scale[j] += (x[j] - clf.input_mean[j]) * (x[j] - clf.input_mean[j]);
  for (auto& s : clf.input_scale) s = std::max(std::sqrt(s / n), 1e-6);

  clf.specs = layout(static_cast<int>(d), cfg);
  clf.params = ad::init_params(clf.specs, mix_seed(cfg.seed, 1));
  ad::AdamState adam = ad::AdamState::zeros_like(clf.params, ad::AdamConfig{cfg.lr});

  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 100 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      std::vector<int> y;
      for (std::size_t r : rows) y.push_back(labels[r]);
      ad::Tape tape;
      std::vector<Var> p;
      for (const auto& t : clf.params) p.push_back(tape.parameter(t));
      const Var loss = ad::softmax_cross_entropy(logits(p, tape.constant(standardized(clf, inputs, rows))), y);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const Var& v : p) grads.push_back(tape.grad(v));
      ad::adam_step(clf.params, grads, adam);
    }
  }
  return clf;
}

}  // namespace cwm::puzzle
