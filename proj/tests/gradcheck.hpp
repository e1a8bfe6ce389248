#pragma once

// Central finite-difference oracle for the autodiff engine. Test-only: it
// only ever calls the forward pass.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "cwm/tape.hpp"

namespace cwm::testing {

struct GradCheck {
  double worst_excess = 0.0;  // max over elements of |a-n| - tol(a,n); <= 0 means pass
  double max_abs_diff = 0.0;
  std::size_t checked = 0;
  bool ok() const { return worst_excess <= 0.0; }
};

inline double forward_loss(const ad::GraphFn& fn, std::span<const ad::Tensor> params,
                           std::span<const ad::Tensor> inputs) {
  ad::Tape tape;
  std::vector<ad::Var> p, in;
  for (const auto& t : params) p.push_back(tape.constant(t));
  for (const auto& t : inputs) in.push_back(tape.constant(t));
  return tape.value(fn(tape, p, in)).item();
}

/// Passes when |analytic - numeric| <= rel * max(|analytic|, |numeric|) + abs_floor.
inline GradCheck check_gradients(const ad::GraphFn& fn, std::vector<ad::Tensor> params,
                                 std::span<const ad::Tensor> inputs, double rel, double abs_floor,
                                 double h = 1e-5) {
  const ad::Evaluation eval = ad::evaluate_with_gradients(fn, params, inputs);
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + h;
      const double up = forward_loss(fn, params, inputs);
      params[p][i] = orig - h;
      const double down = forward_loss(fn, params, inputs);
      params[p][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = eval.grads[p][i];
      const double diff = std::abs(analytic - numeric);
      const double tol = rel * std::max(std::abs(analytic), std::abs(numeric)) + abs_floor;
      out.worst_excess = std::max(out.worst_excess, diff - tol);
      out.max_abs_diff = std::max(out.max_abs_diff, diff);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace cwm::testing
