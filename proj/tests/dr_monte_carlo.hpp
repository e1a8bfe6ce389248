#pragma once

// Monte-Carlo oracle for the unbiasedness of the doubly robust prediction on a
// one-dimensional confounded linear system.
//
//   z, e ~ N(0, 1);  s0 = mu + sd * z;  u = rho * z + sqrt(1 - rho^2) * e (hidden)
//   s1 = a * s0 + b * u                      (true next state)
//   f_hat(s) = (a_model - 1) * s             (biased: wrong slope, ignores u)
//   O ~ Bernoulli(p(s0)),  p(s0) = lo + (hi - lo) * exp(-(s0 - mu)^2 / (2 sd^2))

#include <cmath>

#include "cwm/rng.hpp"
#include "cwm/world_model.hpp"

namespace cwm::testing {

struct DrMonteCarlo {
  double dr_bias = 0.0;  // mean of s_DR - s1
  double dr_se = 0.0;
  double model_bias = 0.0;  // mean of s0 + f_hat(s0) - s1
  double model_se = 0.0;
};

inline DrMonteCarlo dr_monte_carlo(std::uint64_t seed, int episodes) {
  constexpr double mu = 1.0, sd = 0.5, rho = 0.6, a = 0.9, b = 0.3, a_model = 0.7, lo = 0.1, hi = 0.9;
  Rng rng(seed);
  double sum = 0.0, sq = 0.0, msum = 0.0, msq = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const double z = rng.normal(), e = rng.normal();
    const double s0 = mu + sd * z;
    const double u = rho * z + std::sqrt(1.0 - rho * rho) * e;
    const double s1 = a * s0 + b * u;
    const double p = lo + (hi - lo) * std::exp(-(s0 - mu) * (s0 - mu) / (2.0 * sd * sd));
    const bool observed = rng.uniform() < p;
    const ad::Tensor st({1}, s0), next({1}, s1), f_hat({1}, (a_model - 1.0) * s0);
    const double err = model::dr_combine(st, next, f_hat, p, observed)[0] - s1;
    const double merr = s0 + f_hat[0] - s1;
    sum += err;
    sq += err * err;
    msum += merr;
    msq += merr * merr;
  }
  const double n = episodes;
  DrMonteCarlo r;
  r.dr_bias = sum / n;
  r.dr_se = std::sqrt((sq / n - r.dr_bias * r.dr_bias) / (n - 1.0));
  r.model_bias = msum / n;
  r.model_se = std::sqrt((msq / n - r.model_bias * r.model_bias) / (n - 1.0));
  return r;
}

}  // namespace cwm::testing
