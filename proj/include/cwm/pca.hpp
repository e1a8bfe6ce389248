#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "cwm/metrics.hpp"

namespace cwm::eval {

using Point2 = std::array<double, 2>;

struct Pca {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> components;  // unit vectors, or zero when padded
  std::array<double, 2> explained{0.0, 0.0};      // fraction of total variance
  bool rank_deficient = false;                    // fewer than two nonzero directions

  Point2 project(std::span<const double> x) const;
};

/// Top-2 principal directions of the flattened points. Each component's
/// largest-magnitude loading is made positive. Fewer than 2 points -> SchemaError.
Pca fit_pca(std::span<const Tensor> points);
std::vector<Point2> pca_project(std::span<const Tensor> points);

/// One CSV row per state: episode,step,x,y,branch. Fits one PCA over all traces.
std::string traces_to_csv(std::span<const LatentTrace> traces, const Pca& pca);
/// Scatter plot with one polyline per trace, coloured by branch.
std::string traces_to_svg(std::span<const LatentTrace> traces, const Pca& pca);
Pca fit_pca(std::span<const LatentTrace> traces);

}  // namespace cwm::eval
