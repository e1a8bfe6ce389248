#include "cwm/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "cwm/error.hpp"

namespace cwm::eval {

Point2 Pca::project(std::span<const double> x) const {
  Point2 p{0.0, 0.0};
  for (int c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < mean.size(); ++i) p[c] += (x[i] - mean[i]) * components[c][i];
  return p;
}

Pca fit_pca(std::span<const Tensor> points) {
  if (points.size() < 2) throw Error(ErrorKind::SchemaError, "PCA needs at least two points");
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw Error(ErrorKind::SchemaError, "PCA points differ in size");
  const double n = static_cast<double>(points.size());

  Pca out;
  out.mean.assign(dim, 0.0);
  for (const auto& p : points)
    for (std::size_t i = 0; i < dim; ++i) out.mean[i] += p[i];
  for (auto& m : out.mean) m /= n;

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  Eigen::VectorXd x(static_cast<Eigen::Index>(dim));
  for (const auto& p : points) {
    for (std::size_t i = 0; i < dim; ++i) x[static_cast<Eigen::Index>(i)] = p[i] - out.mean[i];
    cov.noalias() += x * x.transpose();
  }
  cov /= n;

  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double total = std::max(0.0, cov.trace());
  const double tol = std::max(total, std::numeric_limits<double>::min()) * 1e-12;
  int kept = 0;
  for (int c = 0; c < 2; ++c) {
    out.components[c].assign(dim, 0.0);
    const Eigen::Index col = static_cast<Eigen::Index>(dim) - 1 - c;
    if (col < 0 || !(vals[col] > tol)) continue;
    ++kept;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0) v = -v;
    for (std::size_t i = 0; i < dim; ++i) out.components[c][i] = v[static_cast<Eigen::Index>(i)];
    out.explained[c] = vals[col] / total;
  }
  out.rank_deficient = kept < 2;
  return out;
}

std::vector<Point2> pca_project(std::span<const Tensor> points) {
  const Pca pca = fit_pca(points);
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pca.project(p.values()));
  return out;
}

Pca fit_pca(std::span<const LatentTrace> traces) {
  std::vector<Tensor> all;
  for (const auto& tr : traces) all.insert(all.end(), tr.states.begin(), tr.states.end());
  return fit_pca(all);
}

std::string traces_to_csv(std::span<const LatentTrace> traces, const Pca& pca) {
  std::string out = "episode,step,x,y,branch\n";
  char buf[96];
  for (const auto& tr : traces)
    for (std::size_t t = 0; t < tr.states.size(); ++t) {
      const Point2 p = pca.project(tr.states[t].values());
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,", tr.episode, t, p[0], p[1]);
      out += buf;
      out += tr.branch;
      out += '\n';
    }
  return out;
}

std::string traces_to_svg(std::span<const LatentTrace> traces, const Pca& pca) {
  constexpr double kSize = 480.0, kMargin = 24.0;
  std::vector<std::vector<Point2>> pts;
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  bool first = true;
  for (const auto& tr : traces) {
    pts.emplace_back();
    for (const auto& s : tr.states) {
      const Point2 p = pca.project(s.values());
      pts.back().push_back(p);
      if (first) {
        lo_x = hi_x = p[0];
        lo_y = hi_y = p[1];
        first = false;
      }
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
  }
  const double span_x = hi_x - lo_x > 0 ? hi_x - lo_x : 1.0;
  const double span_y = hi_y - lo_y > 0 ? hi_y - lo_y : 1.0;
  auto sx = [&](double v) { return kMargin + (v - lo_x) / span_x * (kSize - 2 * kMargin); };
  auto sy = [&](double v) { return kSize - kMargin - (v - lo_y) / span_y * (kSize - 2 * kMargin); };
  auto colour = [](const std::string& branch) {
    if (branch == "dream") return "#d62728";
    if (branch == "counterfactual") return "#1f77b4";
    return "#7f7f7f";
  };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"480\" viewBox=\"0 0 480 480\">\n";
  out += "<rect width=\"480\" height=\"480\" fill=\"white\"/>\n";
  char buf[128];
  for (std::size_t i = 0; i < traces.size(); ++i) {
    out += "<polyline fill=\"none\" stroke-width=\"1.5\" stroke=\"";
    out += colour(traces[i].branch);
    out += "\" points=\"";
    for (const auto& p : pts[i]) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", sx(p[0]), sy(p[1]));
      out += buf;
    }
    out += "\"/>\n";
    for (const auto& p : pts[i]) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\"/>\n", sx(p[0]), sy(p[1]),
                    colour(traces[i].branch));
      out += buf;
    }
  }
  int row = 0;
  for (const char* b : {"factual", "counterfactual", "dream"}) {
    std::snprintf(buf, sizeof buf, "<text x=\"8\" y=\"%d\" font-size=\"11\" fill=\"%s\">%s</text>\n", 14 + 13 * row++,
                  colour(b), b);
    out += buf;
  }
  out += "</svg>\n";
  return out;
}

}  // namespace cwm::eval
