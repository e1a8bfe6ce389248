#include <algorithm>
#include <vector>

#include "cwm/kernels.hpp"

namespace cwm::kernels::omp {

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
  std::vector<double> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * k + p];
  matmul_nn(a, bt, c, m, k, n);
}

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* row = c.data() + static_cast<std::size_t>(i) * n;
    std::fill(row, row + n, 0.0);
    for (int p = 0; p < k; ++p) {
      const double aip = a[static_cast<std::size_t>(i) * k + p];
      const double* brow = b.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* row = c.data() + static_cast<std::size_t>(i) * n;
    std::fill(row, row + n, 0.0);
    for (int p = 0; p < k; ++p) {
      const double api = a[static_cast<std::size_t>(p) * m + i];
      const double* brow = b.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) row[j] += api * brow[j];
    }
  }
}

namespace {

// cols[r, p] for one image; r = (c, ky, kx), p = (oy, ox). Padding is zero.
void im2col(const ConvShape& s, const double* x, double* cols) {
  const int oh = s.out_height(), ow = s.out_width();
  const int positions = oh * ow;
  int r = 0;
  for (int c = 0; c < s.in_channels; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * s.height * s.width;
    for (int ky = 0; ky < s.kernel; ++ky)
      for (int kx = 0; kx < s.kernel; ++kx, ++r) {
        double* out = cols + static_cast<std::size_t>(r) * positions;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            out[oy * ow + ox] =
                (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) ? 0.0 : plane[iy * s.width + ix];
          }
        }
      }
  }
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const int positions = s.out_height() * s.out_width();
  const int patch = s.patch();
  const std::size_t in_size = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_size = static_cast<std::size_t>(s.out_channels) * positions;
#pragma omp parallel
  {
    std::vector<double> cols(static_cast<std::size_t>(patch) * positions);
#pragma omp for schedule(static)
    for (int img = 0; img < s.batch; ++img) {
      im2col(s, x.data() + img * in_size, cols.data());
      double* out = y.data() + img * out_size;
      for (int o = 0; o < s.out_channels; ++o) {
        double* row = out + static_cast<std::size_t>(o) * positions;
        std::fill(row, row + positions, 0.0);
        for (int r = 0; r < patch; ++r) {
          const double wr = w[static_cast<std::size_t>(o) * patch + r];
          const double* crow = cols.data() + static_cast<std::size_t>(r) * positions;
          for (int p = 0; p < positions; ++p) row[p] += wr * crow[p];
        }
        if (!bias.empty())
          for (int p = 0; p < positions; ++p) row[p] += bias[o];
      }
    }
  }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const int oh = s.out_height(), ow = s.out_width();
  const int positions = oh * ow;
  const int patch = s.patch();
  const std::size_t in_size = static_cast<std::size_t>(s.in_channels) * s.height * s.width;
  const std::size_t out_size = static_cast<std::size_t>(s.out_channels) * positions;
  std::fill(dw.begin(), dw.end(), 0.0);
  std::fill(db.begin(), db.end(), 0.0);
  std::vector<double> cols(static_cast<std::size_t>(patch) * positions);
  std::vector<double> dcols(cols.size());

  for (int img = 0; img < s.batch; ++img) {
    im2col(s, x.data() + img * in_size, cols.data());
    const double* g = dy.data() + img * out_size;

#pragma omp parallel for schedule(static)
    for (int o = 0; o < s.out_channels; ++o) {
      const double* grow = g + static_cast<std::size_t>(o) * positions;
      for (int r = 0; r < patch; ++r) {
        const double* crow = cols.data() + static_cast<std::size_t>(r) * positions;
        double acc = 0.0;
        for (int p = 0; p < positions; ++p) acc += grow[p] * crow[p];
        dw[static_cast<std::size_t>(o) * patch + r] += acc;
      }
      double acc = 0.0;
      for (int p = 0; p < positions; ++p) acc += grow[p];
      db[o] += acc;
    }

    if (dx.empty()) continue;
#pragma omp parallel for schedule(static)
    for (int r = 0; r < patch; ++r) {
      double* drow = dcols.data() + static_cast<std::size_t>(r) * positions;
      std::fill(drow, drow + positions, 0.0);
      for (int o = 0; o < s.out_channels; ++o) {
        const double wr = w[static_cast<std::size_t>(o) * patch + r];
        const double* grow = g + static_cast<std::size_t>(o) * positions;
        for (int p = 0; p < positions; ++p) drow[p] += wr * grow[p];
      }
    }

    double* dimg = dx.data() + img * in_size;
    std::fill(dimg, dimg + in_size, 0.0);
    int r = 0;
    for (int c = 0; c < s.in_channels; ++c) {
      double* plane = dimg + static_cast<std::size_t>(c) * s.height * s.width;
      for (int ky = 0; ky < s.kernel; ++ky)
        for (int kx = 0; kx < s.kernel; ++kx, ++r) {
          const double* drow = dcols.data() + static_cast<std::size_t>(r) * positions;
          for (int p = 0; p < positions; ++p) {
            const int iy = (p / ow) * s.stride - s.pad + ky;
            const int ix = (p % ow) * s.stride - s.pad + kx;
            if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) continue;
            plane[iy * s.width + ix] += drow[p];
          }
        }
    }
  }
}

}  // namespace cwm::kernels::omp
