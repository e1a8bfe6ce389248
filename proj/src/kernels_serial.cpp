#include "cwm/kernels.hpp"

#include <algorithm>

namespace cwm::kernels::serial {

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
}

void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
}

namespace {

// Input value at a (possibly padded) patch position; padding reads as zero.
double pixel(const ConvShape& s, std::span<const double> x, int img, int c, int iy, int ix) {
  if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) return 0.0;
  return x[((static_cast<std::size_t>(img) * s.in_channels + c) * s.height + iy) * s.width + ix];
}

}  // namespace

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const int oh = s.out_height(), ow = s.out_width();
  for (int img = 0; img < s.batch; ++img)
    for (int o = 0; o < s.out_channels; ++o)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          int r = 0;
          for (int c = 0; c < s.in_channels; ++c)
            for (int ky = 0; ky < s.kernel; ++ky)
              for (int kx = 0; kx < s.kernel; ++kx, ++r)
                acc += w[static_cast<std::size_t>(o) * s.patch() + r] *
                       pixel(s, x, img, c, oy * s.stride - s.pad + ky, ox * s.stride - s.pad + kx);
          y[((static_cast<std::size_t>(img) * s.out_channels + o) * oh + oy) * ow + ox] =
              acc + (bias.empty() ? 0.0 : bias[o]);
        }
}

void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db) {
  const int oh = s.out_height(), ow = s.out_width();
  const int positions = oh * ow;
  const int patch = s.patch();
  std::fill(dx.begin(), dx.end(), 0.0);
  std::fill(dw.begin(), dw.end(), 0.0);
  std::fill(db.begin(), db.end(), 0.0);
  auto grad_out = [&](int img, int o, int p) {
    return dy[(static_cast<std::size_t>(img) * s.out_channels + o) * positions + p];
  };

  for (int img = 0; img < s.batch; ++img) {
    // Weight gradient: per-image partial sums, added image by image.
    for (int o = 0; o < s.out_channels; ++o) {
      int r = 0;
      for (int c = 0; c < s.in_channels; ++c)
        for (int ky = 0; ky < s.kernel; ++ky)
          for (int kx = 0; kx < s.kernel; ++kx, ++r) {
            double acc = 0.0;
            for (int p = 0; p < positions; ++p) {
              const int oy = p / ow, ox = p % ow;
              acc += grad_out(img, o, p) * pixel(s, x, img, c, oy * s.stride - s.pad + ky, ox * s.stride - s.pad + kx);
            }
            dw[static_cast<std::size_t>(o) * patch + r] += acc;
          }
      double acc = 0.0;
      for (int p = 0; p < positions; ++p) acc += grad_out(img, o, p);
      db[o] += acc;
    }
    // Input gradient: patch-gradient per (r, p), scattered in r-major order.
    if (dx.empty()) continue;
    int r = 0;
    for (int c = 0; c < s.in_channels; ++c)
      for (int ky = 0; ky < s.kernel; ++ky)
        for (int kx = 0; kx < s.kernel; ++kx, ++r)
          for (int p = 0; p < positions; ++p) {
            const int iy = (p / ow) * s.stride - s.pad + ky;
            const int ix = (p % ow) * s.stride - s.pad + kx;
            if (iy < 0 || ix < 0 || iy >= s.height || ix >= s.width) continue;
            double acc = 0.0;
            for (int o = 0; o < s.out_channels; ++o)
              acc += w[static_cast<std::size_t>(o) * patch + r] * grad_out(img, o, p);
            dx[((static_cast<std::size_t>(img) * s.in_channels + c) * s.height + iy) * s.width + ix] += acc;
          }
  }
}

}  // namespace cwm::kernels::serial
