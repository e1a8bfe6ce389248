#pragma once

#include <span>

// Dense compute kernels behind the autodiff ops. Two implementations share one
// contract: `serial` is a direct-loop reference kept for tests, `omp` is the
// im2col/row-parallel version the engine uses. Every output element is
// accumulated in the same order in both, so results agree bit-for-bit.
namespace cwm::kernels {

struct ConvShape {
  int batch = 1;
  int in_channels = 1;
  int height = 1;
  int width = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int patch() const { return in_channels * kernel * kernel; }
};

namespace serial {

/// C[m,n] = sum_k A[m,k] * B[n,k]
void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);
/// C[m,n] = sum_k A[m,k] * B[k,n]
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);
/// C[m,n] = sum_k A[k,m] * B[k,n]
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
/// Overwrites dx, dw, db. An empty dx skips the input gradient.
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace serial

namespace omp {

void matmul_nt(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);
void matmul_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);
void matmul_tn(std::span<const double> a, std::span<const double> b, std::span<double> c, int m, int k, int n);

void conv2d_forward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward(const ConvShape& s, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw,
                     std::span<double> db);

}  // namespace omp

}  // namespace cwm::kernels
