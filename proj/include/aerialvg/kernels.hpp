#pragma once

// Raw dense kernels over row-major buffers.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// version in `kernels::omp`. The OpenMP versions split work only across
// independent outputs, and each output is accumulated in the same order as
// the serial code, so both produce bit-identical results. The unqualified
// `kernels::` entry points dispatch to the OpenMP versions when the library
// was built with OpenMP.

#include <cstddef>

namespace aerialvg::kernels {

struct GemmShape {
  std::size_t m, n, k;    // C is m x n, inner dimension k
  bool trans_a = false;   // A stored k x m
  bool trans_b = false;   // B stored n x k
};

struct ConvShape {
  std::size_t channels, height, width, stride;
  bool shared_kernel = false;  // one s x s kernel for all channels
};

struct ResizeShape {
  std::size_t channels, in_h, in_w, out_h, out_w;
};

#define AERIALVG_KERNEL_DECLS                                                                 \
  /* c = (accumulate ? c : 0) + op(a) * op(b) */                                              \
  void gemm(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate); \
  void conv2d_down(const ConvShape& s, const double* x, const double* kernel, double* out);    \
  void conv2d_down_backward(const ConvShape& s, const double* x, const double* kernel,         \
                            const double* dout, double* dx, double* dkernel);                  \
  void bilinear_resize(const ResizeShape& s, const double* x, double* out);                    \
  void bilinear_resize_backward(const ResizeShape& s, const double* dout, double* dx);         \
  void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y);           \
  void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y,              \
                             const double* dy, double* dx);                                    \
  void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x,                    \
                       const double* gain, const double* bias, double eps, double* y,          \
                       double* xhat, double* inv_std);                                         \
  void layer_norm_rows_backward(std::size_t rows, std::size_t cols, const double* xhat,        \
                                const double* inv_std, const double* gain, const double* dy,   \
                                double* dx, double* dgain, double* dbias);

namespace serial {
AERIALVG_KERNEL_DECLS
}  // namespace serial

namespace omp {
AERIALVG_KERNEL_DECLS
}  // namespace omp

AERIALVG_KERNEL_DECLS

#undef AERIALVG_KERNEL_DECLS

// Number of worker threads the OpenMP kernels will use (1 without OpenMP).
int max_threads();

// Align-corners source coordinate for output index `dst`.
inline double align_corners_source(std::size_t dst, std::size_t in_len, std::size_t out_len) {
  if (out_len <= 1) return 0.0;
  return static_cast<double>(dst) * static_cast<double>(in_len - 1) /
         static_cast<double>(out_len - 1);
}

}  // namespace aerialvg::kernels
