#include "aerialvg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace aerialvg::kernels {

namespace omp {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 14;

#define AERIALVG_PRAGMA(x) _Pragma(#x)
#define AERIALVG_PARALLEL_FOR(work) \
  AERIALVG_PRAGMA(omp parallel for schedule(static) if ((work) >= kParallelThreshold))
#include "kernels_impl.inc"
#undef AERIALVG_PARALLEL_FOR

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void gemm(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate) {
  omp::gemm(s, a, b, c, accumulate);
}
void conv2d_down(const ConvShape& s, const double* x, const double* kernel, double* out) {
  omp::conv2d_down(s, x, kernel, out);
}
void conv2d_down_backward(const ConvShape& s, const double* x, const double* kernel,
                          const double* dout, double* dx, double* dkernel) {
  omp::conv2d_down_backward(s, x, kernel, dout, dx, dkernel);
}
void bilinear_resize(const ResizeShape& s, const double* x, double* out) {
  omp::bilinear_resize(s, x, out);
}
void bilinear_resize_backward(const ResizeShape& s, const double* dout, double* dx) {
  omp::bilinear_resize_backward(s, dout, dx);
}
void softmax_rows(std::size_t rows, std::size_t cols, const double* x, double* y) {
  omp::softmax_rows(rows, cols, x, y);
}
void softmax_rows_backward(std::size_t rows, std::size_t cols, const double* y, const double* dy,
                           double* dx) {
  omp::softmax_rows_backward(rows, cols, y, dy, dx);
}
void layer_norm_rows(std::size_t rows, std::size_t cols, const double* x, const double* gain,
                     const double* bias, double eps, double* y, double* xhat, double* inv_std) {
  omp::layer_norm_rows(rows, cols, x, gain, bias, eps, y, xhat, inv_std);
}
void layer_norm_rows_backward(std::size_t rows, std::size_t cols, const double* xhat,
                              const double* inv_std, const double* gain, const double* dy,
                              double* dx, double* dgain, double* dbias) {
  omp::layer_norm_rows_backward(rows, cols, xhat, inv_std, gain, dy, dx, dgain, dbias);
}

}  // namespace aerialvg::kernels
