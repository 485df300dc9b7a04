#pragma once

#include "treadline/tensor.hpp"

namespace treadline {

struct GemmOpts {
  bool transpose_a = false;
  bool transpose_b = false;
  // Explicit thread count; 1 selects the deterministic single-thread path.
  // Accumulation order per output element is the same for any thread count,
  // so results are bitwise reproducible either way.
  int threads = 1;
};

// c[i,j] = sum_k opA(a)[i,k] * opB(b)[k,j] for rank-2 tensors.
//
// The f32 path is register/cache blocked: row panels are packed and padded
// to full micro-kernel strips, so the cost of the M dimension is quantized
// to strip multiples, and matrices with few rows take a separate unpacked
// kernel. Channel-latency staircases measured by the profiler come from
// exactly these tiling quanta.
template <typename T>
TensorT<T> gemm(const TensorT<T>& a, const TensorT<T>& b, const GemmOpts& opts = {});

template <typename T>
TensorT<T> gemm(const TensorT<T>& a, const TensorT<T>& b, bool transpose_a, bool transpose_b,
                int threads = 1) {
  return gemm(a, b, GemmOpts{transpose_a, transpose_b, threads});
}

// Micro-kernel strip height of the packed f32 path, exposed for tests and
// benchmarks that reason about tread widths.
int gemm_row_strip_f32();
// Largest row count handled by the unpacked small-matrix kernel.
int gemm_direct_row_limit();

// Lowers a 3x3 convolution input [N,C,H,W] to a column matrix
// [(C*9) x (N*H'*W')] such that conv(input, w) == gemm(w_mat, cols).
// Row index is c*9 + ky*3 + kx; column index is (n*H' + oy)*W' + ox.
template <typename T>
TensorT<T> im2col(const TensorT<T>& input, int kernel, int stride, int pad);

// Transpose of im2col: scatter-adds column-matrix gradients back onto the
// input gradient. `dinput` must be preallocated to the input shape.
template <typename T>
void col2im_add(const TensorT<T>& cols, int kernel, int stride, int pad, TensorT<T>& dinput);

// Output spatial extent of a 3x3 (or 1x1) convolution along one axis.
inline int64_t conv_out_extent(int64_t in, int kernel, int stride, int pad) {
  const int64_t padded = in + 2 * pad - kernel;
  if (padded < 0) throw ParamError("spatial extent smaller than kernel");
  return padded / stride + 1;
}

}  // namespace treadline
