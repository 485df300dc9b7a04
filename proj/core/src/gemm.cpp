#include "treadline/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <thread>
#include <vector>

namespace treadline {

namespace {

// Micro-kernel geometry. MR is the packed row-strip height: panels are
// zero-padded to full strips and the kernel always computes all MR rows,
// so compute cost steps at ceil(M/MR). NR keeps a strip's accumulators
// within the vector register file.
template <typename T>
struct KernelShape;

template <>
struct KernelShape<float> {
  static constexpr int MR = 16;
  static constexpr int NR = 8;
  static constexpr int KC = 256;
  static constexpr int MC = 64;
};

template <>
struct KernelShape<double> {
  static constexpr int MR = 8;
  static constexpr int NR = 4;
  static constexpr int KC = 256;
  static constexpr int MC = 64;
};

// Matrices at or below this many result rows skip packing entirely; the
// packing overhead dominates skinny products and real kernels switch
// strategies the same way.
constexpr int kDirectRowLimit = 8;

template <typename T>
inline T load_elem(const T* m, int64_t rows, int64_t cols, int64_t r, int64_t c, bool transpose) {
  (void)rows;
  return transpose ? m[c * rows + r] : m[r * cols + c];
}

// k-outer / row-mid / col-inner loops over unpacked operands. The result
// tile stays cache resident because M is small.
template <typename T>
void gemm_direct(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k, bool ta, bool tb) {
  for (int64_t kk = 0; kk < k; ++kk) {
    for (int64_t i = 0; i < m; ++i) {
      const T aik = ta ? a[kk * m + i] : a[i * k + kk];
      T* crow = c + i * n;
      if (!tb) {
        const T* brow = b + kk * n;
        for (int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      } else {
        for (int64_t j = 0; j < n; ++j) crow[j] += aik * b[j * k + kk];
      }
    }
  }
}

// Packs rows [m0, m0+mc) x cols [k0, k0+kc) of opA(a) into MR-strips,
// zero-filling the tail strip to full height.
template <typename T, int MR>
void pack_a(const T* a, int64_t m, int64_t k, bool ta, int64_t m0, int64_t mc, int64_t k0,
            int64_t kc, T* out) {
  const int64_t strips = (mc + MR - 1) / MR;
  for (int64_t s = 0; s < strips; ++s) {
    const int64_t base = m0 + s * MR;
    for (int64_t kk = 0; kk < kc; ++kk) {
      for (int r = 0; r < MR; ++r) {
        const int64_t row = base + r;
        T v = T(0);
        if (row < m0 + mc) v = ta ? a[(k0 + kk) * m + row] : a[row * k + (k0 + kk)];
        out[(s * kc + kk) * MR + r] = v;
      }
    }
  }
}

// Packs rows [k0, k0+kc) x cols [n0, n0+nc) of opB(b) into NR-strips,
// zero-filling the tail strip.
template <typename T, int NR>
void pack_b(const T* b, int64_t k, int64_t n, bool tb, int64_t k0, int64_t kc, int64_t n0,
            int64_t nc, T* out) {
  const int64_t strips = (nc + NR - 1) / NR;
  for (int64_t s = 0; s < strips; ++s) {
    const int64_t base = n0 + s * NR;
    const int64_t valid = std::min<int64_t>(NR, n0 + nc - base);
    for (int64_t kk = 0; kk < kc; ++kk) {
      T* dst = out + (s * kc + kk) * NR;
      if (!tb) {
        const T* src = b + (k0 + kk) * n + base;
        int j = 0;
        for (; j < valid; ++j) dst[j] = src[j];
        for (; j < NR; ++j) dst[j] = T(0);
      } else {
        int j = 0;
        for (; j < valid; ++j) dst[j] = b[(base + j) * k + (k0 + kk)];
        for (; j < NR; ++j) dst[j] = T(0);
      }
    }
  }
}

// MR x NR register tile over one packed A strip and one packed B strip.
// Always computes the full tile; the caller bounds the writeback.
template <typename T, int MR, int NR>
void micro_kernel(const T* ap, const T* bp, int64_t kc, T* c, int64_t ldc, int valid_m,
                  int valid_n) {
  T acc[MR][NR] = {};
  for (int64_t kk = 0; kk < kc; ++kk) {
    const T* arow = ap + kk * MR;
    const T* brow = bp + kk * NR;
    for (int i = 0; i < MR; ++i) {
      const T ai = arow[i];
      for (int j = 0; j < NR; ++j) acc[i][j] += ai * brow[j];
    }
  }
  for (int i = 0; i < valid_m; ++i) {
    T* crow = c + i * ldc;
    for (int j = 0; j < valid_n; ++j) crow[j] += acc[i][j];
  }
}

template <typename T>
void gemm_packed_range(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k, bool ta,
                       bool tb, int64_t n_begin, int64_t n_end) {
  using KS = KernelShape<T>;
  constexpr int MR = KS::MR;
  constexpr int NR = KS::NR;
  constexpr int KC = KS::KC;
  constexpr int MC = KS::MC;

  const int64_t nc_total = n_end - n_begin;
  if (nc_total <= 0) return;

  const int64_t b_strips = (nc_total + NR - 1) / NR;
  std::vector<T> packed_b(static_cast<size_t>(b_strips * KC * NR));
  std::vector<T> packed_a(static_cast<size_t>(((MC + MR - 1) / MR) * KC * MR));

  for (int64_t k0 = 0; k0 < k; k0 += KC) {
    const int64_t kc = std::min<int64_t>(KC, k - k0);
    pack_b<T, NR>(b, k, n, tb, k0, kc, n_begin, nc_total, packed_b.data());
    for (int64_t m0 = 0; m0 < m; m0 += MC) {
      const int64_t mc = std::min<int64_t>(MC, m - m0);
      pack_a<T, MR>(a, m, k, ta, m0, mc, k0, kc, packed_a.data());
      const int64_t a_strips = (mc + MR - 1) / MR;
      for (int64_t js = 0; js < b_strips; ++js) {
        const int64_t j0 = n_begin + js * NR;
        const int valid_n = static_cast<int>(std::min<int64_t>(NR, n_end - j0));
        const T* bp = packed_b.data() + js * kc * NR;
        for (int64_t is = 0; is < a_strips; ++is) {
          const int64_t i0 = m0 + is * MR;
          const int valid_m = static_cast<int>(std::min<int64_t>(MR, m - i0));
          const T* ap = packed_a.data() + is * kc * MR;
          micro_kernel<T, MR, NR>(ap, bp, kc, c + i0 * n + j0, n, valid_m, valid_n);
        }
      }
    }
  }
}

}  // namespace

int gemm_row_strip_f32() { return KernelShape<float>::MR; }
int gemm_direct_row_limit() { return kDirectRowLimit; }

template <typename T>
TensorT<T> gemm(const TensorT<T>& a, const TensorT<T>& b, const GemmOpts& opts) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("gemm expects rank-2 tensors");
  if (opts.threads < 1) throw ParamError("gemm thread count must be >= 1");

  const int64_t m = opts.transpose_a ? a.extent(1) : a.extent(0);
  const int64_t ka = opts.transpose_a ? a.extent(0) : a.extent(1);
  const int64_t kb = opts.transpose_b ? b.extent(1) : b.extent(0);
  const int64_t n = opts.transpose_b ? b.extent(0) : b.extent(1);
  if (ka != kb)
    throw ShapeError("gemm inner dimensions disagree: " + a.shape_str() + " vs " + b.shape_str());

  TensorT<T> c({m, n});

  // Path choice must not depend on the thread count, or results could
  // change with it. Skinny products run direct and single-threaded.
  const bool direct = m <= kDirectRowLimit && !opts.transpose_a && !opts.transpose_b;
  if (direct) {
    gemm_direct(a.data(), b.data(), c.data(), m, n, ka, false, false);
  } else if (opts.threads == 1 || n < 2 * KernelShape<T>::NR) {
    gemm_packed_range(a.data(), b.data(), c.data(), m, n, ka, opts.transpose_a, opts.transpose_b,
                      0, n);
  } else {
    // Column partition: each worker owns a disjoint slice of C, and the
    // per-element accumulation order is identical to the single-thread path.
    const int nthreads = static_cast<int>(std::min<int64_t>(opts.threads, n));
    std::vector<std::thread> workers;
    workers.reserve(static_cast<size_t>(nthreads));
    const int64_t chunk = (n + nthreads - 1) / nthreads;
    for (int t = 0; t < nthreads; ++t) {
      const int64_t begin = t * chunk;
      const int64_t end = std::min<int64_t>(n, begin + chunk);
      if (begin >= end) break;
      workers.emplace_back([&, begin, end] {
        gemm_packed_range(a.data(), b.data(), c.data(), m, n, ka, opts.transpose_a,
                          opts.transpose_b, begin, end);
      });
    }
    for (auto& w : workers) w.join();
  }

  if (checked_mode()) c.require_finite("gemm");
  return c;
}

template <typename T>
TensorT<T> im2col(const TensorT<T>& input, int kernel, int stride, int pad) {
  if (input.rank() != 4) throw ShapeError("im2col expects [N,C,H,W]");
  if (kernel != 3) throw ParamError("im2col supports 3x3 kernels only");
  if (stride != 1 && stride != 2) throw ParamError("im2col stride must be 1 or 2");
  if (pad != 0 && pad != 1) throw ParamError("im2col padding must be 0 or 1");

  const int64_t n = input.extent(0), ch = input.extent(1);
  const int64_t h = input.extent(2), w = input.extent(3);
  const int64_t oh = conv_out_extent(h, kernel, stride, pad);
  const int64_t ow = conv_out_extent(w, kernel, stride, pad);

  TensorT<T> cols({ch * kernel * kernel, n * oh * ow});
  const T* src = input.data();
  T* dst = cols.data();
  const int64_t col_count = n * oh * ow;

  for (int64_t c = 0; c < ch; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        T* row = dst + ((c * kernel + ky) * kernel + kx) * col_count;
        for (int64_t b = 0; b < n; ++b) {
          const T* plane = src + (b * ch + c) * h * w;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride + ky - pad;
            T* out = row + (b * oh + oy) * ow;
            if (iy < 0 || iy >= h) {
              std::fill(out, out + ow, T(0));
              continue;
            }
            const T* in_row = plane + iy * w;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride + kx - pad;
              out[ox] = (ix >= 0 && ix < w) ? in_row[ix] : T(0);
            }
          }
        }
      }
    }
  }

  if (checked_mode()) cols.require_finite("im2col");
  return cols;
}

template <typename T>
void col2im_add(const TensorT<T>& cols, int kernel, int stride, int pad, TensorT<T>& dinput) {
  if (dinput.rank() != 4) throw ShapeError("col2im expects [N,C,H,W] gradient");
  if (kernel != 3) throw ParamError("col2im supports 3x3 kernels only");
  if (stride != 1 && stride != 2) throw ParamError("col2im stride must be 1 or 2");
  if (pad != 0 && pad != 1) throw ParamError("col2im padding must be 0 or 1");

  const int64_t n = dinput.extent(0), ch = dinput.extent(1);
  const int64_t h = dinput.extent(2), w = dinput.extent(3);
  const int64_t oh = conv_out_extent(h, kernel, stride, pad);
  const int64_t ow = conv_out_extent(w, kernel, stride, pad);
  const int64_t col_count = n * oh * ow;
  if (cols.extent(0) != ch * kernel * kernel || cols.extent(1) != col_count)
    throw ShapeError("col2im column matrix does not match input shape");

  const T* src = cols.data();
  T* dst = dinput.data();

  for (int64_t c = 0; c < ch; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const T* row = src + ((c * kernel + ky) * kernel + kx) * col_count;
        for (int64_t b = 0; b < n; ++b) {
          T* plane = dst + (b * ch + c) * h * w;
          for (int64_t oy = 0; oy < oh; ++oy) {
            const int64_t iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            const T* in_row = row + (b * oh + oy) * ow;
            T* out_row = plane + iy * w;
            for (int64_t ox = 0; ox < ow; ++ox) {
              const int64_t ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) out_row[ix] += in_row[ox];
            }
          }
        }
      }
    }
  }
}

template Tensor gemm<float>(const Tensor&, const Tensor&, const GemmOpts&);
template Tensor64 gemm<double>(const Tensor64&, const Tensor64&, const GemmOpts&);
template Tensor im2col<float>(const Tensor&, int, int, int);
template Tensor64 im2col<double>(const Tensor64&, int, int, int);
template void col2im_add<float>(const Tensor&, int, int, int, Tensor&);
template void col2im_add<double>(const Tensor64&, int, int, int, Tensor64&);

}  // namespace treadline
