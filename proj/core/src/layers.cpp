#include "treadline/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "treadline/error.hpp"
#include "treadline/gemm.hpp"

namespace treadline {

namespace {

// He fan-out initialization: N(0, sqrt(2 / fan_out)).
template <typename T>
void he_init(TensorT<T>& w, int64_t fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_out));
  for (int64_t i = 0; i < w.numel(); ++i) w.data()[i] = static_cast<T>(rng.normal() * stddev);
}

// GEMM output rows are channel-major [C, N*OH*OW] with per-batch contiguous
// spatial runs; activations are NCHW. The two layouts swap the outer pair,
// so each (n, c) plane is one contiguous copy.
template <typename T>
TensorT<T> rows_to_nchw(const TensorT<T>& rows, int64_t n, int64_t c, int64_t h, int64_t w) {
  TensorT<T> out({n, c, h, w});
  const int64_t plane = h * w;
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      std::memcpy(out.data() + (b * c + ch) * plane, rows.data() + ch * n * plane + b * plane,
                  static_cast<size_t>(plane) * sizeof(T));
  return out;
}

template <typename T>
TensorT<T> nchw_to_rows(const TensorT<T>& x) {
  const int64_t n = x.extent(0), c = x.extent(1), plane = x.extent(2) * x.extent(3);
  TensorT<T> rows({c, n * plane});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      std::memcpy(rows.data() + ch * n * plane + b * plane, x.data() + (b * c + ch) * plane,
                  static_cast<size_t>(plane) * sizeof(T));
  return rows;
}

}  // namespace

// ---------------------------------------------------------------- Conv3x3

template <typename T>
Conv3x3T<T>::Conv3x3T(int in_ch, int out_ch, int stride, int pad, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), stride_(stride), pad_(pad) {
  if (in_ch < 1 || out_ch < 1) throw ParamError("conv3x3 channel counts must be >= 1");
  if (stride != 1 && stride != 2) throw ParamError("conv3x3 stride must be 1 or 2");
  if (pad != 0 && pad != 1) throw ParamError("conv3x3 padding must be 0 or 1");
  weight = TensorT<T>({out_ch, static_cast<int64_t>(in_ch) * 9});
  dweight = TensorT<T>::zeros(weight.shape());
  he_init(weight, static_cast<int64_t>(out_ch) * 9, rng);
}

template <typename T>
TensorT<T> Conv3x3T<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 4 || x.extent(1) != in_ch_)
    throw ShapeError("conv3x3 expected [N," + std::to_string(in_ch_) + ",H,W], got " +
                     x.shape_str());
  in_shape_ = x.shape();
  cols_ = im2col(x, 3, stride_, pad_);
  have_cols_ = true;
  GemmOpts opts;
  opts.threads = threads;
  TensorT<T> rows = gemm(weight, cols_, opts);
  const int64_t oh = conv_out_extent(x.extent(2), 3, stride_, pad_);
  const int64_t ow = conv_out_extent(x.extent(3), 3, stride_, pad_);
  return rows_to_nchw(rows, x.extent(0), out_ch_, oh, ow);
}

template <typename T>
TensorT<T> Conv3x3T<T>::backward(const TensorT<T>& dy) {
  if (!have_cols_) throw StateError("conv3x3 backward before forward");
  if (dy.rank() != 4 || dy.extent(1) != out_ch_)
    throw ShapeError("conv3x3 backward gradient shape mismatch: " + dy.shape_str());
  TensorT<T> drows = nchw_to_rows(dy);
  GemmOpts wopts;
  wopts.transpose_b = true;
  wopts.threads = threads;
  TensorT<T> dw = gemm(drows, cols_, wopts);
  for (int64_t i = 0; i < dw.numel(); ++i) dweight.data()[i] += dw.data()[i];

  GemmOpts xopts;
  xopts.transpose_a = true;
  xopts.threads = threads;
  TensorT<T> dcols = gemm(weight, drows, xopts);
  TensorT<T> dx = TensorT<T>::zeros(in_shape_);
  col2im_add(dcols, 3, stride_, pad_, dx);
  return dx;
}

template <typename T>
void Conv3x3T<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
}

// ---------------------------------------------------------------- Conv1x1

template <typename T>
Conv1x1T<T>::Conv1x1T(int in_ch, int out_ch, int stride, Rng& rng)
    : in_ch_(in_ch), out_ch_(out_ch), stride_(stride) {
  if (in_ch < 1 || out_ch < 1) throw ParamError("conv1x1 channel counts must be >= 1");
  if (stride != 1 && stride != 2) throw ParamError("conv1x1 stride must be 1 or 2");
  weight = TensorT<T>({out_ch, in_ch});
  dweight = TensorT<T>::zeros(weight.shape());
  he_init(weight, out_ch, rng);
}

template <typename T>
TensorT<T> Conv1x1T<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 4 || x.extent(1) != in_ch_)
    throw ShapeError("conv1x1 expected [N," + std::to_string(in_ch_) + ",H,W], got " +
                     x.shape_str());
  in_shape_ = x.shape();
  const int64_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  const int64_t oh = conv_out_extent(h, 1, stride_, 0);
  const int64_t ow = conv_out_extent(w, 1, stride_, 0);

  // Gather the (possibly strided) pixels into a [Cin, N*OH*OW] matrix.
  inmat_ = TensorT<T>({in_ch_, n * oh * ow});
  for (int64_t c = 0; c < in_ch_; ++c) {
    T* row = inmat_.data() + c * n * oh * ow;
    for (int64_t b = 0; b < n; ++b) {
      const T* plane = x.data() + (b * in_ch_ + c) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox)
          row[(b * oh + oy) * ow + ox] = plane[oy * stride_ * w + ox * stride_];
    }
  }
  have_input_ = true;

  GemmOpts opts;
  opts.threads = threads;
  TensorT<T> rows = gemm(weight, inmat_, opts);
  return rows_to_nchw(rows, n, out_ch_, oh, ow);
}

template <typename T>
TensorT<T> Conv1x1T<T>::backward(const TensorT<T>& dy) {
  if (!have_input_) throw StateError("conv1x1 backward before forward");
  if (dy.rank() != 4 || dy.extent(1) != out_ch_)
    throw ShapeError("conv1x1 backward gradient shape mismatch: " + dy.shape_str());
  TensorT<T> drows = nchw_to_rows(dy);
  GemmOpts wopts;
  wopts.transpose_b = true;
  wopts.threads = threads;
  TensorT<T> dw = gemm(drows, inmat_, wopts);
  for (int64_t i = 0; i < dw.numel(); ++i) dweight.data()[i] += dw.data()[i];

  GemmOpts xopts;
  xopts.transpose_a = true;
  xopts.threads = threads;
  TensorT<T> dinmat = gemm(weight, drows, xopts);

  const int64_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const int64_t oh = dy.extent(2), ow = dy.extent(3);
  TensorT<T> dx = TensorT<T>::zeros(in_shape_);
  for (int64_t c = 0; c < in_ch_; ++c) {
    const T* row = dinmat.data() + c * n * oh * ow;
    for (int64_t b = 0; b < n; ++b) {
      T* plane = dx.data() + (b * in_ch_ + c) * h * w;
      for (int64_t oy = 0; oy < oh; ++oy)
        for (int64_t ox = 0; ox < ow; ++ox)
          plane[oy * stride_ * w + ox * stride_] += row[(b * oh + oy) * ow + ox];
    }
  }
  return dx;
}

template <typename T>
void Conv1x1T<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
}

// -------------------------------------------------------------- BatchNorm

template <typename T>
BatchNormT<T>::BatchNormT(int channels) : channels_(channels) {
  if (channels < 1) throw ParamError("batchnorm channel count must be >= 1");
  gamma = TensorT<T>::full({channels}, T(1));
  beta = TensorT<T>::zeros({channels});
  dgamma = TensorT<T>::zeros({channels});
  dbeta = TensorT<T>::zeros({channels});
  running_mean = TensorT<T>::zeros({channels});
  running_var = TensorT<T>::full({channels}, T(1));
}

template <typename T>
TensorT<T> BatchNormT<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 4 || x.extent(1) != channels_)
    throw ShapeError("batchnorm expected [N," + std::to_string(channels_) + ",H,W], got " +
                     x.shape_str());
  const int64_t n = x.extent(0), h = x.extent(2), w = x.extent(3);
  const int64_t plane = h * w;
  const int64_t count = n * plane;

  xhat_ = TensorT<T>(x.shape());
  inv_std_ = TensorT<T>({channels_});
  TensorT<T> y(x.shape());

  for (int64_t c = 0; c < channels_; ++c) {
    T mean, var;
    if (training) {
      // Biased batch statistics normalize; the running variance keeps the
      // unbiased estimate, matching common framework behaviour.
      double sum = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double v = sq / static_cast<double>(count);
      mean = static_cast<T>(mu);
      var = static_cast<T>(v);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : v;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std_[c] = is;
    const T g = gamma[c], bt = beta[c];
    for (int64_t b = 0; b < n; ++b) {
      const T* p = x.data() + (b * channels_ + c) * plane;
      T* xh = xhat_.data() + (b * channels_ + c) * plane;
      T* out = y.data() + (b * channels_ + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const T v01 = (p[i] - mean) * is;
        xh[i] = v01;
        out[i] = g * v01 + bt;
      }
    }
  }
  have_fwd_ = true;
  fwd_training_ = training;
  if (checked_mode()) y.require_finite("batchnorm");
  return y;
}

template <typename T>
TensorT<T> BatchNormT<T>::backward(const TensorT<T>& dy) {
  if (!have_fwd_) throw StateError("batchnorm backward before forward");
  if (!dy.same_shape(xhat_)) throw ShapeError("batchnorm backward gradient shape mismatch");
  const int64_t n = dy.extent(0), plane = dy.extent(2) * dy.extent(3);
  const int64_t count = n * plane;
  TensorT<T> dx(dy.shape());

  for (int64_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < n; ++b) {
      const T* pdy = dy.data() + (b * channels_ + c) * plane;
      const T* pxh = xhat_.data() + (b * channels_ + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        sum_dy += pdy[i];
        sum_dy_xhat += pdy[i] * pxh[i];
      }
    }
    dbeta[c] += static_cast<T>(sum_dy);
    dgamma[c] += static_cast<T>(sum_dy_xhat);

    const T g_is = gamma[c] * inv_std_[c];
    if (fwd_training_) {
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (int64_t b = 0; b < n; ++b) {
        const T* pdy = dy.data() + (b * channels_ + c) * plane;
        const T* pxh = xhat_.data() + (b * channels_ + c) * plane;
        T* pdx = dx.data() + (b * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i)
          pdx[i] = g_is * (pdy[i] - mean_dy - pxh[i] * mean_dy_xhat);
      }
    } else {
      // Inference stats are constants, so the map is affine per channel.
      for (int64_t b = 0; b < n; ++b) {
        const T* pdy = dy.data() + (b * channels_ + c) * plane;
        T* pdx = dx.data() + (b * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) pdx[i] = g_is * pdy[i];
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNormT<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &gamma, &dgamma});
  out.push_back({prefix + ".beta", &beta, &dbeta});
}

template <typename T>
void BatchNormT<T>::collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

// ------------------------------------------------------------------- ReLU

template <typename T>
TensorT<T> ReluT<T>::forward(const TensorT<T>& x) {
  out_ = TensorT<T>(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out_.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  have_fwd_ = true;
  return out_;
}

template <typename T>
TensorT<T> ReluT<T>::backward(const TensorT<T>& dy) {
  if (!have_fwd_) throw StateError("relu backward before forward");
  if (!dy.same_shape(out_)) throw ShapeError("relu backward gradient shape mismatch");
  TensorT<T> dx(dy.shape());
  for (int64_t i = 0; i < dy.numel(); ++i)
    dx.data()[i] = out_.data()[i] > T(0) ? dy.data()[i] : T(0);
  return dx;
}

// ---------------------------------------------------------- GlobalAvgPool

template <typename T>
TensorT<T> GlobalAvgPoolT<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 4) throw ShapeError("global average pool expects [N,C,H,W]");
  in_shape_ = x.shape();
  const int64_t n = x.extent(0), c = x.extent(1), plane = x.extent(2) * x.extent(3);
  TensorT<T> y({n, c});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* p = x.data() + (b * c + ch) * plane;
      double sum = 0.0;
      for (int64_t i = 0; i < plane; ++i) sum += p[i];
      y.data()[b * c + ch] = static_cast<T>(sum / static_cast<double>(plane));
    }
  have_fwd_ = true;
  return y;
}

template <typename T>
TensorT<T> GlobalAvgPoolT<T>::backward(const TensorT<T>& dy) {
  if (!have_fwd_) throw StateError("global average pool backward before forward");
  if (dy.rank() != 2 || dy.extent(0) != in_shape_[0] || dy.extent(1) != in_shape_[1])
    throw ShapeError("global average pool backward gradient shape mismatch");
  const int64_t n = in_shape_[0], c = in_shape_[1], plane = in_shape_[2] * in_shape_[3];
  TensorT<T> dx(in_shape_);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T g = dy.data()[b * c + ch] / static_cast<T>(plane);
      T* p = dx.data() + (b * c + ch) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] = g;
    }
  return dx;
}

// ----------------------------------------------------------------- Linear

template <typename T>
LinearT<T>::LinearT(int in_features, int out_features, Rng& rng)
    : in_features_(in_features), out_features_(out_features) {
  if (in_features < 1 || out_features < 1) throw ParamError("linear feature counts must be >= 1");
  weight = TensorT<T>({out_features, in_features});
  bias = TensorT<T>::zeros({out_features});
  dweight = TensorT<T>::zeros(weight.shape());
  dbias = TensorT<T>::zeros({out_features});
  const double stddev = std::sqrt(1.0 / in_features);
  for (int64_t i = 0; i < weight.numel(); ++i)
    weight.data()[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
TensorT<T> LinearT<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 2 || x.extent(1) != in_features_)
    throw ShapeError("linear expected [N," + std::to_string(in_features_) + "], got " +
                     x.shape_str());
  input_ = x;
  have_input_ = true;
  GemmOpts opts;
  opts.transpose_b = true;
  opts.threads = threads;
  TensorT<T> y = gemm(x, weight, opts);
  for (int64_t b = 0; b < y.extent(0); ++b)
    for (int64_t o = 0; o < out_features_; ++o) y.data()[b * out_features_ + o] += bias[o];
  return y;
}

template <typename T>
TensorT<T> LinearT<T>::backward(const TensorT<T>& dy) {
  if (!have_input_) throw StateError("linear backward before forward");
  if (dy.rank() != 2 || dy.extent(0) != input_.extent(0) || dy.extent(1) != out_features_)
    throw ShapeError("linear backward gradient shape mismatch");
  GemmOpts wopts;
  wopts.transpose_a = true;
  wopts.threads = threads;
  TensorT<T> dw = gemm(dy, input_, wopts);
  for (int64_t i = 0; i < dw.numel(); ++i) dweight.data()[i] += dw.data()[i];
  for (int64_t b = 0; b < dy.extent(0); ++b)
    for (int64_t o = 0; o < out_features_; ++o) dbias[o] += dy.data()[b * out_features_ + o];
  GemmOpts xopts;
  xopts.threads = threads;
  return gemm(dy, weight, xopts);
}

template <typename T>
void LinearT<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
  out.push_back({prefix + ".bias", &bias, &dbias});
}

// ----------------------------------------------------------------- losses

template <typename T>
TensorT<T> softmax(const TensorT<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [N,K] logits");
  const int64_t n = logits.extent(0), k = logits.extent(1);
  TensorT<T> out(logits.shape());
  for (int64_t b = 0; b < n; ++b) {
    const T* row = logits.data() + b * k;
    T* o = out.data() + b * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      o[j] = static_cast<T>(e);
      denom += e;
    }
    for (int64_t j = 0; j < k; ++j) o[j] = static_cast<T>(o[j] / denom);
  }
  return out;
}

template <typename T>
T cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels, TensorT<T>* dlogits) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy expects [N,K] logits");
  const int64_t n = logits.extent(0), k = logits.extent(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy label count does not match batch");
  for (int lab : labels)
    if (lab < 0 || lab >= k)
      throw DataError("cross_entropy label " + std::to_string(lab) + " out of range [0," +
                      std::to_string(k) + ")");

  TensorT<T> probs = softmax(logits);
  double loss = 0.0;
  for (int64_t b = 0; b < n; ++b) {
    // log prob via the stable log-sum-exp, not log(prob), to survive
    // saturated logits.
    const T* row = logits.data() + b * k;
    T mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    loss -= static_cast<double>(row[labels[static_cast<size_t>(b)]] - mx) - std::log(denom);
  }
  loss /= static_cast<double>(n);

  if (dlogits) {
    *dlogits = probs;
    for (int64_t b = 0; b < n; ++b)
      dlogits->data()[b * k + labels[static_cast<size_t>(b)]] -= T(1);
    for (int64_t i = 0; i < dlogits->numel(); ++i)
      dlogits->data()[i] /= static_cast<T>(n);
  }
  return static_cast<T>(loss);
}

template class Conv3x3T<float>;
template class Conv3x3T<double>;
template class Conv1x1T<float>;
template class Conv1x1T<double>;
template class BatchNormT<float>;
template class BatchNormT<double>;
template class ReluT<float>;
template class ReluT<double>;
template class GlobalAvgPoolT<float>;
template class GlobalAvgPoolT<double>;
template class LinearT<float>;
template class LinearT<double>;

template float cross_entropy<float>(const Tensor&, const std::vector<int>&, Tensor*);
template double cross_entropy<double>(const Tensor64&, const std::vector<int>&, Tensor64*);
template Tensor softmax<float>(const Tensor&);
template Tensor64 softmax<double>(const Tensor64&);

}  // namespace treadline
