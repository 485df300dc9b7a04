#pragma once

#include <string>
#include <vector>

#include "treadline/rng.hpp"
#include "treadline/tensor.hpp"

namespace treadline {

// Trainable parameter slot: value + gradient + stable name. Names give
// checkpoints and tests a fixed ordering.
template <typename T>
struct ParamRef {
  std::string name;
  TensorT<T>* value;
  TensorT<T>* grad;
};

// Non-trainable persistent state (batch-norm running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  TensorT<T>* value;
};

// 3x3 convolution, no bias (a norm layer follows everywhere one is used).
// Lowered to im2col + GEMM; the column matrix from the last forward is
// kept for the weight-gradient product.
template <typename T>
class Conv3x3T {
 public:
  Conv3x3T(int in_ch, int out_ch, int stride, int pad, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

  TensorT<T> weight;   // [out_ch, in_ch*9]
  TensorT<T> dweight;  // same shape
  int threads = 1;     // GEMM worker count; 1 keeps training deterministic

 private:
  int in_ch_, out_ch_, stride_, pad_;
  TensorT<T> cols_;
  std::vector<int64_t> in_shape_;
  bool have_cols_ = false;
};

// 1x1 convolution with optional spatial stride; used on skip paths when a
// block changes width or resolution. No bias.
template <typename T>
class Conv1x1T {
 public:
  Conv1x1T(int in_ch, int out_ch, int stride, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }
  int stride() const { return stride_; }

  TensorT<T> weight;  // [out_ch, in_ch]
  TensorT<T> dweight;
  int threads = 1;

 private:
  int in_ch_, out_ch_, stride_;
  TensorT<T> inmat_;
  std::vector<int64_t> in_shape_;
  bool have_input_ = false;
};

template <typename T>
class BatchNormT {
 public:
  explicit BatchNormT(int channels);

  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out);

  int channels() const { return channels_; }

  TensorT<T> gamma, beta, dgamma, dbeta;      // [C]
  TensorT<T> running_mean, running_var;       // [C]
  bool training = true;
  T momentum = T(0.1);
  T eps = T(1e-5);

 private:
  int channels_;
  TensorT<T> xhat_;     // normalized input from last forward
  TensorT<T> inv_std_;  // [C], per-channel 1/sqrt(var + eps)
  bool have_fwd_ = false;
  bool fwd_training_ = true;
};

template <typename T>
class ReluT {
 public:
  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);

 private:
  TensorT<T> out_;
  bool have_fwd_ = false;
};

// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
class GlobalAvgPoolT {
 public:
  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);

 private:
  std::vector<int64_t> in_shape_;
  bool have_fwd_ = false;
};

template <typename T>
class LinearT {
 public:
  LinearT(int in_features, int out_features, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);

  TensorT<T> weight;  // [out, in]
  TensorT<T> bias;    // [out]
  TensorT<T> dweight, dbias;
  int threads = 1;

 private:
  int in_features_, out_features_;
  TensorT<T> input_;
  bool have_input_ = false;
};

// Mean over the batch of -log softmax(logits) at the true class. When
// dlogits is given it receives (softmax - onehot) / batch.
template <typename T>
T cross_entropy(const TensorT<T>& logits, const std::vector<int>& labels,
                TensorT<T>* dlogits = nullptr);

// Row-wise stable softmax of a [N,K] matrix.
template <typename T>
TensorT<T> softmax(const TensorT<T>& logits);

using Conv3x3 = Conv3x3T<float>;
using Conv1x1 = Conv1x1T<float>;
using BatchNorm = BatchNormT<float>;
using Relu = ReluT<float>;
using GlobalAvgPool = GlobalAvgPoolT<float>;
using Linear = LinearT<float>;

extern template class Conv3x3T<float>;
extern template class Conv3x3T<double>;
extern template class Conv1x1T<float>;
extern template class Conv1x1T<double>;
extern template class BatchNormT<float>;
extern template class BatchNormT<double>;
extern template class ReluT<float>;
extern template class ReluT<double>;
extern template class GlobalAvgPoolT<float>;
extern template class GlobalAvgPoolT<double>;
extern template class LinearT<float>;
extern template class LinearT<double>;

}  // namespace treadline
