#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "treadline/layers.hpp"
#include "treadline/rng.hpp"
#include "treadline/tensor.hpp"

namespace treadline {

struct GroupSpec {
  int blocks = 1;
  int width = 16;
  bool operator==(const GroupSpec&) const = default;
};

// Architecture description for the residual family. Blocks are
// conv3x3 -> norm -> ReLU -> conv3x3 -> norm plus a skip connection; a 1x1
// projection appears on the skip whenever the block changes width or
// resolution. Only the first conv of each block is prunable, and its output
// channel count is the per-block entry in prunable_widths. Attention is
// read at each group's output, so attention-point count == group count.
struct NetworkSpec {
  int in_channels = 3;
  int in_height = 32;
  int in_width = 32;
  int classes = 10;
  int stem_width = 16;
  std::vector<GroupSpec> groups;
  std::vector<int> prunable_widths;  // one per block, flattened across groups

  // depth = 6n+4: n blocks per group, three groups at widths
  // (16, 32, 64) * width_mult, strides (1, 2, 2). Stem stays at 16.
  static NetworkSpec wide_resnet(int depth, double width_mult, int in_channels, int in_size,
                                 int classes);

  int total_blocks() const;
  int group_of_block(int block) const;
  int group_width(int group) const { return groups[static_cast<size_t>(group)].width; }
  int block_stride(int block) const;   // 1, or 2 for the first block of groups 2+
  int block_in_width(int block) const;
  int block_out_width(int block) const;
  bool block_has_projection(int block) const;
  int attention_points() const { return static_cast<int>(groups.size()); }

  // Spatial extent at a group's output (after its stride).
  int64_t group_height(int group) const;
  int64_t group_width_px(int group) const;
  // Spatial extent entering a block (before that block's stride).
  int64_t block_in_height(int block) const;
  int64_t block_in_width_px(int block) const;

  int64_t param_count() const;  // trainable parameters (convs, norms, classifier)
  int64_t mac_count() const;    // per conv: out*in*k^2*H'*W'; classifier out*in

  void validate() const;  // throws ParamError on an inconsistent spec
  std::string to_json() const;
  static NetworkSpec from_json(const std::string& text);

  bool operator==(const NetworkSpec&) const = default;
};

// One residual block. The channel mask sits between the first conv's ReLU
// and the second conv: masked channels are forced to zero on the way
// forward, and their gradients are dropped on the way back, so pruning is
// a pure function edit with no reallocation. The (masked) activation that
// feeds conv2 and its loss gradient are cached for saliency estimation.
template <typename T>
struct BlockT {
  BlockT(int in_width, int prunable_width, int out_width, int stride, Rng& rng);

  TensorT<T> forward(const TensorT<T>& x);
  TensorT<T> backward(const TensorT<T>& dy);
  void set_training(bool training);
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out);
  void collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out);

  int live_channels() const;

  Conv3x3T<T> conv1;
  BatchNormT<T> bn1;
  ReluT<T> relu1;
  Conv3x3T<T> conv2;
  BatchNormT<T> bn2;
  std::optional<Conv1x1T<T>> proj;

  std::vector<uint8_t> mask;  // 1 = live channel of conv1's output

  TensorT<T> prune_act;   // masked activation feeding conv2 (last forward)
  TensorT<T> prune_grad;  // loss gradient at that activation (last backward)
  bool have_act = false;
  bool have_grad = false;
};

template <typename T>
class NetworkT {
 public:
  NetworkT(const NetworkSpec& spec, Rng& rng);

  // Runs the net, caching one activation per attention point (group
  // outputs). Returns [N, classes] logits.
  TensorT<T> forward(const TensorT<T>& x);

  // Backpropagates from dlogits. attention_grads, when non-empty, carries
  // one extra gradient per attention point, added where that activation
  // branched off (distillation injects the attention term here).
  void backward(const TensorT<T>& dlogits,
                const std::vector<TensorT<T>>& attention_grads = {});

  void set_training(bool training);
  bool training() const { return training_; }
  void zero_grad();

  const NetworkSpec& spec() const { return spec_; }
  int num_blocks() const { return static_cast<int>(blocks_.size()); }
  BlockT<T>& block(int i) { return blocks_[static_cast<size_t>(i)]; }
  const BlockT<T>& block(int i) const { return blocks_[static_cast<size_t>(i)]; }

  // Stable-ordered views used by the trainer and checkpoints.
  std::vector<ParamRef<T>> params();
  std::vector<BufferRef<T>> buffers();

  const std::vector<TensorT<T>>& attention() const;  // valid after forward

  // Mask surface for the pruning loop.
  void set_channel(int block, int channel, bool live);
  bool channel_live(int block, int channel) const;
  int live_channels(int block) const;
  std::vector<std::vector<uint8_t>> masks() const;
  void apply_masks(const std::vector<std::vector<uint8_t>>& masks);

  // Spec whose prunable widths equal the live-channel counts.
  NetworkSpec compact_spec() const;

  // Saliency inputs cached by the last forward/backward pair.
  const TensorT<T>& prune_activation(int block) const;
  const TensorT<T>& prune_gradient(int block) const;

  void set_threads(int threads);  // GEMM workers for every layer

 private:
  NetworkSpec spec_;
  Conv3x3T<T> stem_;
  BatchNormT<T> stem_bn_;
  ReluT<T> stem_relu_;
  std::vector<BlockT<T>> blocks_;
  GlobalAvgPoolT<T> pool_;
  LinearT<T> fc_;
  std::vector<TensorT<T>> attention_;
  bool training_ = true;
  bool have_forward_ = false;
};

using Network = NetworkT<float>;
using Network64 = NetworkT<double>;

extern template struct BlockT<float>;
extern template struct BlockT<double>;
extern template class NetworkT<float>;
extern template class NetworkT<double>;

}  // namespace treadline
