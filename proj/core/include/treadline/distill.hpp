#pragma once

#include <vector>

#include "treadline/network.hpp"
#include "treadline/train.hpp"

namespace treadline {

struct DistillConfig {
  double beta = 1000;    // attention weight; scaled by 3/N_L when N_L != 3
  bool squared = false;  // squared-distance variant, off by default
  TrainConfig train;

  void validate() const;
};

// Per-sample spatial attention: mean over channels of the squared
// activation, flattened to [N, H*W] and l2-normalized per row. An all-zero
// activation maps to the zero row rather than dividing by zero.
template <typename T>
TensorT<T> attention_map(const TensorT<T>& act);

// Gradient of attention_map: given d(loss)/d(map), returns d(loss)/d(act).
// The zero-protected branch has zero gradient.
template <typename T>
TensorT<T> attention_map_backward(const TensorT<T>& act, const TensorT<T>& dmap);

// Mean over the batch of the (optionally squared) l2 distance between map
// rows. When dms is given it receives d(distance)/d(student map).
template <typename T>
T attention_distance(const TensorT<T>& teacher_map, const TensorT<T>& student_map, bool squared,
                     TensorT<T>* dms = nullptr);

// L_CE + beta * sum_i distance(teacher map i, student map i).
template <typename T>
T at_loss(const TensorT<T>& logits, const std::vector<int>& labels,
          const std::vector<TensorT<T>>& teacher_maps,
          const std::vector<TensorT<T>>& student_maps, double beta, bool squared = false);

// Attention-transfer training of the student against the frozen teacher.
// beta = 0 reduces to plain train() with the same seed.
FitResult distill(Network& student, Network& teacher, const Dataset& train_set,
                  const Dataset& test_set, const DistillConfig& cfg);

extern template Tensor attention_map<float>(const Tensor&);
extern template Tensor64 attention_map<double>(const Tensor64&);
extern template Tensor attention_map_backward<float>(const Tensor&, const Tensor&);
extern template Tensor64 attention_map_backward<double>(const Tensor64&, const Tensor64&);
extern template float attention_distance<float>(const Tensor&, const Tensor&, bool, Tensor*);
extern template double attention_distance<double>(const Tensor64&, const Tensor64&, bool,
                                                  Tensor64*);
extern template float at_loss<float>(const Tensor&, const std::vector<int>&,
                                     const std::vector<Tensor>&, const std::vector<Tensor>&,
                                     double, bool);
extern template double at_loss<double>(const Tensor64&, const std::vector<int>&,
                                       const std::vector<Tensor64>&, const std::vector<Tensor64>&,
                                       double, bool);

}  // namespace treadline
