#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "treadline/data.hpp"
#include "treadline/network.hpp"

namespace treadline {

struct LrSchedule {
  double initial = 0.1;
  double decay_factor = 5.0;  // lr divides by this ...
  int decay_every = 60;       // ... every this many epochs (0 = never)

  double at(int epoch) const;
  bool operator==(const LrSchedule&) const = default;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 128;
  LrSchedule lr;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  bool augment = false;
  int threads = 1;  // GEMM workers; 1 is the deterministic mode
  uint64_t seed = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;  // mean cross-entropy over the epoch's batches
  double train_err = 0;   // fraction of misclassified training samples
  double train_at = 0;    // mean attention term (zero for plain training)
  double test_loss = 0;
  double test_err = 0;
};

struct FitResult {
  std::vector<EpochMetrics> history;
};

struct EvalResult {
  double loss = 0;
  double error = 0;
};

// v <- m*v + (grad + wd*w); w <- w - lr*v, elementwise over every
// parameter. velocity must align with params (call sgd_velocity once).
void sgd_step(std::vector<ParamRef<float>>& params, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay);
std::vector<Tensor> sgd_velocity(const std::vector<ParamRef<float>>& params);

// Inference-mode loss and error over the whole set; restores the network's
// previous train/eval mode.
EvalResult evaluate(Network& net, const Dataset& data, int batch_size);

// Per-batch add-on loss. Runs after the student's forward pass; may fill
// one gradient tensor per attention point; returns its loss value.
// Distillation hangs the attention term here — plain training passes none.
using ExtraBatchLoss =
    std::function<double(const Tensor& images, Network& net, std::vector<Tensor>& att_grads)>;

// The SGD epoch loop shared by training and distillation. Shuffles with a
// seed-derived stream, optionally augments, aborts with DivergenceError on
// a non-finite loss.
FitResult fit(Network& net, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& cfg, const ExtraBatchLoss& extra = {});

// Plain supervised training (the paper's from-scratch baseline).
FitResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                const TrainConfig& cfg);

}  // namespace treadline
