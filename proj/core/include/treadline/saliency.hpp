#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "treadline/data.hpp"
#include "treadline/network.hpp"
#include "treadline/train.hpp"

namespace treadline {

// Saliency of one channel from its activation C and loss gradient g, both
// [N, H, W] (one entry per example): (1/2N) * sum_n (sum_ij C*g)^2.
double fisher_contribution(const Tensor& C, const Tensor& g);

// Running per-channel saliency sums, added to after every fine-tune batch
// and reset after each pruning event.
class FisherAccumulator {
 public:
  explicit FisherAccumulator(const std::vector<int>& widths);

  // Reads the activations/gradients cached by the network's last
  // forward/backward pair. Masked channels are skipped (entries keep
  // their value). StateError if no backward has run.
  void accumulate(Network& net);
  void reset();

  double value(int block, int channel) const;
  int64_t batches() const { return batches_; }

 private:
  std::vector<std::vector<double>> sums_;
  int64_t batches_ = 0;
};

// Per output channel, the sum of absolute weights of its filter.
std::vector<double> l1_saliency(const Conv3x3& conv);

enum class PruneMethod { Fisher, L1, Random };

PruneMethod parse_prune_method(const std::string& name);  // ParamError on unknown
std::string prune_method_name(PruneMethod m);

struct PruneEvent {
  int64_t step = 0;  // global fine-tune step count at the prune
  int block = 0;
  int channel = 0;
  double saliency = 0;
  int64_t params = 0;           // trainable parameters of the pruned architecture
  std::vector<int> widths;      // live widths per block after this event
  std::optional<double> test_err;  // filled by the caller's hook if it evaluates
};

struct PruningTrace {
  NetworkSpec base_spec;  // architecture the loop started from
  PruneMethod method = PruneMethod::Fisher;
  uint64_t seed = 0;
  std::vector<PruneEvent> events;

  void validate() const;  // monotone widths, strictly decreasing params, no repeats
  std::string to_csv() const;  // step,layer,channel,saliency,params
  std::string to_json() const;
  static PruningTrace from_json(const std::string& text);

  // Spec whose prunable widths are the live widths after event i.
  NetworkSpec spec_at(size_t event) const;
};

struct PruneConfig {
  PruneMethod method = PruneMethod::Fisher;
  int steps_per_prune = 100;
  int batch_size = 128;
  double lr = 0.1 / 25;  // the paper fine-tunes at the lowest schedule lr
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int floor = 1;        // never prune a layer below this many live channels
  int max_events = 0;   // 0 = run until every layer reaches the floor
  int threads = 1;
  uint64_t seed = 1;

  void validate() const;
};

// Called after each pruning event; may annotate the event (test error)
// before it is appended to the trace. The network is in its post-prune
// masked state.
using PruneEventHook = std::function<void(PruneEvent&, Network&)>;

// Iterative prune-and-tune: repeat [fine-tune steps_per_prune minibatches,
// prune the argmin-saliency live channel, reset accumulators] until every
// prunable layer is at the floor (or max_events). Ties break toward the
// lowest (layer, channel).
PruningTrace prune_loop(Network& net, const Dataset& finetune, const PruneConfig& cfg,
                        const PruneEventHook& hook = {});

// Architectures at the k trace points whose parameter counts are nearest
// to k evenly spaced targets between the trace's max and min (k=1 uses the
// midpoint). Ties go to the larger parameter count.
std::vector<NetworkSpec> sample_trace(const PruningTrace& trace, int k);
// Indices of the chosen events, same selection rule.
std::vector<size_t> sample_trace_indices(const PruningTrace& trace, int k);

}  // namespace treadline
