#pragma once

#include <memory>
#include <string>
#include <vector>

#include "treadline/network.hpp"
#include "treadline/train.hpp"

namespace treadline {

// On-disk layout: <dir>/manifest.json (spec, masks, epoch, seed, metric
// history, parameter names) + <dir>/weights.bin (parameter tensors then
// norm running statistics, in the manifest's order).
struct CheckpointMeta {
  int epoch = 0;
  uint64_t seed = 0;
  std::vector<EpochMetrics> history;
};

void save_checkpoint(const std::string& dir, Network& net, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::unique_ptr<Network> net;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

// Spec-only helpers for artifacts that carry no weights.
void save_spec(const std::string& path, const NetworkSpec& spec);
NetworkSpec load_spec(const std::string& path);

}  // namespace treadline
