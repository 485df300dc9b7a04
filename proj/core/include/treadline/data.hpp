#pragma once

#include <string>
#include <utility>
#include <vector>

#include "treadline/rng.hpp"
#include "treadline/tensor.hpp"

namespace treadline {

struct Dataset {
  Tensor images;            // [N, C, H, W]
  std::vector<int> labels;  // length N
  int classes = 0;

  int64_t size() const { return images.empty() ? 0 : images.extent(0); }
  void validate() const;  // throws DataError on inconsistency
};

// Gathers the given sample indices into a batch.
std::pair<Tensor, std::vector<int>> gather(const Dataset& data, const std::vector<int64_t>& idx);

// Standard CIFAR-10 binary batches: records of 1 label byte + 3072 pixel
// bytes (RGB planes, 32x32 row-major). Pixels are scaled to [0,1] and
// normalized with the usual per-channel statistics.
Dataset load_cifar10_file(const std::string& path);
// Loads data_batch_1..5.bin (train) or test_batch.bin (test) from a dir.
Dataset load_cifar10(const std::string& dir, bool train);

// Raw labeled-tensor file: three tensor blobs back to back — images
// [N,C,H,W], labels [N] (float-encoded integers), classes [1].
void save_raw(const std::string& path, const Dataset& data);
Dataset load_raw(const std::string& path);

// Deterministic synthetic classification set: one random template per
// class, samples are template + pixel noise. Returns {train, test}.
std::pair<Dataset, Dataset> make_synthetic(int classes, int train_per_class, int test_per_class,
                                           int channels, int height, int width, double noise,
                                           uint64_t seed);

// Horizontal flip (p=1/2) + 4-pixel zero pad and random crop, the standard
// CIFAR recipe, applied per sample in index order.
Tensor augment(const Tensor& batch, Rng& rng);

}  // namespace treadline
