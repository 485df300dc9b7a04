#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "treadline/network.hpp"

namespace treadline {

struct HarnessConfig {
  int warmup = 10;
  int runs = 30;
  int threads = 1;  // inference threads; measurements default to one
  int batch = 1;    // single inference
  std::string host;  // free-text environment descriptor for the records

  void validate() const;
};

// One benchmarkable inference at a fixed shape. channels carries the swept
// value so synthetic timing sources can price it without running anything.
struct BenchTask {
  int channels = 0;
  std::function<void()> run;
};

// Timing source seam: sample() returns nanoseconds for one execution.
// resolution_ns is the clock's granularity (0 = ideal, never warns).
struct InferenceTimer {
  std::function<double(BenchTask&)> sample;
  double resolution_ns = 0;
};

// Monotonic-clock wall time around task.run().
InferenceTimer real_timer();

// Synthetic sources for tests and --fake-timer:
//   const:T         -> T
//   linear:A[:B]    -> A*c + B
//   ceil:K:T        -> ceil(c/K) * T
//   plateau:C:T0:T1 -> c <= C ? T0 : T1
InferenceTimer make_fake_timer(const std::string& spec);

struct LatencySample {
  int channels = 0;
  double median_ns = 0;
  double iqr_ns = 0;
  bool clock_warning = false;  // clock coarser than 1% of the median
};

struct LatencyProfile {
  int layer = 0;                     // block index of the swept conv
  std::vector<int64_t> input_shape;  // [N,C,H,W] fed to it
  std::vector<LatencySample> samples;  // channel counts 1..width, contiguous
  int threads = 1;
  std::string host;

  void validate() const;
};

struct OptimalPoints {
  int layer = 0;
  std::vector<int> points;  // ascending channel counts
  double sigma = 3.0;       // detection multiplier, recorded for provenance
};

// Sorted-order median and interquartile range (floor-index quartiles).
std::pair<double, double> median_iqr(std::vector<double> xs);

// cfg.warmup discarded executions, then cfg.runs timed ones.
LatencySample bench_layer(int in_channels, int out_channels, int height, int width, int stride,
                          const HarnessConfig& cfg, const InferenceTimer& timer);

// Latency of block's prunable conv at every channel count 1..width. Each
// width gets a freshly constructed layer; weights are random since values
// cannot change the timing.
LatencyProfile sweep(const NetworkSpec& spec, int block, const HarnessConfig& cfg,
                     const InferenceTimer& timer);

// Flags the consecutive differences d_c = t(c+1) - t(c) that sit more than
// three standard deviations above the mean of the remaining differences
// (leave-one-out, population std, one-sided). Each flagged d_c yields the
// optimal point c: the largest channel count on the lower tread.
OptimalPoints detect_steps(const LatencyProfile& profile);

struct NetworkProfile {
  std::map<int, LatencyProfile> layers;
  std::map<int, OptimalPoints> points;
  double network_median_ns = 0;
  double network_iqr_ns = 0;

  std::string to_json() const;
  static NetworkProfile from_json(const std::string& text);
};

// Sweeps every prunable layer (layers too narrow for detection get empty
// point sets) and benchmarks the whole network end to end.
NetworkProfile profile_network(const NetworkSpec& spec, const HarnessConfig& cfg,
                               const InferenceTimer& timer);

// layer_id,channels,median_ns,iqr_ns,flagged
std::string profile_csv(const NetworkProfile& prof);
// layer_id,channel_count
std::string points_csv(const NetworkProfile& prof);

}  // namespace treadline
