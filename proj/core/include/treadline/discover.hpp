#pragma once

#include <map>
#include <string>
#include <vector>

#include "treadline/network.hpp"
#include "treadline/profiler.hpp"

namespace treadline {

// Per-layer record of what snapping did.
struct LayerChoice {
  int block = 0;
  int fisher_width = 0;
  int chosen_width = 0;
  bool snapped = false;  // false = fisher fallback (empty point set)
};

struct StudentSpec {
  NetworkSpec spec;  // snapped widths, everything else copied from teacher
  std::vector<LayerChoice> choices;

  std::string to_json() const;
  static StudentSpec from_json(const std::string& text);
};

// Empty points: the pruned width stands. Otherwise the point with the
// smallest |p - w|; equidistant ties take the larger point (more capacity
// at the same latency tread).
int nearest_point(int fisher_width, const std::vector<int>& points);

// Snaps each prunable width of the pruned architecture to its layer's
// nearest optimal point.
StudentSpec discover(const NetworkSpec& teacher, const NetworkSpec& fisher,
                     const std::map<int, std::vector<int>>& points);

// Predicted single-inference latency: per-layer profiled medians at the
// spec's widths plus the profiled fixed cost of everything the sweep does
// not cover (whole-network median minus the per-layer medians at the
// profile's own widths, clamped at zero).
double estimate_latency(const NetworkSpec& spec, const NetworkProfile& prof);

}  // namespace treadline
