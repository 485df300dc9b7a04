#include "treadline/discover.hpp"

#include <cmath>
#include <cstdlib>

#include "json.hpp"
#include "treadline/error.hpp"

namespace treadline {

int nearest_point(int fisher_width, const std::vector<int>& points) {
  if (fisher_width < 1) throw ParamError("fisher width must be >= 1");
  if (points.empty()) return fisher_width;
  int best = points[0];
  for (int p : points) {
    const int d = std::abs(p - fisher_width);
    const int bd = std::abs(best - fisher_width);
    if (d < bd || (d == bd && p > best)) best = p;
  }
  return best;
}

StudentSpec discover(const NetworkSpec& teacher, const NetworkSpec& fisher,
                     const std::map<int, std::vector<int>>& points) {
  teacher.validate();
  fisher.validate();

  // The pruned net must be the same architecture at reduced widths.
  NetworkSpec shape_check = fisher;
  shape_check.prunable_widths = teacher.prunable_widths;
  if (shape_check != teacher)
    throw ShapeError("pruned spec is not a width-reduction of the teacher");
  for (size_t b = 0; b < teacher.prunable_widths.size(); ++b)
    if (fisher.prunable_widths[b] > teacher.prunable_widths[b])
      throw ShapeError("pruned width exceeds teacher width at layer " + std::to_string(b));

  StudentSpec student;
  student.spec = teacher;
  for (size_t b = 0; b < teacher.prunable_widths.size(); ++b) {
    const int fw = fisher.prunable_widths[b];
    const auto it = points.find(static_cast<int>(b));
    const std::vector<int>* pts = it == points.end() ? nullptr : &it->second;

    LayerChoice choice;
    choice.block = static_cast<int>(b);
    choice.fisher_width = fw;
    if (pts && !pts->empty()) {
      choice.chosen_width = nearest_point(fw, *pts);
      choice.snapped = true;
    } else {
      choice.chosen_width = fw;
      choice.snapped = false;
    }
    student.spec.prunable_widths[b] = choice.chosen_width;
    student.choices.push_back(choice);
  }
  student.spec.validate();
  return student;
}

std::string StudentSpec::to_json() const {
  nlohmann::json j;
  j["spec"] = nlohmann::json::parse(spec.to_json());
  j["choices"] = nlohmann::json::array();
  for (const LayerChoice& c : choices)
    j["choices"].push_back({{"layer", c.block},
                            {"fisher_width", c.fisher_width},
                            {"chosen_width", c.chosen_width},
                            {"origin", c.snapped ? "optimal_point" : "fisher_fallback"}});
  return j.dump(2) + "\n";
}

StudentSpec StudentSpec::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    StudentSpec out;
    out.spec = NetworkSpec::from_json(j.at("spec").dump());
    for (const auto& c : j.at("choices")) {
      LayerChoice choice;
      choice.block = c.at("layer").get<int>();
      choice.fisher_width = c.at("fisher_width").get<int>();
      choice.chosen_width = c.at("chosen_width").get<int>();
      const std::string origin = c.at("origin").get<std::string>();
      if (origin != "optimal_point" && origin != "fisher_fallback")
        throw DataError("bad choice origin: " + origin);
      choice.snapped = origin == "optimal_point";
      out.choices.push_back(choice);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad student spec: ") + e.what());
  }
}

double estimate_latency(const NetworkSpec& spec, const NetworkProfile& prof) {
  spec.validate();
  if (prof.layers.empty()) throw DataError("latency estimate needs at least one layer profile");

  // median_at throws if the profile never swept that width.
  auto median_at = [&](const LatencyProfile& lp, int width) {
    for (const LatencySample& s : lp.samples)
      if (s.channels == width) return s.median_ns;
    throw DataError("profile of layer " + std::to_string(lp.layer) + " has no sample at width " +
                    std::to_string(width));
  };

  double swept_at_spec = 0, swept_at_base = 0;
  for (int b = 0; b < spec.total_blocks(); ++b) {
    const auto it = prof.layers.find(b);
    if (it == prof.layers.end())
      throw DataError("no latency profile for layer " + std::to_string(b));
    swept_at_spec += median_at(it->second, spec.prunable_widths[static_cast<size_t>(b)]);
    swept_at_base += median_at(it->second, it->second.samples.back().channels);
  }

  // Whatever the whole-network measurement saw beyond the swept convs at
  // their full widths: stem, norms, skips, classifier.
  const double fixed = std::max(0.0, prof.network_median_ns - swept_at_base);
  return fixed + swept_at_spec;
}

}  // namespace treadline
