#include "treadline/profiler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"
#include "treadline/error.hpp"
#include "treadline/layers.hpp"
#include "treadline/rng.hpp"

namespace treadline {

namespace {

double clock_resolution_ns() {
  using clock = std::chrono::steady_clock;
  double best = 1e9;
  for (int i = 0; i < 200; ++i) {
    auto t0 = clock::now();
    auto t1 = clock::now();
    while (t1 == t0) t1 = clock::now();
    const double d =
        std::chrono::duration_cast<std::chrono::duration<double, std::nano>>(t1 - t0).count();
    best = std::min(best, d);
  }
  return best;
}

std::vector<std::string> split_colon(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = s.find(':', start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_num(const std::string& s) {
  try {
    size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ParamError("trailing characters in number: " + s);
    return v;
  } catch (const std::exception&) {
    throw ParamError("bad number in timer spec: " + s);
  }
}

}  // namespace

void HarnessConfig::validate() const {
  if (warmup < 0) throw ParamError("warmup count must be >= 0");
  if (runs < 1) throw ParamError("measured run count must be >= 1");
  if (threads < 1) throw ParamError("thread count must be >= 1");
  if (batch < 1) throw ParamError("batch size must be >= 1");
}

void LatencyProfile::validate() const {
  if (samples.empty()) throw ParamError("latency profile has no samples");
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].channels != samples[0].channels + static_cast<int>(i))
      throw ParamError("latency profile channel counts must be contiguous ascending");
    if (!(samples[i].median_ns > 0)) throw ParamError("latency profile medians must be positive");
  }
}

InferenceTimer real_timer() {
  static const double res = clock_resolution_ns();
  InferenceTimer t;
  t.resolution_ns = res;
  t.sample = [](BenchTask& task) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    task.run();
    const auto t1 = clock::now();
    return std::chrono::duration_cast<std::chrono::duration<double, std::nano>>(t1 - t0).count();
  };
  return t;
}

InferenceTimer make_fake_timer(const std::string& spec) {
  const std::vector<std::string> parts = split_colon(spec);
  const std::string& kind = parts[0];
  InferenceTimer t;
  t.resolution_ns = 0;

  if (kind == "const" && parts.size() == 2) {
    const double v = parse_num(parts[1]);
    if (v <= 0) throw ParamError("const timer needs a positive latency");
    t.sample = [v](BenchTask&) { return v; };
  } else if (kind == "linear" && (parts.size() == 2 || parts.size() == 3)) {
    const double a = parse_num(parts[1]);
    const double b = parts.size() == 3 ? parse_num(parts[2]) : 0.0;
    if (a <= 0) throw ParamError("linear timer needs a positive slope");
    t.sample = [a, b](BenchTask& task) { return a * task.channels + b; };
  } else if (kind == "ceil" && parts.size() == 3) {
    const double k = parse_num(parts[1]);
    const double v = parse_num(parts[2]);
    if (k < 1 || v <= 0) throw ParamError("ceil timer needs width >= 1 and positive tread cost");
    t.sample = [k, v](BenchTask& task) {
      return std::ceil(static_cast<double>(task.channels) / k) * v;
    };
  } else if (kind == "plateau" && parts.size() == 4) {
    const double c0 = parse_num(parts[1]);
    const double lo = parse_num(parts[2]);
    const double hi = parse_num(parts[3]);
    if (lo <= 0 || hi <= 0) throw ParamError("plateau timer needs positive latencies");
    t.sample = [c0, lo, hi](BenchTask& task) { return task.channels <= c0 ? lo : hi; };
  } else {
    throw ParamError("bad timer spec: " + spec);
  }
  return t;
}

std::pair<double, double> median_iqr(std::vector<double> xs) {
  if (xs.empty()) throw ParamError("median of an empty sequence");
  std::sort(xs.begin(), xs.end());
  const size_t n = xs.size();
  const double median = n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
  const double iqr = xs[(3 * n) / 4] - xs[n / 4];  // floor-index quartiles
  return {median, iqr};
}

LatencySample bench_layer(int in_channels, int out_channels, int height, int width, int stride,
                          const HarnessConfig& cfg, const InferenceTimer& timer) {
  cfg.validate();
  if (!timer.sample) throw ParamError("bench_layer needs a timing source");
  if (out_channels < 1) throw ParamError("swept channel count must be >= 1");

  // Weights and inputs are random: values cannot change the timing, only
  // shapes can.
  Rng rng(0x51ab5e5eull + static_cast<uint64_t>(out_channels));
  Conv3x3 conv(in_channels, out_channels, stride, 1, rng);
  conv.threads = cfg.threads;
  Tensor input({cfg.batch, in_channels, height, width});
  for (int64_t i = 0; i < input.numel(); ++i)
    input[i] = static_cast<float>(rng.normal());

  BenchTask task;
  task.channels = out_channels;
  task.run = [&conv, &input] { conv.forward(input); };

  for (int i = 0; i < cfg.warmup; ++i) timer.sample(task);
  std::vector<double> times(static_cast<size_t>(cfg.runs));
  for (double& t : times) t = timer.sample(task);

  LatencySample s;
  s.channels = out_channels;
  const auto [median, iqr] = median_iqr(std::move(times));
  s.median_ns = median;
  s.iqr_ns = iqr;
  s.clock_warning = timer.resolution_ns > 0 && median > 0 && timer.resolution_ns > 0.01 * median;
  return s;
}

LatencyProfile sweep(const NetworkSpec& spec, int block, const HarnessConfig& cfg,
                     const InferenceTimer& timer) {
  spec.validate();
  if (block < 0 || block >= spec.total_blocks()) throw ParamError("block index out of range");

  const int width = spec.prunable_widths[static_cast<size_t>(block)];
  const int in_ch = spec.block_in_width(block);
  const int h = static_cast<int>(spec.block_in_height(block));
  const int w = static_cast<int>(spec.block_in_width_px(block));
  const int stride = spec.block_stride(block);

  LatencyProfile prof;
  prof.layer = block;
  prof.input_shape = {cfg.batch, in_ch, h, w};
  prof.threads = cfg.threads;
  prof.host = cfg.host;
  prof.samples.reserve(static_cast<size_t>(width));
  for (int c = 1; c <= width; ++c)
    prof.samples.push_back(bench_layer(in_ch, c, h, w, stride, cfg, timer));
  prof.validate();
  return prof;
}

OptimalPoints detect_steps(const LatencyProfile& profile) {
  profile.validate();
  if (profile.samples.size() < 3)
    throw ParamError("step detection needs at least 3 samples");

  const size_t n = profile.samples.size() - 1;
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i)
    d[i] = profile.samples[i + 1].median_ns - profile.samples[i].median_ns;

  OptimalPoints out;
  out.layer = profile.layer;
  // Each difference is judged against the mean and population std of the
  // *other* differences: a lone huge jump would otherwise inflate the
  // yardstick it is measured with. Strict and one-sided: a flat or falling
  // series never yields a step.
  for (size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (size_t j = 0; j < n; ++j)
      if (j != i) mean += d[j];
    mean /= static_cast<double>(n - 1);
    double var = 0;
    for (size_t j = 0; j < n; ++j)
      if (j != i) var += (d[j] - mean) * (d[j] - mean);
    var /= static_cast<double>(n - 1);
    if (d[i] > mean + out.sigma * std::sqrt(var))
      out.points.push_back(profile.samples[i].channels);
  }
  return out;
}

NetworkProfile profile_network(const NetworkSpec& spec, const HarnessConfig& cfg,
                               const InferenceTimer& timer) {
  spec.validate();
  cfg.validate();
  if (!timer.sample) throw ParamError("profiling needs a timing source");

  NetworkProfile prof;
  for (int b = 0; b < spec.total_blocks(); ++b) {
    LatencyProfile lp = sweep(spec, b, cfg, timer);
    if (lp.samples.size() >= 3) {
      prof.points[b] = detect_steps(lp);
    } else {
      prof.points[b] = OptimalPoints{b, {}, 3.0};
    }
    prof.layers[b] = std::move(lp);
  }

  Rng rng(7);
  Network net(spec, rng);
  net.set_training(false);
  net.set_threads(cfg.threads);
  Tensor input({cfg.batch, spec.in_channels, spec.in_height, spec.in_width});
  for (int64_t i = 0; i < input.numel(); ++i) input[i] = static_cast<float>(rng.normal());
  BenchTask task;
  task.channels = 0;  // whole network, no swept value
  task.run = [&net, &input] { net.forward(input); };
  for (int i = 0; i < cfg.warmup; ++i) timer.sample(task);
  std::vector<double> times(static_cast<size_t>(cfg.runs));
  for (double& t : times) t = timer.sample(task);
  const auto [median, iqr] = median_iqr(std::move(times));
  prof.network_median_ns = median;
  prof.network_iqr_ns = iqr;
  return prof;
}

std::string NetworkProfile::to_json() const {
  nlohmann::json j;
  j["network_median_ns"] = network_median_ns;
  j["network_iqr_ns"] = network_iqr_ns;
  j["layers"] = nlohmann::json::array();
  for (const auto& [id, lp] : layers) {
    nlohmann::json samples = nlohmann::json::array();
    for (const LatencySample& s : lp.samples)
      samples.push_back({{"channels", s.channels},
                         {"median_ns", s.median_ns},
                         {"iqr_ns", s.iqr_ns},
                         {"clock_warning", s.clock_warning}});
    j["layers"].push_back({{"layer", id},
                           {"input_shape", lp.input_shape},
                           {"threads", lp.threads},
                           {"host", lp.host},
                           {"samples", std::move(samples)}});
  }
  j["points"] = nlohmann::json::array();
  for (const auto& [id, op] : points)
    j["points"].push_back({{"layer", id}, {"points", op.points}, {"sigma", op.sigma}});
  return j.dump(2) + "\n";
}

NetworkProfile NetworkProfile::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    NetworkProfile prof;
    prof.network_median_ns = j.at("network_median_ns").get<double>();
    prof.network_iqr_ns = j.at("network_iqr_ns").get<double>();
    for (const auto& l : j.at("layers")) {
      LatencyProfile lp;
      lp.layer = l.at("layer").get<int>();
      lp.input_shape = l.at("input_shape").get<std::vector<int64_t>>();
      lp.threads = l.at("threads").get<int>();
      lp.host = l.at("host").get<std::string>();
      for (const auto& s : l.at("samples")) {
        LatencySample ls;
        ls.channels = s.at("channels").get<int>();
        ls.median_ns = s.at("median_ns").get<double>();
        ls.iqr_ns = s.at("iqr_ns").get<double>();
        ls.clock_warning = s.at("clock_warning").get<bool>();
        lp.samples.push_back(ls);
      }
      lp.validate();
      prof.layers[lp.layer] = std::move(lp);
    }
    for (const auto& p : j.at("points")) {
      OptimalPoints op;
      op.layer = p.at("layer").get<int>();
      op.points = p.at("points").get<std::vector<int>>();
      op.sigma = p.at("sigma").get<double>();
      prof.points[op.layer] = std::move(op);
    }
    return prof;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad network profile: ") + e.what());
  }
}

std::string profile_csv(const NetworkProfile& prof) {
  std::string out = "layer_id,channels,median_ns,iqr_ns,flagged\n";
  char buf[160];
  for (const auto& [id, lp] : prof.layers) {
    const auto it = prof.points.find(id);
    for (const LatencySample& s : lp.samples) {
      const bool flagged =
          it != prof.points.end() &&
          std::find(it->second.points.begin(), it->second.points.end(), s.channels) !=
              it->second.points.end();
      std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%d\n", id, s.channels, s.median_ns,
                    s.iqr_ns, flagged ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

std::string points_csv(const NetworkProfile& prof) {
  std::string out = "layer_id,channel_count\n";
  char buf[64];
  for (const auto& [id, op] : prof.points)
    for (int p : op.points) {
      std::snprintf(buf, sizeof(buf), "%d,%d\n", id, p);
      out += buf;
    }
  return out;
}

}  // namespace treadline
