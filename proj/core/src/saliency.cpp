#include "treadline/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "treadline/error.hpp"
#include "treadline/layers.hpp"

namespace treadline {

double fisher_contribution(const Tensor& C, const Tensor& g) {
  if (!C.same_shape(g))
    throw ShapeError("fisher contribution shape mismatch: " + C.shape_str() + " vs " +
                     g.shape_str());
  if (C.rank() < 1 || C.extent(0) < 1) throw ShapeError("fisher contribution needs N >= 1");
  const int64_t n = C.extent(0);
  const int64_t per = C.numel() / n;
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    const float* c = C.data() + i * per;
    const float* gr = g.data() + i * per;
    double inner = 0;
    for (int64_t j = 0; j < per; ++j) inner += static_cast<double>(c[j]) * gr[j];
    total += inner * inner;
  }
  return total / (2.0 * static_cast<double>(n));
}

FisherAccumulator::FisherAccumulator(const std::vector<int>& widths) {
  for (int w : widths) {
    if (w < 1) throw ParamError("accumulator widths must be >= 1");
    sums_.emplace_back(static_cast<size_t>(w), 0.0);
  }
}

void FisherAccumulator::accumulate(Network& net) {
  if (static_cast<int>(sums_.size()) != net.num_blocks())
    throw ShapeError("accumulator layer count does not match network");
  for (int b = 0; b < net.num_blocks(); ++b) {
    const Tensor& act = net.prune_activation(b);
    const Tensor& grad = net.prune_gradient(b);  // StateError before backward
    const int64_t n = act.extent(0), c = act.extent(1);
    const int64_t plane = act.extent(2) * act.extent(3);
    if (static_cast<size_t>(c) != sums_[static_cast<size_t>(b)].size())
      throw ShapeError("accumulator width does not match block " + std::to_string(b));
    for (int64_t ch = 0; ch < c; ++ch) {
      if (!net.channel_live(b, static_cast<int>(ch))) continue;
      double total = 0;
      for (int64_t i = 0; i < n; ++i) {
        const float* a = act.data() + (i * c + ch) * plane;
        const float* g = grad.data() + (i * c + ch) * plane;
        double inner = 0;
        for (int64_t j = 0; j < plane; ++j) inner += static_cast<double>(a[j]) * g[j];
        total += inner * inner;
      }
      sums_[static_cast<size_t>(b)][static_cast<size_t>(ch)] +=
          total / (2.0 * static_cast<double>(n));
    }
  }
  ++batches_;
}

void FisherAccumulator::reset() {
  for (auto& layer : sums_) std::fill(layer.begin(), layer.end(), 0.0);
  batches_ = 0;
}

double FisherAccumulator::value(int block, int channel) const {
  return sums_.at(static_cast<size_t>(block)).at(static_cast<size_t>(channel));
}

std::vector<double> l1_saliency(const Conv3x3& conv) {
  const Tensor& w = conv.weight;
  std::vector<double> out(static_cast<size_t>(w.extent(0)), 0.0);
  const int64_t row = w.extent(1);
  for (int64_t c = 0; c < w.extent(0); ++c) {
    double sum = 0;
    for (int64_t j = 0; j < row; ++j) sum += std::abs(static_cast<double>(w[c * row + j]));
    out[static_cast<size_t>(c)] = sum;
  }
  return out;
}

PruneMethod parse_prune_method(const std::string& name) {
  if (name == "fisher") return PruneMethod::Fisher;
  if (name == "l1") return PruneMethod::L1;
  if (name == "random") return PruneMethod::Random;
  throw ParamError("unknown pruning method: " + name);
}

std::string prune_method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::Fisher: return "fisher";
    case PruneMethod::L1: return "l1";
    case PruneMethod::Random: return "random";
  }
  throw ParamError("bad prune method value");
}

void PruneConfig::validate() const {
  if (steps_per_prune < 1) throw ParamError("steps per prune must be >= 1");
  if (batch_size < 1) throw ParamError("batch size must be >= 1");
  if (lr <= 0) throw ParamError("fine-tune learning rate must be positive");
  if (momentum < 0 || momentum >= 1) throw ParamError("momentum must be in [0,1)");
  if (weight_decay < 0) throw ParamError("weight decay must be >= 0");
  if (floor < 1) throw ParamError("channel floor must be >= 1");
  if (max_events < 0) throw ParamError("max events must be >= 0");
  if (threads < 1) throw ParamError("thread count must be >= 1");
}

void PruningTrace::validate() const {
  base_spec.validate();
  std::vector<int> widths = base_spec.prunable_widths;
  std::vector<std::vector<uint8_t>> removed;
  for (int w : widths) removed.emplace_back(static_cast<size_t>(w), 0);
  int64_t prev_params = base_spec.param_count();
  for (size_t i = 0; i < events.size(); ++i) {
    const PruneEvent& ev = events[i];
    if (ev.block < 0 || ev.block >= static_cast<int>(widths.size()))
      throw DataError("trace event " + std::to_string(i) + " names a bad layer");
    auto& gone = removed[static_cast<size_t>(ev.block)];
    if (ev.channel < 0 || ev.channel >= static_cast<int>(gone.size()))
      throw DataError("trace event " + std::to_string(i) + " names a bad channel");
    if (gone[static_cast<size_t>(ev.channel)])
      throw DataError("trace removes a channel twice at event " + std::to_string(i));
    gone[static_cast<size_t>(ev.channel)] = 1;
    int& w = widths[static_cast<size_t>(ev.block)];
    if (w < 1) throw DataError("trace prunes an exhausted layer");
    --w;
    if (ev.widths != widths)
      throw DataError("trace widths inconsistent at event " + std::to_string(i));
    if (ev.params >= prev_params)
      throw DataError("trace parameter counts must strictly decrease");
    prev_params = ev.params;
  }
}

std::string PruningTrace::to_csv() const {
  std::string out = "step,layer,channel,saliency,params\n";
  char buf[160];
  for (const PruneEvent& ev : events) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%d,%.9g,%lld\n", static_cast<long long>(ev.step),
                  ev.block, ev.channel, ev.saliency, static_cast<long long>(ev.params));
    out += buf;
  }
  return out;
}

std::string PruningTrace::to_json() const {
  nlohmann::json j;
  j["base_spec"] = nlohmann::json::parse(base_spec.to_json());
  j["method"] = prune_method_name(method);
  j["seed"] = seed;
  j["events"] = nlohmann::json::array();
  for (const PruneEvent& ev : events) {
    nlohmann::json e{{"step", ev.step},     {"layer", ev.block},   {"channel", ev.channel},
                     {"saliency", ev.saliency}, {"params", ev.params}, {"widths", ev.widths}};
    if (ev.test_err) e["test_err"] = *ev.test_err;
    j["events"].push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

PruningTrace PruningTrace::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    PruningTrace trace;
    trace.base_spec = NetworkSpec::from_json(j.at("base_spec").dump());
    trace.method = parse_prune_method(j.at("method").get<std::string>());
    trace.seed = j.at("seed").get<uint64_t>();
    for (const auto& e : j.at("events")) {
      PruneEvent ev;
      ev.step = e.at("step").get<int64_t>();
      ev.block = e.at("layer").get<int>();
      ev.channel = e.at("channel").get<int>();
      ev.saliency = e.at("saliency").get<double>();
      ev.params = e.at("params").get<int64_t>();
      ev.widths = e.at("widths").get<std::vector<int>>();
      if (e.contains("test_err")) ev.test_err = e.at("test_err").get<double>();
      trace.events.push_back(std::move(ev));
    }
    trace.validate();
    return trace;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad pruning trace: ") + e.what());
  }
}

NetworkSpec PruningTrace::spec_at(size_t event) const {
  if (event >= events.size()) throw ParamError("trace event index out of range");
  NetworkSpec spec = base_spec;
  spec.prunable_widths = events[event].widths;
  spec.validate();
  return spec;
}

PruningTrace prune_loop(Network& net, const Dataset& finetune, const PruneConfig& cfg,
                        const PruneEventHook& hook) {
  cfg.validate();
  finetune.validate();
  if (finetune.classes != net.spec().classes)
    throw DataError("fine-tune dataset class count does not match the network");

  net.set_threads(cfg.threads);
  net.set_training(true);
  Rng rng(cfg.seed);
  auto params = net.params();
  auto velocity = sgd_velocity(params);

  std::vector<int> widths;
  for (int b = 0; b < net.num_blocks(); ++b)
    widths.push_back(static_cast<int>(net.block(b).mask.size()));
  FisherAccumulator acc(widths);

  PruningTrace trace;
  trace.base_spec = net.spec();
  trace.method = cfg.method;
  trace.seed = cfg.seed;

  std::vector<int64_t> order(static_cast<size_t>(finetune.size()));
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();  // forces a shuffle before the first batch
  int64_t global_step = 0;

  while (true) {
    bool prunable_left = false;
    for (int b = 0; b < net.num_blocks() && !prunable_left; ++b)
      prunable_left = net.live_channels(b) > cfg.floor;
    if (!prunable_left) break;
    if (cfg.max_events > 0 && static_cast<int>(trace.events.size()) >= cfg.max_events) break;

    for (int s = 0; s < cfg.steps_per_prune; ++s) {
      if (cursor + static_cast<size_t>(cfg.batch_size) > order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(cursor),
                               order.begin() + static_cast<int64_t>(cursor) +
                                   std::min<int64_t>(cfg.batch_size,
                                                     static_cast<int64_t>(order.size())));
      cursor += idx.size();

      auto [images, labels] = gather(finetune, idx);
      Tensor logits = net.forward(images);
      Tensor dlogits;
      const double ce = cross_entropy(logits, labels, &dlogits);
      if (!std::isfinite(ce))
        throw DivergenceError("fine-tuning diverged at step " + std::to_string(global_step));
      net.zero_grad();
      net.backward(dlogits);
      if (cfg.method == PruneMethod::Fisher) acc.accumulate(net);
      sgd_step(params, velocity, cfg.lr, cfg.momentum, cfg.weight_decay);
      ++global_step;
    }

    // Argmin over live channels of layers still above the floor; a strict
    // < keeps the lowest (layer, channel) on ties.
    int best_block = -1, best_channel = -1;
    double best_saliency = 0;
    for (int b = 0; b < net.num_blocks(); ++b) {
      if (net.live_channels(b) <= cfg.floor) continue;
      std::vector<double> l1;
      if (cfg.method == PruneMethod::L1) l1 = l1_saliency(net.block(b).conv1);
      const int width = static_cast<int>(net.block(b).mask.size());
      for (int c = 0; c < width; ++c) {
        if (!net.channel_live(b, c)) continue;
        double sal = 0;
        switch (cfg.method) {
          case PruneMethod::Fisher: sal = acc.value(b, c); break;
          case PruneMethod::L1: sal = l1[static_cast<size_t>(c)]; break;
          case PruneMethod::Random: sal = rng.uniform(); break;
        }
        if (best_block < 0 || sal < best_saliency) {
          best_block = b;
          best_channel = c;
          best_saliency = sal;
        }
      }
    }

    net.set_channel(best_block, best_channel, false);

    PruneEvent ev;
    ev.step = global_step;
    ev.block = best_block;
    ev.channel = best_channel;
    ev.saliency = best_saliency;
    ev.params = net.compact_spec().param_count();
    for (int b = 0; b < net.num_blocks(); ++b) ev.widths.push_back(net.live_channels(b));
    if (hook) hook(ev, net);
    trace.events.push_back(std::move(ev));
    acc.reset();
  }

  return trace;
}

std::vector<size_t> sample_trace_indices(const PruningTrace& trace, int k) {
  const size_t n = trace.events.size();
  if (k < 1 || static_cast<size_t>(k) > n)
    throw ParamError("sample count must be in [1, trace length]");
  const double max_p = static_cast<double>(trace.events.front().params);
  const double min_p = static_cast<double>(trace.events.back().params);

  std::vector<double> targets;
  if (k == 1) {
    targets.push_back((max_p + min_p) / 2.0);
  } else {
    for (int i = 0; i < k; ++i)
      targets.push_back(max_p - (max_p - min_p) * static_cast<double>(i) /
                                    static_cast<double>(k - 1));
  }

  std::vector<size_t> picks;
  for (double t : targets) {
    size_t best = 0;
    double best_d = -1;
    for (size_t i = 0; i < n; ++i) {
      const double d = std::abs(static_cast<double>(trace.events[i].params) - t);
      // Strict < plus descending params order: equal distances keep the
      // earlier (larger-parameter) event.
      if (best_d < 0 || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    picks.push_back(best);
  }
  return picks;
}

std::vector<NetworkSpec> sample_trace(const PruningTrace& trace, int k) {
  std::vector<NetworkSpec> out;
  for (size_t i : sample_trace_indices(trace, k)) out.push_back(trace.spec_at(i));
  return out;
}

}  // namespace treadline
