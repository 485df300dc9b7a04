#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "treadline/data.hpp"
#include "treadline/error.hpp"
#include "treadline/network.hpp"
#include "treadline/saliency.hpp"

using namespace treadline;
namespace tu = treadline::testutil;

namespace {

NetworkSpec two_block_spec() {
  NetworkSpec s;
  s.in_channels = 1;
  s.in_height = 8;
  s.in_width = 8;
  s.classes = 2;
  s.stem_width = 4;
  s.groups = {GroupSpec{1, 4}, GroupSpec{1, 8}};
  s.prunable_widths = {4, 6};
  return s;
}

// Brute-force Eq. 1 for one channel from raw [N,C,H,W] caches.
double brute_channel(const Tensor& act, const Tensor& grad, int64_t c) {
  const int64_t n = act.extent(0), h = act.extent(2), w = act.extent(3);
  double total = 0;
  for (int64_t b = 0; b < n; ++b) {
    double inner = 0;
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j)
        inner += static_cast<double>(act.at({b, c, i, j})) * grad.at({b, c, i, j});
    total += inner * inner;
  }
  return total / (2.0 * static_cast<double>(n));
}

// One forward/backward pass on a batch drawn from the set.
void run_batch(Network& net, const Dataset& data, int64_t lo, int64_t count) {
  std::vector<int64_t> idx(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = lo + i;
  auto [images, labels] = gather(data, idx);
  Tensor dlogits;
  cross_entropy(net.forward(images), labels, &dlogits);
  net.zero_grad();
  net.backward(dlogits);
}

PruningTrace consistent_trace() {
  PruningTrace t;
  t.base_spec = two_block_spec();
  t.method = PruneMethod::Fisher;
  t.seed = 5;
  PruneEvent e1;
  e1.step = 100;
  e1.block = 1;
  e1.channel = 2;
  e1.saliency = 0.5;
  e1.widths = {4, 5};
  NetworkSpec s1 = t.base_spec;
  s1.prunable_widths = e1.widths;
  e1.params = s1.param_count();
  PruneEvent e2;
  e2.step = 200;
  e2.block = 0;
  e2.channel = 0;
  e2.saliency = 0.25;
  e2.widths = {3, 5};
  NetworkSpec s2 = t.base_spec;
  s2.prunable_widths = e2.widths;
  e2.params = s2.param_count();
  t.events = {e1, e2};
  return t;
}

}  // namespace

TEST_SUITE("saliency") {

TEST_CASE("fisher contribution hand oracles") {
  // Single example, single position: (1/2) * (2*3)^2 = 18.
  Tensor c1({1, 1, 1}, {2.0f});
  Tensor g1({1, 1, 1}, {3.0f});
  CHECK(fisher_contribution(c1, g1) == doctest::Approx(18.0));

  // Two examples: (1/4) * (1 + 4) = 1.25.
  Tensor c2({2, 1, 1}, {1.0f, 2.0f});
  Tensor g2({2, 1, 1}, {1.0f, 1.0f});
  CHECK(fisher_contribution(c2, g2) == doctest::Approx(1.25));

  Tensor g0({2, 1, 1});
  CHECK(fisher_contribution(c2, g0) == 0.0);
}

TEST_CASE("fisher contribution is nonnegative and permutation invariant") {
  Rng rng(60);
  Tensor c({4, 3, 3}), g({4, 3, 3});
  tu::fill_uniform(c, rng);
  tu::fill_uniform(g, rng);
  const double v = fisher_contribution(c, g);
  CHECK(v >= 0.0);

  // Swap examples 0 and 3.
  Tensor cp = c, gp = g;
  for (int64_t i = 0; i < 9; ++i) {
    std::swap(cp[i], cp[3 * 9 + i]);
    std::swap(gp[i], gp[3 * 9 + i]);
  }
  CHECK(fisher_contribution(cp, gp) == doctest::Approx(v).epsilon(1e-12));
}

TEST_CASE("fisher contribution shape checks") {
  Tensor c({2, 2, 2}), g({2, 2, 3});
  CHECK_THROWS_AS(fisher_contribution(c, g), ShapeError);
}

TEST_CASE("accumulator equals brute force over mixed batches") {
  Rng rng(61);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 16, 4, 1, 8, 8, 0.8, 62);

  FisherAccumulator acc(spec.prunable_widths);
  CHECK_THROWS_AS(acc.accumulate(net), StateError);

  // Three batches of different content; brute-force each one from the raw
  // caches and sum.
  std::vector<std::vector<double>> want(2);
  want[0].assign(4, 0.0);
  want[1].assign(6, 0.0);
  const int64_t starts[] = {0, 8, 16};
  const int64_t counts[] = {8, 8, 16};
  for (int bi = 0; bi < 3; ++bi) {
    run_batch(net, train_set, starts[bi], counts[bi]);
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < spec.prunable_widths[static_cast<size_t>(b)]; ++c)
        want[static_cast<size_t>(b)][static_cast<size_t>(c)] +=
            brute_channel(net.prune_activation(b), net.prune_gradient(b), c);
    acc.accumulate(net);
  }
  CHECK(acc.batches() == 3);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < spec.prunable_widths[static_cast<size_t>(b)]; ++c) {
      const double got = acc.value(b, c);
      const double exp = want[static_cast<size_t>(b)][static_cast<size_t>(c)];
      CHECK(tu::close(got, exp, 1e-12, 1e-6));
    }

  acc.reset();
  CHECK(acc.batches() == 0);
  CHECK(acc.value(1, 3) == 0.0);
}

TEST_CASE("identical batches add up linearly") {
  Rng rng(63);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 64);

  FisherAccumulator acc(spec.prunable_widths);
  run_batch(net, train_set, 0, 8);
  acc.accumulate(net);
  const double once = acc.value(1, 0);
  run_batch(net, train_set, 0, 8);
  acc.accumulate(net);
  CHECK(acc.value(1, 0) == doctest::Approx(2 * once).epsilon(1e-9));
}

TEST_CASE("masked channels stop accumulating") {
  Rng rng(65);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 66);
  net.set_channel(1, 2, false);

  FisherAccumulator acc(spec.prunable_widths);
  run_batch(net, train_set, 0, 8);
  acc.accumulate(net);
  CHECK(acc.value(1, 2) == 0.0);
  CHECK(acc.value(1, 1) > 0.0);
}

TEST_CASE("l1 saliency sums absolute filter weights") {
  Rng rng(67);
  Conv3x3 conv(1, 2, 1, 1, rng);
  conv.weight.fill(0.0f);
  conv.weight.at({0, 0}) = 1.0f;
  conv.weight.at({0, 1}) = -2.0f;
  conv.weight.at({0, 2}) = 3.0f;
  conv.weight.at({1, 4}) = -0.5f;
  const std::vector<double> s = l1_saliency(conv);
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(6.0));
  CHECK(s[1] == doctest::Approx(0.5));

  for (auto& v : conv.weight.values()) v *= 2.0f;
  const std::vector<double> s2 = l1_saliency(conv);
  CHECK(s2[0] == doctest::Approx(12.0));
  CHECK(s2[1] == doctest::Approx(1.0));
}

TEST_CASE("prune method names round trip") {
  CHECK(parse_prune_method("fisher") == PruneMethod::Fisher);
  CHECK(parse_prune_method("l1") == PruneMethod::L1);
  CHECK(parse_prune_method("random") == PruneMethod::Random);
  CHECK(prune_method_name(PruneMethod::L1) == "l1");
  CHECK(prune_method_name(PruneMethod::Fisher) == "fisher");
  CHECK_THROWS_AS(parse_prune_method("l2"), ParamError);
}

TEST_CASE("trace validation and csv layout") {
  const PruningTrace t = consistent_trace();
  CHECK_NOTHROW(t.validate());

  const std::string csv = t.to_csv();
  std::string want = "step,layer,channel,saliency,params\n";
  want += "100,1,2,0.5," + std::to_string(t.events[0].params) + "\n";
  want += "200,0,0,0.25," + std::to_string(t.events[1].params) + "\n";
  CHECK(csv == want);
}

TEST_CASE("trace validation rejects corruption") {
  PruningTrace t = consistent_trace();
  t.events[1].block = 1;
  t.events[1].channel = 2;  // removed twice
  CHECK_THROWS_AS(t.validate(), DataError);

  t = consistent_trace();
  t.events[1].params = t.events[0].params + 1;  // params grow
  CHECK_THROWS_AS(t.validate(), DataError);

  t = consistent_trace();
  t.events[0].widths = {4, 6};  // width did not drop
  CHECK_THROWS_AS(t.validate(), DataError);

  t = consistent_trace();
  t.events[0].channel = 6;  // out of range for width 6
  CHECK_THROWS_AS(t.validate(), DataError);
}

TEST_CASE("trace json round trip") {
  PruningTrace t = consistent_trace();
  t.events[0].test_err = 0.125;
  const PruningTrace back = PruningTrace::from_json(t.to_json());
  CHECK(back.base_spec == t.base_spec);
  CHECK(back.method == t.method);
  CHECK(back.seed == t.seed);
  REQUIRE(back.events.size() == 2);
  CHECK(back.events[0].step == 100);
  CHECK(back.events[0].saliency == doctest::Approx(0.5));
  CHECK(back.events[0].widths == std::vector<int>{4, 5});
  REQUIRE(back.events[0].test_err.has_value());
  CHECK(*back.events[0].test_err == doctest::Approx(0.125));
  CHECK_FALSE(back.events[1].test_err.has_value());
  CHECK(back.events[1].params == t.events[1].params);
  CHECK_THROWS_AS(PruningTrace::from_json("{}"), DataError);
}

TEST_CASE("spec_at applies event widths") {
  const PruningTrace t = consistent_trace();
  CHECK(t.spec_at(0).prunable_widths == std::vector<int>{4, 5});
  CHECK(t.spec_at(1).prunable_widths == std::vector<int>{3, 5});
  CHECK(t.spec_at(1).param_count() == t.events[1].params);
  CHECK_THROWS_AS(t.spec_at(2), ParamError);
}

TEST_CASE("l1 loop prunes the smallest filter first") {
  Rng rng(70);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 71);

  // Predict the argmin over (block, channel) of the initial l1 norms; a
  // vanishing learning rate keeps the weights put during fine-tuning.
  int want_block = -1, want_channel = -1;
  double best = 0;
  for (int b = 0; b < 2; ++b) {
    const auto s = l1_saliency(net.block(b).conv1);
    for (size_t c = 0; c < s.size(); ++c)
      if (want_block < 0 || s[c] < best) {
        best = s[c];
        want_block = b;
        want_channel = static_cast<int>(c);
      }
  }

  PruneConfig cfg;
  cfg.method = PruneMethod::L1;
  cfg.steps_per_prune = 1;
  cfg.batch_size = 8;
  cfg.lr = 1e-20;
  cfg.max_events = 1;
  cfg.seed = 3;
  const PruningTrace trace = prune_loop(net, train_set, cfg);
  REQUIRE(trace.events.size() == 1);
  CHECK(trace.events[0].block == want_block);
  CHECK(trace.events[0].channel == want_channel);
  CHECK(trace.events[0].saliency == doctest::Approx(best));
  CHECK(trace.events[0].step == 1);
}

TEST_CASE("saliency ties break toward the lowest layer and channel") {
  Rng rng(72);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  for (int b = 0; b < 2; ++b) net.block(b).conv1.weight.fill(0.125f);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 73);

  PruneConfig cfg;
  cfg.method = PruneMethod::L1;
  cfg.steps_per_prune = 1;
  cfg.batch_size = 8;
  cfg.lr = 1e-20;
  cfg.max_events = 1;
  const PruningTrace trace = prune_loop(net, train_set, cfg);
  REQUIRE(trace.events.size() == 1);
  CHECK(trace.events[0].block == 0);
  CHECK(trace.events[0].channel == 0);
}

TEST_CASE("fisher loop removes a detached channel first") {
  Rng rng(74);
  const NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  // Channel 3 of block 1 feeds nothing: conv2 ignores it, so its loss
  // gradient is identically zero.
  Tensor& w2 = net.block(1).conv2.weight;
  for (int64_t o = 0; o < w2.extent(0); ++o)
    for (int64_t k = 3 * 9; k < 4 * 9; ++k) w2.at({o, k}) = 0.0f;

  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 75);
  PruneConfig cfg;
  cfg.method = PruneMethod::Fisher;
  cfg.steps_per_prune = 1;
  cfg.batch_size = 8;
  cfg.lr = 1e-20;
  cfg.max_events = 1;
  const PruningTrace trace = prune_loop(net, train_set, cfg);
  REQUIRE(trace.events.size() == 1);
  CHECK(trace.events[0].block == 1);
  CHECK(trace.events[0].channel == 3);
  CHECK(trace.events[0].saliency == 0.0);
}

TEST_CASE("loop runs to the floor and the trace verifies") {
  Rng rng(76);
  NetworkSpec spec = two_block_spec();
  spec.prunable_widths = {3, 2};
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 77);

  PruneConfig cfg;
  cfg.method = PruneMethod::Random;
  cfg.steps_per_prune = 2;
  cfg.batch_size = 4;
  cfg.lr = 0.001;
  cfg.seed = 9;
  int hook_calls = 0;
  const PruningTrace trace =
      prune_loop(net, train_set, cfg, [&](PruneEvent& e, Network& n) {
        ++hook_calls;
        e.test_err = 0.5;
        CHECK(n.live_channels(e.block) ==
              e.widths[static_cast<size_t>(e.block)]);
      });
  // (3-1) + (2-1) prune events until every layer hits the floor.
  REQUIRE(trace.events.size() == 3);
  CHECK(hook_calls == 3);
  CHECK_NOTHROW(trace.validate());
  CHECK(net.live_channels(0) == 1);
  CHECK(net.live_channels(1) == 1);
  CHECK(trace.events.back().step == 6);
  for (const auto& e : trace.events) {
    NetworkSpec s = spec;
    s.prunable_widths = e.widths;
    CHECK(e.params == s.param_count());
    REQUIRE(e.test_err.has_value());
  }
}

TEST_CASE("random traces are reproducible by seed") {
  auto run = [](uint64_t seed) {
    Rng rng(80);
    NetworkSpec spec = two_block_spec();
    Network net(spec, rng);
    auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 81);
    PruneConfig cfg;
    cfg.method = PruneMethod::Random;
    cfg.steps_per_prune = 1;
    cfg.batch_size = 4;
    cfg.lr = 0.001;
    cfg.max_events = 4;
    cfg.seed = seed;
    return prune_loop(net, train_set, cfg).to_json();
  };
  CHECK(run(11) == run(11));
  CHECK(run(11) != run(12));
}

TEST_CASE("prune loop error paths") {
  Rng rng(82);
  Network net(two_block_spec(), rng);
  auto [train_set, test_set] = make_synthetic(3, 4, 2, 1, 8, 8, 0.8, 83);
  PruneConfig cfg;
  CHECK_THROWS_AS(prune_loop(net, train_set, cfg), DataError);  // 3 classes vs 2

  auto [ok_train, ok_test] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 84);
  PruneConfig diverge;
  diverge.lr = 1e12;
  diverge.steps_per_prune = 50;
  diverge.batch_size = 8;
  diverge.max_events = 1;
  Rng rng2(85);
  Network net2(two_block_spec(), rng2);
  CHECK_THROWS_AS(prune_loop(net2, ok_train, diverge), DivergenceError);
}

TEST_CASE("trace sampling picks evenly spaced parameter targets") {
  // Fabricated params 100, 90, ..., 10; targets 100, 55, 10 select
  // events with params 100, 60 (nearest to 55, tie to the larger), 10.
  PruningTrace t;
  for (int i = 0; i < 10; ++i) {
    PruneEvent e;
    e.params = 100 - 10 * i;
    t.events.push_back(e);
  }
  const auto idx = sample_trace_indices(t, 3);
  REQUIRE(idx.size() == 3);
  CHECK(t.events[idx[0]].params == 100);
  CHECK(t.events[idx[1]].params == 60);
  CHECK(t.events[idx[2]].params == 10);

  const auto all = sample_trace_indices(t, 10);
  for (size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

  const auto mid = sample_trace_indices(t, 1);
  REQUIRE(mid.size() == 1);
  CHECK(t.events[mid[0]].params == 60);  // midpoint target 55, tie upward

  CHECK_THROWS_AS(sample_trace_indices(t, 0), ParamError);
  CHECK_THROWS_AS(sample_trace_indices(t, 11), ParamError);
}

TEST_CASE("sampled specs carry the event widths") {
  Rng rng(86);
  NetworkSpec spec = two_block_spec();
  Network net(spec, rng);
  auto [train_set, test_set] = make_synthetic(2, 8, 2, 1, 8, 8, 0.8, 87);
  PruneConfig cfg;
  cfg.method = PruneMethod::Random;
  cfg.steps_per_prune = 1;
  cfg.batch_size = 4;
  cfg.lr = 0.001;
  cfg.max_events = 5;
  const PruningTrace trace = prune_loop(net, train_set, cfg);
  REQUIRE(trace.events.size() == 5);
  const auto specs = sample_trace(trace, 3);
  const auto idx = sample_trace_indices(trace, 3);
  REQUIRE(specs.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(specs[i].prunable_widths == trace.events[idx[i]].widths);
    CHECK(specs[i].param_count() == trace.events[idx[i]].params);
  }
}

}  // TEST_SUITE
