// Pipeline driver: train -> prune -> profile -> discover -> distill ->
// report. Configuration is a key=value file with flag overrides; every
// command dumps its resolved config next to its artifacts. Exit codes:
// 0 ok, 1 usage, 2 data, 3 numeric divergence.

#include <sys/utsname.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "treadline/checkpoint.hpp"
#include "treadline/data.hpp"
#include "treadline/discover.hpp"
#include "treadline/distill.hpp"
#include "treadline/error.hpp"
#include "treadline/network.hpp"
#include "treadline/profiler.hpp"
#include "treadline/rng.hpp"
#include "treadline/saliency.hpp"
#include "treadline/train.hpp"

namespace fs = std::filesystem;
using namespace treadline;

namespace {

// ---------------------------------------------------------------- files

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  out.flush();
  if (!out) throw DataError("short write to " + path);
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string host_descriptor() {
  utsname u{};
  if (uname(&u) != 0) return "unknown";
  return std::string(u.sysname) + " " + u.release + " " + u.machine;
}

// ---------------------------------------------------------- configuration

struct PipelineConfig {
  std::string out = "runs/toy";
  uint64_t seed = 1;

  std::string dataset_kind = "synthetic";  // synthetic | cifar10 | raw
  std::string dataset_path;                // unused for synthetic
  int data_classes = 4;
  int data_channels = 3;
  int data_height = 8;
  int data_width = 8;
  int train_per_class = 64;
  int test_per_class = 16;
  double data_noise = 0.5;

  int family_depth = 10;
  double family_widen = 1.0;

  int train_epochs = 10;
  int train_batch = 32;
  double train_lr = 0.1;
  double train_lr_decay = 5.0;
  int train_lr_every = 60;
  double train_momentum = 0.9;
  double train_weight_decay = 0.0005;
  bool train_augment = false;
  int train_threads = 1;
  int eval_batch = 256;

  std::string prune_method = "fisher";
  int prune_cadence = 100;
  int prune_batch = 32;
  double prune_lr = 0;  // 0 = lowest lr of the training schedule
  int prune_floor = 1;
  int prune_max_events = 0;
  int prune_samples = 5;

  int harness_warmup = 10;
  int harness_runs = 30;
  int harness_batch = 1;
  std::string harness_host;  // empty = detect

  double distill_beta = 1000;
  bool distill_squared = false;
};

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParamError("config key " + key + " wants an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParamError("config key " + key + " wants an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ParamError("config key " + key + " wants a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ParamError("config key " + key + " wants a boolean, got '" + v + "'");
}

void apply_key(PipelineConfig& c, const std::string& k, const std::string& v) {
  if (k == "out") c.out = v;
  else if (k == "seed") c.seed = parse_u64(k, v);
  else if (k == "dataset.kind") c.dataset_kind = v;
  else if (k == "dataset.path") c.dataset_path = v;
  else if (k == "dataset.classes") c.data_classes = parse_int(k, v);
  else if (k == "dataset.channels") c.data_channels = parse_int(k, v);
  else if (k == "dataset.height") c.data_height = parse_int(k, v);
  else if (k == "dataset.width") c.data_width = parse_int(k, v);
  else if (k == "dataset.train_per_class") c.train_per_class = parse_int(k, v);
  else if (k == "dataset.test_per_class") c.test_per_class = parse_int(k, v);
  else if (k == "dataset.noise") c.data_noise = parse_double(k, v);
  else if (k == "family.depth") c.family_depth = parse_int(k, v);
  else if (k == "family.widen") c.family_widen = parse_double(k, v);
  else if (k == "train.epochs") c.train_epochs = parse_int(k, v);
  else if (k == "train.batch") c.train_batch = parse_int(k, v);
  else if (k == "train.lr") c.train_lr = parse_double(k, v);
  else if (k == "train.lr_decay") c.train_lr_decay = parse_double(k, v);
  else if (k == "train.lr_every") c.train_lr_every = parse_int(k, v);
  else if (k == "train.momentum") c.train_momentum = parse_double(k, v);
  else if (k == "train.weight_decay") c.train_weight_decay = parse_double(k, v);
  else if (k == "train.augment") c.train_augment = parse_bool(k, v);
  else if (k == "train.threads") c.train_threads = parse_int(k, v);
  else if (k == "eval.batch") c.eval_batch = parse_int(k, v);
  else if (k == "prune.method") c.prune_method = v;
  else if (k == "prune.cadence") c.prune_cadence = parse_int(k, v);
  else if (k == "prune.batch") c.prune_batch = parse_int(k, v);
  else if (k == "prune.lr") c.prune_lr = parse_double(k, v);
  else if (k == "prune.floor") c.prune_floor = parse_int(k, v);
  else if (k == "prune.max_events") c.prune_max_events = parse_int(k, v);
  else if (k == "prune.samples") c.prune_samples = parse_int(k, v);
  else if (k == "harness.warmup") c.harness_warmup = parse_int(k, v);
  else if (k == "harness.runs") c.harness_runs = parse_int(k, v);
  else if (k == "harness.batch") c.harness_batch = parse_int(k, v);
  else if (k == "harness.host") c.harness_host = v;
  else if (k == "distill.beta") c.distill_beta = parse_double(k, v);
  else if (k == "distill.squared") c.distill_squared = parse_bool(k, v);
  else throw ParamError("unknown config key: " + k);
}

void apply_assignment(PipelineConfig& c, const std::string& line, const std::string& where) {
  const size_t eq = line.find('=');
  if (eq == std::string::npos) throw ParamError(where + ": expected KEY=VALUE, got '" + line + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  apply_key(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

void apply_config_file(PipelineConfig& c, const std::string& path) {
  std::istringstream in(slurp(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    apply_assignment(c, line, path + ":" + std::to_string(lineno));
  }
}

std::string dump_config(const PipelineConfig& c) {
  std::ostringstream o;
  o << "out=" << c.out << "\n";
  o << "seed=" << c.seed << "\n";
  o << "dataset.kind=" << c.dataset_kind << "\n";
  o << "dataset.path=" << c.dataset_path << "\n";
  o << "dataset.classes=" << c.data_classes << "\n";
  o << "dataset.channels=" << c.data_channels << "\n";
  o << "dataset.height=" << c.data_height << "\n";
  o << "dataset.width=" << c.data_width << "\n";
  o << "dataset.train_per_class=" << c.train_per_class << "\n";
  o << "dataset.test_per_class=" << c.test_per_class << "\n";
  o << "dataset.noise=" << fmt(c.data_noise) << "\n";
  o << "family.depth=" << c.family_depth << "\n";
  o << "family.widen=" << fmt(c.family_widen) << "\n";
  o << "train.epochs=" << c.train_epochs << "\n";
  o << "train.batch=" << c.train_batch << "\n";
  o << "train.lr=" << fmt(c.train_lr) << "\n";
  o << "train.lr_decay=" << fmt(c.train_lr_decay) << "\n";
  o << "train.lr_every=" << c.train_lr_every << "\n";
  o << "train.momentum=" << fmt(c.train_momentum) << "\n";
  o << "train.weight_decay=" << fmt(c.train_weight_decay) << "\n";
  o << "train.augment=" << (c.train_augment ? 1 : 0) << "\n";
  o << "train.threads=" << c.train_threads << "\n";
  o << "eval.batch=" << c.eval_batch << "\n";
  o << "prune.method=" << c.prune_method << "\n";
  o << "prune.cadence=" << c.prune_cadence << "\n";
  o << "prune.batch=" << c.prune_batch << "\n";
  o << "prune.lr=" << fmt(c.prune_lr) << "\n";
  o << "prune.floor=" << c.prune_floor << "\n";
  o << "prune.max_events=" << c.prune_max_events << "\n";
  o << "prune.samples=" << c.prune_samples << "\n";
  o << "harness.warmup=" << c.harness_warmup << "\n";
  o << "harness.runs=" << c.harness_runs << "\n";
  o << "harness.batch=" << c.harness_batch << "\n";
  o << "harness.host=" << c.harness_host << "\n";
  o << "distill.beta=" << fmt(c.distill_beta) << "\n";
  o << "distill.squared=" << (c.distill_squared ? 1 : 0) << "\n";
  return o.str();
}

TrainConfig make_train_config(const PipelineConfig& c) {
  TrainConfig tc;
  tc.epochs = c.train_epochs;
  tc.batch_size = c.train_batch;
  tc.lr = LrSchedule{c.train_lr, c.train_lr_decay, c.train_lr_every};
  tc.momentum = c.train_momentum;
  tc.weight_decay = c.train_weight_decay;
  tc.augment = c.train_augment;
  tc.threads = c.train_threads;
  tc.seed = c.seed;
  return tc;
}

double lowest_schedule_lr(const PipelineConfig& c) {
  const LrSchedule lr{c.train_lr, c.train_lr_decay, c.train_lr_every};
  return lr.at(c.train_epochs > 0 ? c.train_epochs - 1 : 0);
}

HarnessConfig make_harness(const PipelineConfig& c) {
  HarnessConfig hc;
  hc.warmup = c.harness_warmup;
  hc.runs = c.harness_runs;
  hc.batch = c.harness_batch;
  hc.threads = 1;  // measurements are single-threaded by contract
  hc.host = c.harness_host.empty() ? host_descriptor() : c.harness_host;
  return hc;
}

// ------------------------------------------------------------- datasets

std::pair<Dataset, Dataset> load_datasets(const PipelineConfig& c) {
  if (c.dataset_kind == "synthetic")
    return make_synthetic(c.data_classes, c.train_per_class, c.test_per_class, c.data_channels,
                          c.data_height, c.data_width, c.data_noise, c.seed);
  if (c.dataset_kind == "cifar10") {
    if (c.dataset_path.empty()) throw DataError("dataset.path is required for cifar10");
    return {load_cifar10(c.dataset_path, true), load_cifar10(c.dataset_path, false)};
  }
  if (c.dataset_kind == "raw") {
    if (c.dataset_path.empty()) throw DataError("dataset.path is required for raw datasets");
    return {load_raw(c.dataset_path + "/train.bin"), load_raw(c.dataset_path + "/test.bin")};
  }
  throw ParamError("unknown dataset.kind: " + c.dataset_kind);
}

NetworkSpec family_spec(const PipelineConfig& c, const Dataset& train_set) {
  const int channels = static_cast<int>(train_set.images.extent(1));
  const int height = static_cast<int>(train_set.images.extent(2));
  const int width = static_cast<int>(train_set.images.extent(3));
  if (height != width) throw ParamError("the residual family expects square inputs");
  return NetworkSpec::wide_resnet(c.family_depth, c.family_widen, channels, height,
                                  train_set.classes);
}

// Accepts either a bare architecture file or a student file with choices.
NetworkSpec load_any_spec(const std::string& path) {
  const std::string text = slurp(path);
  try {
    return NetworkSpec::from_json(text);
  } catch (const DataError&) {
  }
  try {
    return StudentSpec::from_json(text).spec;
  } catch (const DataError&) {
  }
  throw DataError("not an architecture or student file: " + path);
}

std::string metrics_csv(const FitResult& r) {
  std::string out = "epoch,train_ce,train_at,test_err\n";
  for (const auto& e : r.history) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.train_at) + "," +
           fmt(e.test_err) + "\n";
  }
  return out;
}

// Whole-network single-inference latency through the timer seam.
LatencySample bench_network(const NetworkSpec& spec, const HarnessConfig& cfg,
                            const InferenceTimer& timer) {
  Rng rng(1);  // weights cannot change the timing
  Network net(spec, rng);
  net.set_training(false);
  net.set_threads(cfg.threads);
  const Tensor x = Tensor::zeros({cfg.batch, spec.in_channels, spec.in_height, spec.in_width});
  BenchTask task{0, [&net, &x] { net.forward(x); }};
  for (int i = 0; i < cfg.warmup; ++i) timer.sample(task);
  std::vector<double> times;
  times.reserve(static_cast<size_t>(cfg.runs));
  for (int i = 0; i < cfg.runs; ++i) times.push_back(timer.sample(task));
  LatencySample s;
  s.channels = 0;
  const auto [med, iqr] = median_iqr(times);
  s.median_ns = med;
  s.iqr_ns = iqr;
  return s;
}

void save_run(const std::string& dir, Network& net, const CheckpointMeta& meta,
              const FitResult& r) {
  save_checkpoint(dir, net, meta);
  save_spec(dir + "/spec.json", net.spec());
  spit(dir + "/metrics.csv", metrics_csv(r));
}

// ------------------------------------------------------------- commands

void cmd_train(const PipelineConfig& cfg, const std::string& spec_path, const std::string& tag) {
  spit(cfg.out + "/config-train.txt", dump_config(cfg));
  auto [train_set, test_set] = load_datasets(cfg);
  const NetworkSpec spec =
      spec_path.empty() ? family_spec(cfg, train_set) : load_any_spec(spec_path);

  Rng rng(cfg.seed);
  Network net(spec, rng);
  const TrainConfig tc = make_train_config(cfg);
  const FitResult r = train(net, train_set, test_set, tc);

  const std::string dir = cfg.out + "/" + tag;
  save_run(dir, net, CheckpointMeta{tc.epochs, cfg.seed, r.history}, r);
  const double err = r.history.empty() ? 1.0 : r.history.back().test_err;
  std::cout << "[train] " << tag << ": params=" << spec.param_count()
            << " epochs=" << tc.epochs << " test_err=" << fmt(err) << " -> " << dir << "\n";
}

void cmd_prune(const PipelineConfig& cfg, const std::string& method_name,
               const std::string& teacher_dir) {
  const PruneMethod method = parse_prune_method(method_name);
  spit(cfg.out + "/config-prune.txt", dump_config(cfg));
  auto [train_set, test_set] = load_datasets(cfg);
  LoadedCheckpoint teacher =
      load_checkpoint(teacher_dir.empty() ? cfg.out + "/teacher" : teacher_dir);

  PruneConfig pc;
  pc.method = method;
  pc.steps_per_prune = cfg.prune_cadence;
  pc.batch_size = cfg.prune_batch;
  pc.lr = cfg.prune_lr > 0 ? cfg.prune_lr : lowest_schedule_lr(cfg);
  pc.momentum = cfg.train_momentum;
  pc.weight_decay = cfg.train_weight_decay;
  pc.floor = cfg.prune_floor;
  pc.max_events = cfg.prune_max_events;
  pc.threads = cfg.train_threads;
  pc.seed = cfg.seed;

  const int eval_batch = cfg.eval_batch;
  PruneEventHook hook = [&test_set, eval_batch](PruneEvent& e, Network& net) {
    e.test_err = evaluate(net, test_set, eval_batch).error;
  };
  const PruningTrace trace = prune_loop(*teacher.net, train_set, pc, hook);

  const std::string dir = cfg.out + "/prune-" + prune_method_name(method);
  spit(dir + "/trace.csv", trace.to_csv());
  spit(dir + "/trace.json", trace.to_json());

  const std::vector<size_t> idx = sample_trace_indices(trace, cfg.prune_samples);
  std::string samples = "sample,step,params,macs,test_err\n";
  for (size_t i = 0; i < idx.size(); ++i) {
    const PruneEvent& e = trace.events[idx[i]];
    const NetworkSpec s = trace.spec_at(idx[i]);
    save_spec(dir + "/sample_" + std::to_string(i) + ".json", s);
    samples += std::to_string(i) + "," + std::to_string(e.step) + "," +
               std::to_string(e.params) + "," + std::to_string(s.mac_count()) + "," +
               fmt(e.test_err.value_or(std::nan(""))) + "\n";
  }
  spit(dir + "/samples.csv", samples);
  std::cout << "[prune] method=" << prune_method_name(method) << " events=" << trace.events.size()
            << " samples=" << idx.size() << " -> " << dir << "\n";
}

void cmd_profile(const PipelineConfig& cfg, const std::string& spec_path,
                 const std::string& fake_spec) {
  spit(cfg.out + "/config-profile.txt", dump_config(cfg));
  const NetworkSpec spec =
      load_any_spec(spec_path.empty() ? cfg.out + "/teacher/spec.json" : spec_path);
  const HarnessConfig hc = make_harness(cfg);
  const InferenceTimer timer = fake_spec.empty() ? real_timer() : make_fake_timer(fake_spec);

  const std::string dir = cfg.out + "/profile";
  const std::string key =
      hex64(fnv1a64(spec.to_json() + "|w" + std::to_string(hc.warmup) + ",r" +
                    std::to_string(hc.runs) + ",b" + std::to_string(hc.batch) + ",h" + hc.host +
                    "|" + (fake_spec.empty() ? "real" : fake_spec)));
  std::error_code ec;
  if (fs::exists(dir + "/cache_key.txt", ec) && fs::exists(dir + "/profile.json", ec) &&
      slurp(dir + "/cache_key.txt") == key) {
    std::cout << "[profile] cache hit " << key << " -> " << dir << "\n";
    return;
  }

  const NetworkProfile prof = profile_network(spec, hc, timer);
  spit(dir + "/profile.csv", profile_csv(prof));
  spit(dir + "/points.csv", points_csv(prof));
  spit(dir + "/profile.json", prof.to_json());
  spit(dir + "/cache_key.txt", key);

  std::cout << "[profile] layers=" << prof.layers.size()
            << " network_median_ns=" << fmt(prof.network_median_ns);
  for (const auto& [layer, op] : prof.points) {
    std::cout << " L" << layer << ":{";
    for (size_t i = 0; i < op.points.size(); ++i)
      std::cout << (i ? "," : "") << op.points[i];
    std::cout << "}";
  }
  std::cout << " -> " << dir << "\n";
}

void cmd_discover(const PipelineConfig& cfg, const std::string& fisher_path,
                  const std::string& teacher_spec_path) {
  spit(cfg.out + "/config-discover.txt", dump_config(cfg));
  const NetworkSpec teacher =
      load_any_spec(teacher_spec_path.empty() ? cfg.out + "/teacher/spec.json"
                                              : teacher_spec_path);
  const std::string fisher_file =
      fisher_path.empty() ? cfg.out + "/prune-fisher/sample_" +
                                std::to_string((cfg.prune_samples - 1) / 2) + ".json"
                          : fisher_path;
  const NetworkSpec fisher = load_any_spec(fisher_file);
  const NetworkProfile prof = NetworkProfile::from_json(slurp(cfg.out + "/profile/profile.json"));

  std::map<int, std::vector<int>> points;
  for (const auto& [layer, op] : prof.points) points[layer] = op.points;
  const StudentSpec student = discover(teacher, fisher, points);

  const std::string dir = cfg.out + "/discover";
  spit(dir + "/student.json", student.to_json());
  std::string est = "spec,params,macs,estimated_ns\n";
  est += "fisher," + std::to_string(fisher.param_count()) + "," +
         std::to_string(fisher.mac_count()) + "," + fmt(estimate_latency(fisher, prof)) + "\n";
  est += "student," + std::to_string(student.spec.param_count()) + "," +
         std::to_string(student.spec.mac_count()) + "," +
         fmt(estimate_latency(student.spec, prof)) + "\n";
  spit(dir + "/estimates.csv", est);

  std::cout << "[discover] fisher=" << fisher_file << " widths";
  for (const auto& ch : student.choices)
    std::cout << " " << ch.fisher_width << (ch.snapped ? "->" : "=") << ch.chosen_width;
  std::cout << " -> " << dir << "\n";
}

void cmd_distill(const PipelineConfig& cfg, const std::string& student_path,
                 const std::string& teacher_dir, const std::string& tag) {
  spit(cfg.out + "/config-distill.txt", dump_config(cfg));
  auto [train_set, test_set] = load_datasets(cfg);
  LoadedCheckpoint teacher =
      load_checkpoint(teacher_dir.empty() ? cfg.out + "/teacher" : teacher_dir);
  const NetworkSpec spec =
      load_any_spec(student_path.empty() ? cfg.out + "/discover/student.json" : student_path);

  Rng rng(cfg.seed);
  Network student(spec, rng);
  DistillConfig dc;
  dc.beta = cfg.distill_beta;
  dc.squared = cfg.distill_squared;
  dc.train = make_train_config(cfg);
  const FitResult r = distill(student, *teacher.net, train_set, test_set, dc);

  const std::string dir = cfg.out + "/" + tag;
  save_run(dir, student, CheckpointMeta{dc.train.epochs, cfg.seed, r.history}, r);
  const double err = r.history.empty() ? 1.0 : r.history.back().test_err;
  std::cout << "[distill] " << tag << ": beta=" << fmt(dc.beta) << " test_err=" << fmt(err)
            << " -> " << dir << "\n";
}

void cmd_report(const PipelineConfig& cfg, const std::string& fake_spec) {
  spit(cfg.out + "/config-report.txt", dump_config(cfg));
  const HarnessConfig hc = make_harness(cfg);
  const InferenceTimer timer = fake_spec.empty() ? real_timer() : make_fake_timer(fake_spec);

  struct Row {
    std::string method;
    int64_t params = 0;
    int64_t macs = 0;
    double latency_ns = 0;
    double test_err = 0;
  };
  std::vector<Row> rows;

  for (const std::string method : {"l1", "fisher"}) {
    const std::string trace_file = cfg.out + "/prune-" + method + "/trace.json";
    std::error_code ec;
    if (!fs::exists(trace_file, ec)) continue;
    const PruningTrace trace = PruningTrace::from_json(slurp(trace_file));
    for (size_t i : sample_trace_indices(trace, cfg.prune_samples)) {
      const PruneEvent& e = trace.events[i];
      if (!e.test_err)
        throw DataError(trace_file + ": sampled event at step " + std::to_string(e.step) +
                        " has no test error; rerun prune");
      const NetworkSpec spec = trace.spec_at(i);
      rows.push_back(Row{method, e.params, spec.mac_count(),
                         bench_network(spec, hc, timer).median_ns, *e.test_err});
    }
  }

  {
    const std::string student_dir = cfg.out + "/student";
    std::error_code ec;
    if (fs::exists(student_dir + "/manifest.json", ec)) {
      LoadedCheckpoint student = load_checkpoint(student_dir);
      if (student.meta.history.empty())
        throw DataError(student_dir + ": checkpoint carries no metric history");
      const NetworkSpec spec = student.net->spec();
      rows.push_back(Row{"snapped+AT", spec.param_count(), spec.mac_count(),
                         bench_network(spec, hc, timer).median_ns,
                         student.meta.history.back().test_err});
    }
  }

  if (rows.empty()) throw DataError("nothing to report under " + cfg.out);
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.latency_ns < b.latency_ns; });

  std::string csv = "method,params,macs,latency_ns,test_err,macs_per_ps\n";
  for (const Row& r : rows) {
    const double macs_per_ps =
        r.latency_ns > 0 ? static_cast<double>(r.macs) / (r.latency_ns * 1000.0) : 0;
    csv += r.method + "," + std::to_string(r.params) + "," + std::to_string(r.macs) + "," +
           fmt(r.latency_ns) + "," + fmt(r.test_err) + "," + fmt(macs_per_ps) + "\n";
  }
  spit(cfg.out + "/report.csv", csv);
  std::cout << csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latency-aware pruning and attention-transfer pipeline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, spec_path, tag, method, teacher_dir, fisher_path,
      student_path, fake_spec;
  std::vector<std::string> sets;
  uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", sets, "override a config key (KEY=VALUE, repeatable)");
    sub->add_option("--out", out_dir, "output directory (overrides config)");
    sub->add_option("--seed", seed, "global seed (overrides config)");
    return sub;
  };

  CLI::App* c_train = add_common(app.add_subcommand("train", "train a checkpoint from scratch"));
  c_train->add_option("--spec", spec_path, "architecture file (default: the config's family)");
  c_train->add_option("--tag", tag, "artifact directory name under out/ (default teacher)");

  CLI::App* c_prune = add_common(app.add_subcommand("prune", "iterative prune-and-tune"));
  c_prune->add_option("--method", method, "fisher | l1 | random (default from config)");
  c_prune->add_option("--teacher", teacher_dir, "trained checkpoint directory");

  CLI::App* c_profile = add_common(app.add_subcommand("profile", "latency staircase sweep"));
  c_profile->add_option("--spec", spec_path, "architecture to sweep (default: the teacher's)");
  c_profile->add_option("--fake-timer", fake_spec,
                        "synthetic timing source: const:T | linear:A[:B] | ceil:K:T | "
                        "plateau:C:T0:T1");

  CLI::App* c_discover = add_common(app.add_subcommand("discover", "snap widths to the treads"));
  c_discover->add_option("--fisher", fisher_path, "pruned architecture to snap");
  c_discover->add_option("--teacher-spec", spec_path, "teacher architecture file");

  CLI::App* c_distill = add_common(app.add_subcommand("distill", "attention-transfer training"));
  c_distill->add_option("--student", student_path, "student architecture file");
  c_distill->add_option("--teacher", teacher_dir, "trained checkpoint directory");
  c_distill->add_option("--tag", tag, "artifact directory name under out/ (default student)");

  CLI::App* c_report = add_common(app.add_subcommand("report", "comparison table"));
  c_report->add_option("--fake-timer", fake_spec, "synthetic timing source");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    PipelineConfig cfg;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const auto& s : sets) apply_assignment(cfg, s, "--set");
    if (!out_dir.empty()) cfg.out = out_dir;
    if (sub->count("--seed")) cfg.seed = seed;

    if (c_train->parsed())
      cmd_train(cfg, spec_path, tag.empty() ? "teacher" : tag);
    else if (c_prune->parsed())
      cmd_prune(cfg, method.empty() ? cfg.prune_method : method, teacher_dir);
    else if (c_profile->parsed())
      cmd_profile(cfg, spec_path, fake_spec);
    else if (c_discover->parsed())
      cmd_discover(cfg, fisher_path, spec_path);
    else if (c_distill->parsed())
      cmd_distill(cfg, student_path, teacher_dir, tag.empty() ? "student" : tag);
    else if (c_report->parsed())
      cmd_report(cfg, fake_spec);
    return 0;
  } catch (const DivergenceError& e) {
    std::cerr << "error (divergence): " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error (numeric): " << e.what() << "\n";
    return 3;
  } catch (const ParamError& e) {
    std::cerr << "error (usage): " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error (data): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
