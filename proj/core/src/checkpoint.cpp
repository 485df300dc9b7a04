#include "treadline/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "treadline/error.hpp"
#include "treadline/serialize.hpp"

namespace treadline {

namespace {

using nlohmann::json;

json metrics_to_json(const std::vector<EpochMetrics>& history) {
  json arr = json::array();
  for (const EpochMetrics& m : history)
    arr.push_back({{"epoch", m.epoch},
                   {"lr", m.lr},
                   {"train_loss", m.train_loss},
                   {"train_err", m.train_err},
                   {"train_at", m.train_at},
                   {"test_loss", m.test_loss},
                   {"test_err", m.test_err}});
  return arr;
}

std::vector<EpochMetrics> metrics_from_json(const json& arr) {
  std::vector<EpochMetrics> out;
  for (const auto& j : arr) {
    EpochMetrics m;
    m.epoch = j.at("epoch").get<int>();
    m.lr = j.at("lr").get<double>();
    m.train_loss = j.at("train_loss").get<double>();
    m.train_err = j.at("train_err").get<double>();
    m.train_at = j.at("train_at").get<double>();
    m.test_loss = j.at("test_loss").get<double>();
    m.test_err = j.at("test_err").get<double>();
    out.push_back(m);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  os << text;
  if (!os) throw DataError("write failed: " + path);
}

}  // namespace

void save_checkpoint(const std::string& dir, Network& net, const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);

  auto params = net.params();
  auto buffers = net.buffers();

  json j;
  j["spec"] = json::parse(net.spec().to_json());
  j["epoch"] = meta.epoch;
  j["seed"] = meta.seed;
  j["history"] = metrics_to_json(meta.history);
  j["masks"] = net.masks();
  json names = json::array();
  for (const auto& p : params) names.push_back(p.name);
  for (const auto& b : buffers) names.push_back(b.name);
  j["tensors"] = names;
  write_file(dir + "/manifest.json", j.dump(2) + "\n");

  std::vector<Tensor> blobs;
  blobs.reserve(params.size() + buffers.size());
  for (const auto& p : params) blobs.push_back(*p.value);
  for (const auto& b : buffers) blobs.push_back(*b.value);
  save_tensors(dir + "/weights.bin", blobs);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  json j;
  try {
    j = json::parse(read_file(dir + "/manifest.json"));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }

  LoadedCheckpoint out;
  try {
    const NetworkSpec spec = NetworkSpec::from_json(j.at("spec").dump());
    Rng rng(0);  // placeholder weights; overwritten below
    out.net = std::make_unique<Network>(spec, rng);
    out.meta.epoch = j.at("epoch").get<int>();
    out.meta.seed = j.at("seed").get<uint64_t>();
    out.meta.history = metrics_from_json(j.at("history"));
    out.net->apply_masks(j.at("masks").get<std::vector<std::vector<uint8_t>>>());
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }

  auto params = out.net->params();
  auto buffers = out.net->buffers();
  std::vector<Tensor> blobs = load_tensors(dir + "/weights.bin");
  if (blobs.size() != params.size() + buffers.size())
    throw DataError("checkpoint holds " + std::to_string(blobs.size()) + " tensors, expected " +
                    std::to_string(params.size() + buffers.size()));
  size_t i = 0;
  for (auto& p : params) {
    if (!blobs[i].same_shape(*p.value))
      throw DataError("checkpoint tensor shape mismatch at " + p.name);
    *p.value = std::move(blobs[i++]);
  }
  for (auto& b : buffers) {
    if (!blobs[i].same_shape(*b.value))
      throw DataError("checkpoint tensor shape mismatch at " + b.name);
    *b.value = std::move(blobs[i++]);
  }
  return out;
}

void save_spec(const std::string& path, const NetworkSpec& spec) {
  write_file(path, spec.to_json());
}

NetworkSpec load_spec(const std::string& path) {
  return NetworkSpec::from_json(read_file(path));
}

}  // namespace treadline
