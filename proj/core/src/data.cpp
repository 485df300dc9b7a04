#include "treadline/data.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "treadline/error.hpp"
#include "treadline/serialize.hpp"

namespace treadline {

namespace {

constexpr int64_t kCifarRecord = 3073;  // label byte + 3*32*32 pixels
constexpr float kCifarMean[3] = {0.4914f, 0.4822f, 0.4465f};
constexpr float kCifarStd[3] = {0.2470f, 0.2435f, 0.2616f};

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) throw DataError("dataset images must be [N,C,H,W]");
  if (static_cast<int64_t>(labels.size()) != images.extent(0))
    throw DataError("dataset label count does not match image count");
  if (classes < 1) throw DataError("dataset class count must be >= 1");
  for (int lab : labels)
    if (lab < 0 || lab >= classes) throw DataError("dataset label out of range");
}

std::pair<Tensor, std::vector<int>> gather(const Dataset& data, const std::vector<int64_t>& idx) {
  const int64_t c = data.images.extent(1), h = data.images.extent(2), w = data.images.extent(3);
  const int64_t sample = c * h * w;
  Tensor batch({static_cast<int64_t>(idx.size()), c, h, w});
  std::vector<int> labels(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const int64_t j = idx[i];
    if (j < 0 || j >= data.size()) throw DataError("gather index out of range");
    std::memcpy(batch.data() + static_cast<int64_t>(i) * sample, data.images.data() + j * sample,
                static_cast<size_t>(sample) * sizeof(float));
    labels[i] = data.labels[static_cast<size_t>(j)];
  }
  return {std::move(batch), std::move(labels)};
}

Dataset load_cifar10_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw DataError("cannot open: " + path);
  const int64_t bytes = static_cast<int64_t>(is.tellg());
  if (bytes <= 0 || bytes % kCifarRecord != 0)
    throw DataError(path + " is not a CIFAR-10 batch (size " + std::to_string(bytes) + ")");
  const int64_t n = bytes / kCifarRecord;
  is.seekg(0);

  Dataset out;
  out.classes = 10;
  out.images = Tensor({n, 3, 32, 32});
  out.labels.resize(static_cast<size_t>(n));
  std::vector<unsigned char> record(kCifarRecord);
  for (int64_t i = 0; i < n; ++i) {
    is.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    if (!is) throw DataError(path + " truncated at record " + std::to_string(i));
    const int label = record[0];
    if (label > 9) throw DataError(path + " has label " + std::to_string(label));
    out.labels[static_cast<size_t>(i)] = label;
    float* dst = out.images.data() + i * 3 * 32 * 32;
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p)
        dst[c * 1024 + p] =
            (record[1 + c * 1024 + p] / 255.0f - kCifarMean[c]) / kCifarStd[c];
  }
  return out;
}

Dataset load_cifar10(const std::string& dir, bool train) {
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  Dataset out;
  for (const std::string& f : files) {
    Dataset part = load_cifar10_file(f);
    if (out.labels.empty()) {
      out = std::move(part);
      continue;
    }
    const int64_t n0 = out.size(), n1 = part.size();
    Tensor merged({n0 + n1, 3, 32, 32});
    std::memcpy(merged.data(), out.images.data(), static_cast<size_t>(n0) * 3072 * sizeof(float));
    std::memcpy(merged.data() + n0 * 3072, part.images.data(),
                static_cast<size_t>(n1) * 3072 * sizeof(float));
    out.images = std::move(merged);
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  out.validate();
  return out;
}

void save_raw(const std::string& path, const Dataset& data) {
  data.validate();
  Tensor labels({data.size()});
  for (int64_t i = 0; i < data.size(); ++i)
    labels[i] = static_cast<float>(data.labels[static_cast<size_t>(i)]);
  Tensor classes({1});
  classes[0] = static_cast<float>(data.classes);
  save_tensors(path, {data.images, labels, classes});
}

Dataset load_raw(const std::string& path) {
  std::vector<Tensor> blobs = load_tensors(path);
  if (blobs.size() != 3) throw DataError(path + " is not a raw labeled-tensor file");
  Dataset out;
  out.images = std::move(blobs[0]);
  const Tensor& labels = blobs[1];
  if (labels.rank() != 1 || labels.extent(0) != out.images.extent(0))
    throw DataError(path + " label blob does not match images");
  out.labels.resize(static_cast<size_t>(labels.numel()));
  for (int64_t i = 0; i < labels.numel(); ++i) {
    const float v = labels[i];
    if (v < 0 || v != static_cast<float>(static_cast<int>(v)))
      throw DataError(path + " has a non-integer label");
    out.labels[static_cast<size_t>(i)] = static_cast<int>(v);
  }
  if (blobs[2].numel() != 1) throw DataError(path + " class blob malformed");
  out.classes = static_cast<int>(blobs[2][0]);
  out.validate();
  return out;
}

std::pair<Dataset, Dataset> make_synthetic(int classes, int train_per_class, int test_per_class,
                                           int channels, int height, int width, double noise,
                                           uint64_t seed) {
  if (classes < 2) throw ParamError("synthetic set needs >= 2 classes");
  if (train_per_class < 1 || test_per_class < 1)
    throw ParamError("synthetic per-class counts must be >= 1");
  if (noise < 0) throw ParamError("synthetic noise must be >= 0");

  Rng rng(seed);
  const int64_t sample = static_cast<int64_t>(channels) * height * width;
  std::vector<std::vector<float>> templates(static_cast<size_t>(classes));
  for (auto& t : templates) {
    t.resize(static_cast<size_t>(sample));
    for (float& v : t) v = static_cast<float>(rng.normal());
  }

  auto build = [&](int per_class, Rng split_rng) {
    Dataset d;
    d.classes = classes;
    const int64_t n = static_cast<int64_t>(classes) * per_class;
    d.images = Tensor({n, channels, height, width});
    d.labels.resize(static_cast<size_t>(n));
    // Interleave classes so any contiguous slice stays balanced.
    for (int64_t i = 0; i < n; ++i) {
      const int k = static_cast<int>(i % classes);
      d.labels[static_cast<size_t>(i)] = k;
      float* dst = d.images.data() + i * sample;
      const float* tpl = templates[static_cast<size_t>(k)].data();
      for (int64_t p = 0; p < sample; ++p)
        dst[p] = tpl[p] + static_cast<float>(split_rng.normal() * noise);
    }
    return d;
  };

  Dataset train = build(train_per_class, rng.spawn(1));
  Dataset test = build(test_per_class, rng.spawn(2));
  return {std::move(train), std::move(test)};
}

Tensor augment(const Tensor& batch, Rng& rng) {
  if (batch.rank() != 4) throw ShapeError("augment expects [N,C,H,W]");
  const int64_t n = batch.extent(0), c = batch.extent(1);
  const int64_t h = batch.extent(2), w = batch.extent(3);
  constexpr int64_t pad = 4;
  Tensor out(batch.shape());
  for (int64_t b = 0; b < n; ++b) {
    const bool flip = rng.bounded(2) == 1;
    const int64_t dy = rng.bounded(2 * pad + 1);
    const int64_t dx = rng.bounded(2 * pad + 1);
    for (int64_t ch = 0; ch < c; ++ch) {
      const float* src = batch.data() + (b * c + ch) * h * w;
      float* dst = out.data() + (b * c + ch) * h * w;
      for (int64_t y = 0; y < h; ++y) {
        const int64_t sy = y + dy - pad;
        for (int64_t x = 0; x < w; ++x) {
          // flip(crop(pad(img))): mirror in the cropped frame, then map
          // back into source coordinates.
          const int64_t cx = flip ? w - 1 - x : x;
          const int64_t sx = cx + dx - pad;
          dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0f;
        }
      }
    }
  }
  return out;
}

}  // namespace treadline
