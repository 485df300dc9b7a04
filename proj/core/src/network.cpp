#include "treadline/network.hpp"

#include <cmath>
#include <utility>

#include "json.hpp"
#include "treadline/error.hpp"
#include "treadline/gemm.hpp"

namespace treadline {

namespace {

template <typename T>
void add_into(TensorT<T>& dst, const TensorT<T>& src) {
  if (!dst.same_shape(src))
    throw ShapeError("elementwise add shape mismatch: " + dst.shape_str() + " vs " +
                     src.shape_str());
  for (int64_t i = 0; i < dst.numel(); ++i) dst.data()[i] += src.data()[i];
}

// Zeroes every [N, c, :, :] plane whose mask entry is 0.
template <typename T>
void apply_channel_mask(TensorT<T>& x, const std::vector<uint8_t>& mask) {
  const int64_t n = x.extent(0), c = x.extent(1), plane = x.extent(2) * x.extent(3);
  for (int64_t ch = 0; ch < c; ++ch) {
    if (mask[static_cast<size_t>(ch)]) continue;
    for (int64_t b = 0; b < n; ++b) {
      T* p = x.data() + (b * c + ch) * plane;
      std::fill(p, p + plane, T(0));
    }
  }
}

int64_t strided_extent(int64_t in, int stride) { return conv_out_extent(in, 3, stride, 1); }

const NetworkSpec& validated(const NetworkSpec& spec) {
  spec.validate();
  return spec;
}

}  // namespace

// ------------------------------------------------------------- NetworkSpec

NetworkSpec NetworkSpec::wide_resnet(int depth, double width_mult, int in_channels, int in_size,
                                     int classes) {
  if ((depth - 4) % 6 != 0 || depth < 10)
    throw ParamError("depth must be 6n+4 with n >= 1, got " + std::to_string(depth));
  if (width_mult <= 0) throw ParamError("width multiplier must be positive");
  const int n = (depth - 4) / 6;
  NetworkSpec spec;
  spec.in_channels = in_channels;
  spec.in_height = in_size;
  spec.in_width = in_size;
  spec.classes = classes;
  spec.stem_width = 16;
  for (int base : {16, 32, 64}) {
    const int w = std::max(1, static_cast<int>(std::lround(base * width_mult)));
    spec.groups.push_back({n, w});
  }
  for (const GroupSpec& g : spec.groups)
    for (int b = 0; b < g.blocks; ++b) spec.prunable_widths.push_back(g.width);
  spec.validate();
  return spec;
}

int NetworkSpec::total_blocks() const {
  int n = 0;
  for (const GroupSpec& g : groups) n += g.blocks;
  return n;
}

int NetworkSpec::group_of_block(int block) const {
  int b = block;
  for (size_t g = 0; g < groups.size(); ++g) {
    if (b < groups[g].blocks) return static_cast<int>(g);
    b -= groups[g].blocks;
  }
  throw ParamError("block index " + std::to_string(block) + " out of range");
}

int NetworkSpec::block_stride(int block) const {
  const int g = group_of_block(block);
  if (g == 0) return 1;
  // First block of each later group downsamples.
  int first = 0;
  for (int i = 0; i < g; ++i) first += groups[static_cast<size_t>(i)].blocks;
  return block == first ? 2 : 1;
}

int NetworkSpec::block_in_width(int block) const {
  if (block == 0) return stem_width;
  return block_out_width(block - 1);
}

int NetworkSpec::block_out_width(int block) const { return group_width(group_of_block(block)); }

bool NetworkSpec::block_has_projection(int block) const {
  return block_in_width(block) != block_out_width(block) || block_stride(block) != 1;
}

int64_t NetworkSpec::group_height(int group) const {
  int64_t h = in_height;
  for (int g = 1; g <= group; ++g) h = strided_extent(h, 2);
  return h;
}

int64_t NetworkSpec::group_width_px(int group) const {
  int64_t w = in_width;
  for (int g = 1; g <= group; ++g) w = strided_extent(w, 2);
  return w;
}

int64_t NetworkSpec::block_in_height(int block) const {
  const int g = group_of_block(block);
  return block_stride(block) == 2 ? group_height(g - 1) : group_height(g);
}

int64_t NetworkSpec::block_in_width_px(int block) const {
  const int g = group_of_block(block);
  return block_stride(block) == 2 ? group_width_px(g - 1) : group_width_px(g);
}

int64_t NetworkSpec::param_count() const {
  validate();
  int64_t total = static_cast<int64_t>(stem_width) * in_channels * 9 + 2 * stem_width;
  for (int b = 0; b < total_blocks(); ++b) {
    const int64_t wi = block_in_width(b);
    const int64_t wo = block_out_width(b);
    const int64_t p = prunable_widths[static_cast<size_t>(b)];
    total += p * wi * 9 + 2 * p;        // conv1 + bn1
    total += wo * p * 9 + 2 * wo;       // conv2 + bn2
    if (block_has_projection(b)) total += wo * wi;
  }
  const int64_t last = groups.back().width;
  total += static_cast<int64_t>(classes) * last + classes;
  return total;
}

int64_t NetworkSpec::mac_count() const {
  validate();
  int64_t total =
      static_cast<int64_t>(stem_width) * in_channels * 9 * in_height * in_width;
  for (int b = 0; b < total_blocks(); ++b) {
    const int g = group_of_block(b);
    const int64_t hw = group_height(g) * group_width_px(g);
    const int64_t wi = block_in_width(b);
    const int64_t wo = block_out_width(b);
    const int64_t p = prunable_widths[static_cast<size_t>(b)];
    total += p * wi * 9 * hw;
    total += wo * p * 9 * hw;
    if (block_has_projection(b)) total += wo * wi * hw;
  }
  total += static_cast<int64_t>(classes) * groups.back().width;
  return total;
}

void NetworkSpec::validate() const {
  if (groups.empty()) throw ParamError("network spec needs at least one group");
  if (in_channels < 1 || in_height < 1 || in_width < 1)
    throw ParamError("network spec input shape must be positive");
  if (classes < 2) throw ParamError("network spec needs at least two classes");
  if (stem_width < 1) throw ParamError("stem width must be >= 1");
  for (const GroupSpec& g : groups)
    if (g.blocks < 1 || g.width < 1) throw ParamError("group descriptors must be >= 1");
  if (static_cast<int>(prunable_widths.size()) != total_blocks())
    throw ParamError("prunable width count " + std::to_string(prunable_widths.size()) +
                     " does not match block count " + std::to_string(total_blocks()));
  for (int w : prunable_widths)
    if (w < 1) throw ParamError("every prunable width must be >= 1");
  const int last_group = static_cast<int>(groups.size()) - 1;
  if (group_height(last_group) < 1 || group_width_px(last_group) < 1)
    throw ParamError("input too small for the group strides");
}

std::string NetworkSpec::to_json() const {
  nlohmann::json j;
  j["in_channels"] = in_channels;
  j["in_height"] = in_height;
  j["in_width"] = in_width;
  j["classes"] = classes;
  j["stem_width"] = stem_width;
  j["groups"] = nlohmann::json::array();
  for (const GroupSpec& g : groups) j["groups"].push_back({{"blocks", g.blocks}, {"width", g.width}});
  j["prunable_widths"] = prunable_widths;
  return j.dump(2) + "\n";
}

NetworkSpec NetworkSpec::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    NetworkSpec spec;
    spec.in_channels = j.at("in_channels").get<int>();
    spec.in_height = j.at("in_height").get<int>();
    spec.in_width = j.at("in_width").get<int>();
    spec.classes = j.at("classes").get<int>();
    spec.stem_width = j.at("stem_width").get<int>();
    for (const auto& g : j.at("groups"))
      spec.groups.push_back({g.at("blocks").get<int>(), g.at("width").get<int>()});
    spec.prunable_widths = j.at("prunable_widths").get<std::vector<int>>();
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad network spec: ") + e.what());
  }
}

// ------------------------------------------------------------------ Block

template <typename T>
BlockT<T>::BlockT(int in_width, int prunable_width, int out_width, int stride, Rng& rng)
    : conv1(in_width, prunable_width, stride, 1, rng),
      bn1(prunable_width),
      conv2(prunable_width, out_width, 1, 1, rng),
      bn2(out_width) {
  if (in_width != out_width || stride != 1)
    proj.emplace(in_width, out_width, stride, rng);
  mask.assign(static_cast<size_t>(prunable_width), 1);
}

template <typename T>
TensorT<T> BlockT<T>::forward(const TensorT<T>& x) {
  TensorT<T> a = relu1.forward(bn1.forward(conv1.forward(x)));
  apply_channel_mask(a, mask);
  TensorT<T> y = bn2.forward(conv2.forward(a));
  prune_act = std::move(a);
  have_act = true;
  have_grad = false;
  if (proj) {
    add_into(y, proj->forward(x));
  } else {
    add_into(y, x);
  }
  return y;
}

template <typename T>
TensorT<T> BlockT<T>::backward(const TensorT<T>& dy) {
  if (!have_act) throw StateError("block backward before forward");
  TensorT<T> d_act = conv2.backward(bn2.backward(dy));
  prune_grad = d_act;  // loss gradient at the masked activation, pre-exclusion
  have_grad = true;
  apply_channel_mask(d_act, mask);  // masked channels learn nothing
  TensorT<T> dx = conv1.backward(bn1.backward(relu1.backward(d_act)));
  if (proj) {
    add_into(dx, proj->backward(dy));
  } else {
    add_into(dx, dy);
  }
  return dx;
}

template <typename T>
void BlockT<T>::set_training(bool training) {
  bn1.training = training;
  bn2.training = training;
}

template <typename T>
void BlockT<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  conv1.collect_params(prefix + ".conv1", out);
  bn1.collect_params(prefix + ".bn1", out);
  conv2.collect_params(prefix + ".conv2", out);
  bn2.collect_params(prefix + ".bn2", out);
  if (proj) proj->collect_params(prefix + ".proj", out);
}

template <typename T>
void BlockT<T>::collect_buffers(const std::string& prefix, std::vector<BufferRef<T>>& out) {
  bn1.collect_buffers(prefix + ".bn1", out);
  bn2.collect_buffers(prefix + ".bn2", out);
}

template <typename T>
int BlockT<T>::live_channels() const {
  int live = 0;
  for (uint8_t m : mask) live += m ? 1 : 0;
  return live;
}

// ---------------------------------------------------------------- Network

template <typename T>
NetworkT<T>::NetworkT(const NetworkSpec& spec, Rng& rng)
    : spec_(validated(spec)),
      stem_(spec.in_channels, spec.stem_width, 1, 1, rng),
      stem_bn_(spec.stem_width),
      pool_(),
      fc_(spec.groups.back().width, spec.classes, rng) {
  for (int b = 0; b < spec_.total_blocks(); ++b)
    blocks_.emplace_back(spec_.block_in_width(b), spec_.prunable_widths[static_cast<size_t>(b)],
                         spec_.block_out_width(b), spec_.block_stride(b), rng);
}

template <typename T>
TensorT<T> NetworkT<T>::forward(const TensorT<T>& x) {
  if (x.rank() != 4 || x.extent(1) != spec_.in_channels || x.extent(2) != spec_.in_height ||
      x.extent(3) != spec_.in_width)
    throw ShapeError("network input " + x.shape_str() + " does not match spec");

  TensorT<T> h = stem_relu_.forward(stem_bn_.forward(stem_.forward(x)));
  attention_.clear();
  int b = 0;
  for (const GroupSpec& g : spec_.groups) {
    for (int i = 0; i < g.blocks; ++i, ++b) h = blocks_[static_cast<size_t>(b)].forward(h);
    attention_.push_back(h);
  }
  have_forward_ = true;
  return fc_.forward(pool_.forward(h));
}

template <typename T>
void NetworkT<T>::backward(const TensorT<T>& dlogits,
                           const std::vector<TensorT<T>>& attention_grads) {
  if (!have_forward_) throw StateError("network backward before forward");
  if (!attention_grads.empty() &&
      attention_grads.size() != spec_.groups.size())
    throw ShapeError("attention gradient count does not match attention points");

  TensorT<T> d = pool_.backward(fc_.backward(dlogits));
  int b = static_cast<int>(blocks_.size()) - 1;
  for (int g = static_cast<int>(spec_.groups.size()) - 1; g >= 0; --g) {
    if (!attention_grads.empty()) add_into(d, attention_grads[static_cast<size_t>(g)]);
    for (int i = 0; i < spec_.groups[static_cast<size_t>(g)].blocks; ++i, --b)
      d = blocks_[static_cast<size_t>(b)].backward(d);
  }
  stem_.backward(stem_bn_.backward(stem_relu_.backward(d)));
}

template <typename T>
void NetworkT<T>::set_training(bool training) {
  training_ = training;
  stem_bn_.training = training;
  for (auto& blk : blocks_) blk.set_training(training);
}

template <typename T>
void NetworkT<T>::zero_grad() {
  for (ParamRef<T>& p : params()) p.grad->fill(T(0));
}

template <typename T>
std::vector<ParamRef<T>> NetworkT<T>::params() {
  std::vector<ParamRef<T>> out;
  stem_.collect_params("stem", out);
  stem_bn_.collect_params("stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_params("block" + std::to_string(i), out);
  fc_.collect_params("fc", out);
  return out;
}

template <typename T>
std::vector<BufferRef<T>> NetworkT<T>::buffers() {
  std::vector<BufferRef<T>> out;
  stem_bn_.collect_buffers("stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_buffers("block" + std::to_string(i), out);
  return out;
}

template <typename T>
const std::vector<TensorT<T>>& NetworkT<T>::attention() const {
  if (!have_forward_) throw StateError("attention read before forward");
  return attention_;
}

template <typename T>
void NetworkT<T>::set_channel(int block, int channel, bool live) {
  if (block < 0 || block >= num_blocks()) throw ParamError("block index out of range");
  auto& m = blocks_[static_cast<size_t>(block)].mask;
  if (channel < 0 || channel >= static_cast<int>(m.size()))
    throw ParamError("channel index out of range");
  m[static_cast<size_t>(channel)] = live ? 1 : 0;
}

template <typename T>
bool NetworkT<T>::channel_live(int block, int channel) const {
  if (block < 0 || block >= num_blocks()) throw ParamError("block index out of range");
  const auto& m = blocks_[static_cast<size_t>(block)].mask;
  if (channel < 0 || channel >= static_cast<int>(m.size()))
    throw ParamError("channel index out of range");
  return m[static_cast<size_t>(channel)] != 0;
}

template <typename T>
int NetworkT<T>::live_channels(int block) const {
  if (block < 0 || block >= num_blocks()) throw ParamError("block index out of range");
  return blocks_[static_cast<size_t>(block)].live_channels();
}

template <typename T>
std::vector<std::vector<uint8_t>> NetworkT<T>::masks() const {
  std::vector<std::vector<uint8_t>> out;
  out.reserve(blocks_.size());
  for (const auto& blk : blocks_) out.push_back(blk.mask);
  return out;
}

template <typename T>
void NetworkT<T>::apply_masks(const std::vector<std::vector<uint8_t>>& masks) {
  if (masks.size() != blocks_.size()) throw ShapeError("mask count does not match block count");
  for (size_t i = 0; i < masks.size(); ++i) {
    if (masks[i].size() != blocks_[i].mask.size())
      throw ShapeError("mask width does not match block " + std::to_string(i));
    blocks_[i].mask = masks[i];
  }
}

template <typename T>
NetworkSpec NetworkT<T>::compact_spec() const {
  NetworkSpec spec = spec_;
  for (size_t i = 0; i < blocks_.size(); ++i)
    spec.prunable_widths[i] = blocks_[i].live_channels();
  spec.validate();
  return spec;
}

template <typename T>
const TensorT<T>& NetworkT<T>::prune_activation(int block) const {
  if (block < 0 || block >= num_blocks()) throw ParamError("block index out of range");
  const auto& blk = blocks_[static_cast<size_t>(block)];
  if (!blk.have_act) throw StateError("prune activation read before forward");
  return blk.prune_act;
}

template <typename T>
const TensorT<T>& NetworkT<T>::prune_gradient(int block) const {
  if (block < 0 || block >= num_blocks()) throw ParamError("block index out of range");
  const auto& blk = blocks_[static_cast<size_t>(block)];
  if (!blk.have_grad) throw StateError("prune gradient read before backward");
  return blk.prune_grad;
}

template <typename T>
void NetworkT<T>::set_threads(int threads) {
  if (threads < 1) throw ParamError("thread count must be >= 1");
  stem_.threads = threads;
  fc_.threads = threads;
  for (auto& blk : blocks_) {
    blk.conv1.threads = threads;
    blk.conv2.threads = threads;
    if (blk.proj) blk.proj->threads = threads;
  }
}

template struct BlockT<float>;
template struct BlockT<double>;
template class NetworkT<float>;
template class NetworkT<double>;

}  // namespace treadline
