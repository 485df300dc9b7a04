#include "treadline/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "treadline/error.hpp"

namespace treadline {

namespace {

constexpr uint64_t kMaxRank = 8;

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (!is) throw DataError("tensor blob truncated in header");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f32(std::ostream& os, const float* v, size_t count) {
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(count * 4));
  } else {
    for (size_t i = 0; i < count; ++i) {
      uint32_t bits;
      std::memcpy(&bits, v + i, 4);
      unsigned char buf[4];
      for (int b = 0; b < 4; ++b) buf[b] = static_cast<unsigned char>(bits >> (8 * b));
      os.write(reinterpret_cast<const char*>(buf), 4);
    }
  }
}

void get_f32(std::istream& is, float* v, size_t count) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(count * 4));
    if (!is) throw DataError("tensor blob truncated in data");
  } else {
    for (size_t i = 0; i < count; ++i) {
      unsigned char buf[4];
      is.read(reinterpret_cast<char*>(buf), 4);
      if (!is) throw DataError("tensor blob truncated in data");
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(buf[b]) << (8 * b);
      std::memcpy(v + i, &bits, 4);
    }
  }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, static_cast<uint64_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i) put_u64(os, static_cast<uint64_t>(t.extent(i)));
  put_f32(os, t.data(), static_cast<size_t>(t.numel()));
  if (!os) throw DataError("tensor blob write failed");
}

Tensor read_tensor(std::istream& is) {
  const uint64_t rank = get_u64(is);
  if (rank == 0 || rank > kMaxRank)
    throw DataError("tensor blob has invalid rank " + std::to_string(rank));
  std::vector<int64_t> shape(rank);
  uint64_t numel = 1;
  for (uint64_t i = 0; i < rank; ++i) {
    const uint64_t e = get_u64(is);
    if (e == 0 || e > static_cast<uint64_t>(std::numeric_limits<int64_t>::max()))
      throw DataError("tensor blob has invalid extent");
    if (numel > (1ULL << 40) / e) throw DataError("tensor blob unreasonably large");
    numel *= e;
    shape[i] = static_cast<int64_t>(e);
  }
  Tensor t(shape);
  get_f32(is, t.data(), static_cast<size_t>(numel));
  return t;
}

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open for writing: " + path);
  for (const Tensor& t : tensors) write_tensor(os, t);
  os.flush();
  if (!os) throw DataError("write failed: " + path);
}

std::vector<Tensor> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  std::vector<Tensor> out;
  while (true) {
    is.peek();
    if (is.eof()) break;
    out.push_back(read_tensor(is));
  }
  return out;
}

void save_tensor(const std::string& path, const Tensor& t) { save_tensors(path, {t}); }

Tensor load_tensor(const std::string& path) {
  auto all = load_tensors(path);
  if (all.size() != 1)
    throw DataError(path + " holds " + std::to_string(all.size()) + " tensors, expected 1");
  return all[0];
}

}  // namespace treadline
