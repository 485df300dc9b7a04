#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "treadline/tensor.hpp"

namespace treadline {

// Tensor blob format, little-endian regardless of host:
//   u64 rank, u64 extents[rank], f32 values in row-major order.
// Multi-tensor files are blobs back to back; order is the caller's contract.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensors(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::string& path);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace treadline
