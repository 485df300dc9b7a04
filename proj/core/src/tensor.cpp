#include "treadline/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace treadline {

namespace {
std::atomic<bool> g_checked{false};
}

bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }
void set_checked_mode(bool on) { g_checked.store(on, std::memory_order_relaxed); }

template <typename T>
bool TensorT<T>::all_finite() const {
  for (const T& v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void TensorT<T>::require_finite(const char* where) const {
  if (!all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + where +
                       " on tensor " + shape_str());
  }
}

template <typename T>
std::string TensorT<T>::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << "x";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

template class TensorT<float>;
template class TensorT<double>;

}  // namespace treadline
