#include "treadline/distill.hpp"

#include <cmath>

#include "treadline/error.hpp"
#include "treadline/layers.hpp"

namespace treadline {

void DistillConfig::validate() const {
  if (beta < 0) throw ParamError("attention weight must be >= 0");
  train.validate();
}

template <typename T>
TensorT<T> attention_map(const TensorT<T>& act) {
  if (act.rank() != 4) throw ShapeError("attention map expects [N,C,H,W]");
  const int64_t n = act.extent(0), c = act.extent(1);
  const int64_t plane = act.extent(2) * act.extent(3);
  TensorT<T> map({n, plane});
  for (int64_t b = 0; b < n; ++b) {
    T* row = map.data() + b * plane;
    for (int64_t j = 0; j < plane; ++j) {
      double sum = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double a = act.data()[(b * c + ch) * plane + j];
        sum += a * a;
      }
      row[j] = static_cast<T>(sum / static_cast<double>(c));
    }
    double norm_sq = 0;
    for (int64_t j = 0; j < plane; ++j) norm_sq += static_cast<double>(row[j]) * row[j];
    const double norm = std::sqrt(norm_sq);
    if (norm > 0)
      for (int64_t j = 0; j < plane; ++j) row[j] = static_cast<T>(row[j] / norm);
    // norm == 0: dead activation, keep the zero row
  }
  return map;
}

template <typename T>
TensorT<T> attention_map_backward(const TensorT<T>& act, const TensorT<T>& dmap) {
  if (act.rank() != 4) throw ShapeError("attention map expects [N,C,H,W]");
  const int64_t n = act.extent(0), c = act.extent(1);
  const int64_t plane = act.extent(2) * act.extent(3);
  if (dmap.rank() != 2 || dmap.extent(0) != n || dmap.extent(1) != plane)
    throw ShapeError("attention map gradient shape mismatch");

  TensorT<T> dact = TensorT<T>::zeros(act.shape());
  std::vector<double> p(static_cast<size_t>(plane));
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t j = 0; j < plane; ++j) {
      double sum = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double a = act.data()[(b * c + ch) * plane + j];
        sum += a * a;
      }
      p[static_cast<size_t>(j)] = sum / static_cast<double>(c);
    }
    double norm_sq = 0;
    for (double v : p) norm_sq += v * v;
    const double norm = std::sqrt(norm_sq);
    if (norm == 0) continue;  // zero-protected branch: gradient is zero

    // m = p / |p|  =>  dp = (dm - m (m . dm)) / |p|
    const T* dm = dmap.data() + b * plane;
    double m_dot_dm = 0;
    for (int64_t j = 0; j < plane; ++j)
      m_dot_dm += p[static_cast<size_t>(j)] / norm * static_cast<double>(dm[j]);
    for (int64_t j = 0; j < plane; ++j) {
      const double m_j = p[static_cast<size_t>(j)] / norm;
      const double dp = (static_cast<double>(dm[j]) - m_j * m_dot_dm) / norm;
      // p_j = (1/C) sum_c a^2  =>  da = (2/C) a dp
      const double scale = 2.0 * dp / static_cast<double>(c);
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t at = (b * c + ch) * plane + j;
        dact.data()[at] = static_cast<T>(scale * act.data()[at]);
      }
    }
  }
  return dact;
}

template <typename T>
T attention_distance(const TensorT<T>& teacher_map, const TensorT<T>& student_map, bool squared,
                     TensorT<T>* dms) {
  if (!teacher_map.same_shape(student_map) || teacher_map.rank() != 2)
    throw ShapeError("attention maps are not congruent: " + teacher_map.shape_str() + " vs " +
                     student_map.shape_str());
  const int64_t n = teacher_map.extent(0), len = teacher_map.extent(1);
  if (dms) *dms = TensorT<T>::zeros(teacher_map.shape());

  double total = 0;
  for (int64_t b = 0; b < n; ++b) {
    const T* mt = teacher_map.data() + b * len;
    const T* ms = student_map.data() + b * len;
    double dist_sq = 0;
    for (int64_t j = 0; j < len; ++j) {
      const double d = static_cast<double>(ms[j]) - mt[j];
      dist_sq += d * d;
    }
    const double dist = std::sqrt(dist_sq);
    total += squared ? dist_sq : dist;
    if (dms) {
      T* g = dms->data() + b * len;
      if (squared) {
        for (int64_t j = 0; j < len; ++j)
          g[j] = static_cast<T>(2.0 * (static_cast<double>(ms[j]) - mt[j]) /
                                static_cast<double>(n));
      } else if (dist > 0) {
        for (int64_t j = 0; j < len; ++j)
          g[j] = static_cast<T>((static_cast<double>(ms[j]) - mt[j]) /
                                (dist * static_cast<double>(n)));
      }
      // dist == 0: identical maps, subgradient zero
    }
  }
  return static_cast<T>(total / static_cast<double>(n));
}

template <typename T>
T at_loss(const TensorT<T>& logits, const std::vector<int>& labels,
          const std::vector<TensorT<T>>& teacher_maps,
          const std::vector<TensorT<T>>& student_maps, double beta, bool squared) {
  if (teacher_maps.size() != student_maps.size())
    throw ShapeError("attention point count mismatch: " + std::to_string(teacher_maps.size()) +
                     " vs " + std::to_string(student_maps.size()));
  T loss = cross_entropy(logits, labels);
  for (size_t i = 0; i < teacher_maps.size(); ++i)
    loss += static_cast<T>(beta) *
            attention_distance(teacher_maps[i], student_maps[i], squared);
  return loss;
}

FitResult distill(Network& student, Network& teacher, const Dataset& train_set,
                  const Dataset& test_set, const DistillConfig& cfg) {
  cfg.validate();
  const NetworkSpec& t = teacher.spec();
  const NetworkSpec& s = student.spec();
  if (t.groups.size() != s.groups.size())
    throw ShapeError("attention point count mismatch between teacher and student");
  if (t.in_channels != s.in_channels || t.in_height != s.in_height || t.in_width != s.in_width)
    throw ShapeError("teacher and student input shapes differ");
  if (t.classes != s.classes) throw ShapeError("teacher and student class counts differ");

  teacher.set_training(false);
  teacher.set_threads(cfg.train.threads);

  if (cfg.beta == 0) return fit(student, train_set, test_set, cfg.train);

  // Keep the total attention contribution comparable when the family has a
  // different number of attention points than the usual three.
  const int n_points = static_cast<int>(s.groups.size());
  const double beta_eff = n_points == 3 ? cfg.beta : cfg.beta * 3.0 / n_points;
  const bool squared = cfg.squared;

  ExtraBatchLoss hook = [&teacher, beta_eff, squared](const Tensor& images, Network& net,
                                                      std::vector<Tensor>& att_grads) {
    teacher.forward(images);
    const auto& t_act = teacher.attention();
    const auto& s_act = net.attention();
    double term = 0;
    att_grads.clear();
    for (size_t i = 0; i < t_act.size(); ++i) {
      const Tensor mt = attention_map(t_act[i]);
      const Tensor ms = attention_map(s_act[i]);
      Tensor dms;
      term += beta_eff * attention_distance(mt, ms, squared, &dms);
      for (int64_t j = 0; j < dms.numel(); ++j)
        dms[j] = static_cast<float>(dms[j] * beta_eff);
      att_grads.push_back(attention_map_backward(s_act[i], dms));
    }
    return term;
  };

  return fit(student, train_set, test_set, cfg.train, hook);
}

template Tensor attention_map<float>(const Tensor&);
template Tensor64 attention_map<double>(const Tensor64&);
template Tensor attention_map_backward<float>(const Tensor&, const Tensor&);
template Tensor64 attention_map_backward<double>(const Tensor64&, const Tensor64&);
template float attention_distance<float>(const Tensor&, const Tensor&, bool, Tensor*);
template double attention_distance<double>(const Tensor64&, const Tensor64&, bool, Tensor64*);
template float at_loss<float>(const Tensor&, const std::vector<int>&, const std::vector<Tensor>&,
                              const std::vector<Tensor>&, double, bool);
template double at_loss<double>(const Tensor64&, const std::vector<int>&,
                                const std::vector<Tensor64>&, const std::vector<Tensor64>&,
                                double, bool);

}  // namespace treadline
