#include "treadline/train.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "treadline/error.hpp"
#include "treadline/layers.hpp"

namespace treadline {

double LrSchedule::at(int epoch) const {
  if (decay_every <= 0) return initial;
  return initial / std::pow(decay_factor, epoch / decay_every);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ParamError("epochs must be >= 0");
  if (batch_size < 1) throw ParamError("batch size must be >= 1");
  if (lr.initial <= 0) throw ParamError("learning rate must be positive");
  if (lr.decay_factor < 1) throw ParamError("lr decay factor must be >= 1");
  if (momentum < 0 || momentum >= 1) throw ParamError("momentum must be in [0,1)");
  if (weight_decay < 0) throw ParamError("weight decay must be >= 0");
  if (threads < 1) throw ParamError("thread count must be >= 1");
}

std::vector<Tensor> sgd_velocity(const std::vector<ParamRef<float>>& params) {
  std::vector<Tensor> v;
  v.reserve(params.size());
  for (const auto& p : params) v.push_back(Tensor::zeros(p.value->shape()));
  return v;
}

void sgd_step(std::vector<ParamRef<float>>& params, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
  if (params.size() != velocity.size())
    throw ShapeError("velocity buffers do not align with parameters");
  const float m = static_cast<float>(momentum);
  const float wd = static_cast<float>(weight_decay);
  const float step = static_cast<float>(lr);
  for (size_t i = 0; i < params.size(); ++i) {
    float* w = params[i].value->data();
    const float* g = params[i].grad->data();
    float* v = velocity[i].data();
    if (!params[i].value->same_shape(velocity[i]))
      throw ShapeError("velocity shape mismatch at " + params[i].name);
    const int64_t n = params[i].value->numel();
    for (int64_t j = 0; j < n; ++j) {
      v[j] = m * v[j] + (g[j] + wd * w[j]);
      w[j] -= step * v[j];
    }
  }
}

namespace {

int count_errors(const Tensor& logits, const std::vector<int>& labels) {
  const int64_t n = logits.extent(0), k = logits.extent(1);
  int wrong = 0;
  for (int64_t b = 0; b < n; ++b) {
    const float* row = logits.data() + b * k;
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (best != labels[static_cast<size_t>(b)]) ++wrong;
  }
  return wrong;
}

}  // namespace

EvalResult evaluate(Network& net, const Dataset& data, int batch_size) {
  data.validate();
  if (batch_size < 1) throw ParamError("batch size must be >= 1");
  const bool was_training = net.training();
  net.set_training(false);

  double loss_sum = 0;
  int64_t wrong = 0;
  const int64_t n = data.size();
  std::vector<int64_t> idx;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t stop = std::min<int64_t>(n, start + batch_size);
    idx.resize(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto [images, labels] = gather(data, idx);
    Tensor logits = net.forward(images);
    loss_sum += static_cast<double>(cross_entropy(logits, labels)) *
                static_cast<double>(stop - start);
    wrong += count_errors(logits, labels);
  }

  net.set_training(was_training);
  return {loss_sum / static_cast<double>(n), static_cast<double>(wrong) / static_cast<double>(n)};
}

FitResult fit(Network& net, const Dataset& train_set, const Dataset& test_set,
              const TrainConfig& cfg, const ExtraBatchLoss& extra) {
  cfg.validate();
  train_set.validate();
  test_set.validate();
  if (train_set.classes != net.spec().classes)
    throw DataError("dataset class count does not match the network");

  net.set_threads(cfg.threads);
  Rng rng(cfg.seed);
  auto params = net.params();
  std::vector<Tensor> velocity = sgd_velocity(params);

  std::vector<int64_t> order(static_cast<size_t>(train_set.size()));
  std::iota(order.begin(), order.end(), 0);

  FitResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr.at(epoch);
    rng.shuffle(order);
    net.set_training(true);

    double ce_sum = 0, at_sum = 0;
    int64_t seen = 0, wrong = 0, batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(start),
                               order.begin() + static_cast<int64_t>(stop));
      auto [images, labels] = gather(train_set, idx);
      if (cfg.augment) images = augment(images, rng);

      Tensor logits = net.forward(images);
      Tensor dlogits;
      const double ce = cross_entropy(logits, labels, &dlogits);

      double at = 0;
      std::vector<Tensor> att_grads;
      if (extra) at = extra(images, net, att_grads);

      if (!std::isfinite(ce) || !std::isfinite(at))
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                              std::to_string(batches) + " (loss not finite)");

      net.zero_grad();
      net.backward(dlogits, att_grads);
      sgd_step(params, velocity, lr, cfg.momentum, cfg.weight_decay);

      ce_sum += ce;
      at_sum += at;
      wrong += count_errors(logits, labels);
      seen += static_cast<int64_t>(idx.size());
      ++batches;
    }

    const EvalResult test = evaluate(net, test_set, cfg.batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = batches ? ce_sum / static_cast<double>(batches) : 0;
    m.train_at = batches ? at_sum / static_cast<double>(batches) : 0;
    m.train_err = seen ? static_cast<double>(wrong) / static_cast<double>(seen) : 0;
    m.test_loss = test.loss;
    m.test_err = test.error;
    result.history.push_back(m);
  }
  return result;
}

FitResult train(Network& net, const Dataset& train_set, const Dataset& test_set,
                const TrainConfig& cfg) {
  return fit(net, train_set, test_set, cfg);
}

}  // namespace treadline
