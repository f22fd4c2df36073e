#pragma once

// Seeded initialization and the deterministic training loop: shuffled
// minibatches, ADAM steps, optional contractive projection, per-epoch
// metrics. No data augmentation anywhere — the point of the experiments
// is what the architectures do on their own.

#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gaussnet/dataset.hpp"
#include "gaussnet/optimizer.hpp"

namespace gaussnet {

/// Fan-in uniform init, U[-a, a] with a = 1/sqrt(6 n) for basis weights
/// and 1/sqrt(k^2 n) for free kernels; affine identity, head zero.
template <class Real>
void init_network(NetworkSpec<Real>& net, unsigned seed) {
  net.validate();
  materialize_affine(net);
  std::mt19937 rng(seed);
  for (auto& layer : net.layers) {
    const double fan_in =
        is_gauss_kind(layer.kind)
            ? double(kBasisPlanes) * layer.in_channels
            : double(layer.pixel_side) * layer.pixel_side * layer.in_channels;
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in),
                                                1.0 / std::sqrt(fan_in));
    for (auto& w : layer.weights) w = Real(dist(rng));
    std::fill(layer.affine_scale.begin(), layer.affine_scale.end(), Real(1));
    std::fill(layer.affine_shift.begin(), layer.affine_shift.end(), Real(0));
  }
  std::fill(net.head_weights.begin(), net.head_weights.end(), Real(0));
  std::fill(net.head_bias.begin(), net.head_bias.end(), Real(0));
}

/// Fraction of examples whose argmax prediction matches the label.
template <class Real>
double evaluate_accuracy(const NetworkSpec<Real>& net, const LabeledDataset& ds,
                         int batch_size = 64) {
  if (net.classes <= 0)
    throw std::invalid_argument("evaluate_accuracy: network has no classifier head");
  if (ds.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  int correct = 0;
  for (int start = 0; start < ds.size(); start += batch_size) {
    const int n = std::min(batch_size, ds.size() - start);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto result = forward_network(net, gather_batch(ds, idx).cast<Real>());
    for (int b = 0; b < n; ++b)
      if (result.predictions[b] == ds.labels[start + b]) ++correct;
  }
  return double(correct) / ds.size();
}

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
};

template <class Real = float>
struct TrainOptions {
  int epochs = 10;
  int batch_size = 32;
  unsigned seed = 1;  // governs the shuffle order only
  Real lr = Real(1e-3);
  bool shuffle = true;
  bool contractive = false;  // project weights after every step
  Real max_factor = Real(0.99);
};

template <class Real = float>
struct TrainResult {
  std::vector<EpochMetrics> metrics;
  AdamState<Real> state;
};

/// Minibatch ADAM training, deterministic given the seed. Train loss and
/// accuracy are running averages over the epoch's pre-update batches;
/// test accuracy is NaN when no test set is supplied.
template <class Real>
TrainResult<Real> train(NetworkSpec<Real>& net, const LabeledDataset& train_set,
                        const LabeledDataset* test_set, const TrainOptions<Real>& opt) {
  net.validate();
  train_set.validate();
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  materialize_affine(net);

  TrainResult<Real> result;
  result.state = init_adam(net, opt.lr);
  std::mt19937 rng(opt.seed);
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (opt.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int correct = 0;
    for (int start = 0; start < train_set.size(); start += opt.batch_size) {
      const int n = std::min(opt.batch_size, train_set.size() - start);
      const std::vector<int> idx(order.begin() + start, order.begin() + start + n);
      std::vector<int> labels(n);
      for (int b = 0; b < n; ++b) labels[b] = train_set.labels[idx[b]];

      const auto lg =
          loss_and_grad(net, gather_batch(train_set, idx).cast<Real>(), labels);
      loss_sum += double(lg.loss) * n;
      correct += lg.correct;
      adam_step(net, lg.tape, result.state);
      if (opt.contractive)
        project_contractive(net, train_set.images.height(), train_set.images.width(),
                            opt.max_factor);
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / train_set.size();
    m.train_acc = double(correct) / train_set.size();
    if (test_set) m.test_acc = evaluate_accuracy(net, *test_set, opt.batch_size);
    result.metrics.push_back(m);
  }
  return result;
}

/// Plot-ready per-epoch CSV: epoch, train_loss, train_acc, test_acc.
inline std::string metrics_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,test_acc\n";
  out.precision(9);
  for (const auto& m : metrics)
    out << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ',' << m.test_acc
        << '\n';
  return out.str();
}

}  // namespace gaussnet
