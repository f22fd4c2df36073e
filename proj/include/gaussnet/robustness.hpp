#pragma once

// The robustness laboratory: shifted test sets and the delta1/delta2
// sensitivity benchmarks, empirical certification of the shift bounds,
// the strided-pixel negative control, and the sigma sweep.
//
// Two shift conventions coexist deliberately. Benchmarking (delta1,
// delta2) shifts whole test images with replicate-nearest fill;
// certification shifts interior-supported inputs with zero fill, the
// domain on which the bounds are exact. Every report records which one
// it used. The magnitude |s| of a diagonal shift is the larger axis
// component, so all eight unit shifts have |s| = 1.

#include <array>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <random>
#include <type_traits>
#include <utility>
#include <vector>

#include "gaussnet/train.hpp"

namespace gaussnet {

/// The eight unit offsets (sx, sy), row-major order.
inline constexpr std::array<std::pair<int, int>, 8> kEightShifts = {
    {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1}}};

/// Default sigma grid for the sweep study.
inline constexpr std::array<float, 4> kSweepSigmas = {0.3f, 0.76f, 1.3f, 2.3f};

struct ShiftedTestSet {
  const LabeledDataset* base = nullptr;
  std::array<std::pair<int, int>, 8> shifts = kEightShifts;  // (sx, sy)
  Fill fill = Fill::ReplicateNearest;

  void validate() const {
    if (!base) throw std::invalid_argument("ShiftedTestSet: no base dataset");
    base->validate();
    if (base->size() == 0) throw std::invalid_argument("ShiftedTestSet: empty base");
    for (std::size_t i = 0; i < shifts.size(); ++i) {
      if (shifts[i] == std::pair{0, 0})
        throw std::invalid_argument("ShiftedTestSet: the zero shift is not allowed");
      for (std::size_t j = i + 1; j < shifts.size(); ++j)
        if (shifts[i] == shifts[j])
          throw std::invalid_argument("ShiftedTestSet: duplicate shift");
    }
  }
};

/// One certified comparison: a shift applied to one input, the measured
/// pooled-feature difference and the theoretical ceiling.
struct BoundMargin {
  int input = 0;
  int sx = 0, sy = 0;
  double empirical = 0;
  double theoretical = 0;
};

inline int count_violations(const std::vector<BoundMargin>& margins) {
  int n = 0;
  for (const auto& m : margins)
    if (m.empirical > m.theoretical) ++n;
  return n;
}

struct RobustnessReport {
  double delta1 = 0;  // fraction of (image, shift) pairs that change class
  double delta2 = 0;  // fraction of images with at least one changing shift
  std::array<double, 8> per_shift_change_rate{};
  double test_error = std::numeric_limits<double>::quiet_NaN();
  Fill fill = Fill::ReplicateNearest;
  std::vector<BoundMargin> bound_margins;  // empty unless certification ran
};

namespace detail {

template <class T>
struct is_network_spec : std::false_type {};
template <class Real>
struct is_network_spec<NetworkSpec<Real>> : std::true_type {};

}  // namespace detail

/// Fraction counts a change whenever predictions differ; delta1 averages
/// over shifts, delta2 asks whether any shift changed, so delta1 <=
/// delta2 by construction. The classifier maps an image batch to labels.
template <class Classifier>
  requires(!detail::is_network_spec<std::remove_cvref_t<Classifier>>::value)
RobustnessReport shift_report(Classifier&& classify, const ShiftedTestSet& set) {
  set.validate();
  const auto& ds = *set.base;
  const std::vector<int> base_pred = classify(ds.images);
  if (int(base_pred.size()) != ds.size())
    throw std::invalid_argument("shift_report: classifier returned a wrong-sized batch");

  RobustnessReport rep;
  rep.fill = set.fill;
  std::vector<char> changed_any(ds.size(), 0);
  double rate_sum = 0;
  for (std::size_t k = 0; k < set.shifts.size(); ++k) {
    const auto [sx, sy] = set.shifts[k];
    const std::vector<int> pred = classify(translate(ds.images, sx, sy, set.fill));
    int changed = 0;
    for (int i = 0; i < ds.size(); ++i)
      if (pred[i] != base_pred[i]) {
        ++changed;
        changed_any[i] = 1;
      }
    rep.per_shift_change_rate[k] = double(changed) / ds.size();
    rate_sum += rep.per_shift_change_rate[k];
  }
  rep.delta1 = rate_sum / double(set.shifts.size());
  int any = 0, wrong = 0;
  for (int i = 0; i < ds.size(); ++i) {
    any += changed_any[i];
    wrong += base_pred[i] != ds.labels[i];
  }
  rep.delta2 = double(any) / ds.size();
  rep.test_error = double(wrong) / ds.size();
  return rep;
}

namespace detail {

template <class Real>
FeatureMap<Real> take_batch(const FeatureMap<Real>& m, int start, int n) {
  FeatureMap<Real> out(n, m.channels(), m.height(), m.width());
  const std::size_t per = out.size() / std::size_t(n);
  std::copy(m.data() + std::size_t(start) * per, m.data() + std::size_t(start + n) * per,
            out.data());
  return out;
}

}  // namespace detail

/// Batched argmax predictions over a raw image stack.
template <class Real>
std::vector<int> classify(const NetworkSpec<Real>& net, const FeatureMap<float>& images,
                          int batch_size = 256) {
  if (batch_size < 1) throw std::invalid_argument("classify: batch_size must be >= 1");
  std::vector<int> pred;
  pred.reserve(images.batch());
  for (int start = 0; start < images.batch(); start += batch_size) {
    const int n = std::min(batch_size, images.batch() - start);
    const auto out =
        forward_network(net, detail::take_batch(images, start, n).template cast<Real>());
    pred.insert(pred.end(), out.predictions.begin(), out.predictions.end());
  }
  return pred;
}

template <class Real>
RobustnessReport shift_report(const NetworkSpec<Real>& net, const ShiftedTestSet& set,
                              int batch_size = 256) {
  return shift_report(
      [&](const FeatureMap<float>& images) { return classify(net, images, batch_size); },
      set);
}

template <class Classifier>
double delta1(Classifier&& c, const ShiftedTestSet& set) {
  return shift_report(std::forward<Classifier>(c), set).delta1;
}

template <class Classifier>
double delta2(Classifier&& c, const ShiftedTestSet& set) {
  return shift_report(std::forward<Classifier>(c), set).delta2;
}

/// Random certification ensemble: n maps, uniform in [0, 1] on the
/// interior, zero on a border of the given margin.
template <class Real = float>
FeatureMap<Real> interior_ensemble(int n, int channels, int height, int width, int margin,
                                   unsigned seed) {
  if (2 * margin >= height || 2 * margin >= width)
    throw std::invalid_argument("interior_ensemble: margin leaves no interior");
  FeatureMap<Real> out(n, channels, height, width);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < channels; ++c)
      for (int y = margin; y < height - margin; ++y)
        for (int x = margin; x < width - margin; ++x)
          out(b, c, y, x) = Real(dist(rng));
  return out;
}

/// Largest pooled-feature difference over the eight unit shifts.
template <class Real>
double shift_sensitivity(const NetworkSpec<Real>& net, const FeatureMap<Real>& input,
                         Fill fill = Fill::Zero) {
  const auto base = forward_network(net, input).features;
  double worst = 0;
  for (const auto [sx, sy] : kEightShifts) {
    const auto shifted = forward_network(net, translate(input, sx, sy, fill)).features;
    for (std::size_t i = 0; i < base.size(); ++i)
      worst = std::max(worst, std::abs(double(shifted[i]) - double(base[i])));
  }
  return worst;
}

/// Checks |F(T_s I) - F(I)| <= bound * |s| for every input in the stack
/// and every nonzero shift with max(|sx|, |sy|) <= max_shift, using zero
/// fill. Inputs must vanish on a border of width max_shift so a shifted
/// input is a genuine translate. Violations are recorded, not thrown.
template <class Real>
std::vector<BoundMargin> certify_insensitivity(const NetworkSpec<Real>& net,
                                               const FeatureMap<Real>& inputs,
                                               int max_shift) {
  if (max_shift < 1)
    throw std::invalid_argument("certify_insensitivity: max_shift must be >= 1");
  for (int b = 0; b < inputs.batch(); ++b)
    for (int c = 0; c < inputs.channels(); ++c)
      for (int y = 0; y < inputs.height(); ++y)
        for (int x = 0; x < inputs.width(); ++x) {
          const bool border = y < max_shift || y >= inputs.height() - max_shift ||
                              x < max_shift || x >= inputs.width() - max_shift;
          if (border && inputs(b, c, y, x) != Real(0))
            throw std::invalid_argument(
                "certify_insensitivity: inputs must vanish on a border of width max_shift");
        }

  std::vector<double> per_input_bound(inputs.batch());
  for (int b = 0; b < inputs.batch(); ++b)
    per_input_bound[b] = double(certify_bound(net, detail::take_batch(inputs, b, 1)).bound);

  const auto base = forward_network(net, inputs);
  const int f = base.feature_count;
  std::vector<BoundMargin> margins;
  for (int sy = -max_shift; sy <= max_shift; ++sy)
    for (int sx = -max_shift; sx <= max_shift; ++sx) {
      if (sx == 0 && sy == 0) continue;
      const auto shifted = forward_network(net, translate(inputs, sx, sy, Fill::Zero));
      const int mag = std::max(std::abs(sx), std::abs(sy));
      for (int b = 0; b < inputs.batch(); ++b) {
        double emp = 0;
        for (int j = 0; j < f; ++j) {
          const std::size_t i = std::size_t(b) * f + j;
          emp = std::max(emp, std::abs(double(shifted.features[i]) - double(base.features[i])));
        }
        margins.push_back({b, sx, sy, emp, per_input_bound[b] * mag});
      }
    }
  return margins;
}

/// Alternating-column witness: unit columns of even interior parity,
/// zero elsewhere and on a 1-pixel border. A stride-2 sampler sees all
/// bright or all dark columns depending on a 1-pixel shift.
template <class Real = float>
FeatureMap<Real> alternating_columns(int channels, int height, int width) {
  if (height < 4 || width < 4)
    throw std::invalid_argument("alternating_columns: map too small");
  FeatureMap<Real> out(1, channels, height, width);
  for (int c = 0; c < channels; ++c)
    for (int y = 1; y < height - 1; ++y)
      for (int x = 1; x < width - 1; ++x)
        out(0, c, y, x) = ((x - 1) % 2 == 0) ? Real(1) : Real(0);
  return out;
}

/// Sets every kernel to a centered delta so the layer passes its input
/// through (summed over in-channels).
template <class Real>
void set_delta_kernels(LayerSpec<Real>& layer) {
  if (!is_pixel_kind(layer.kind))
    throw std::invalid_argument("set_delta_kernels: pixel-kernel layers only");
  const int k = layer.pixel_side;
  std::fill(layer.weights.begin(), layer.weights.end(), Real(0));
  for (int m = 0; m < layer.out_channels; ++m)
    for (int n = 0; n < layer.in_channels; ++n)
      layer.weights[((std::size_t(m) * layer.in_channels + n) * k + k / 2) * k + k / 2] =
          Real(1);
}

/// A gauss net the same shape as the given pixel net (channels, strides,
/// sub-sampling modes), with smoothing-plane weights projected onto the
/// contractive cap. Its certificate is the constant a certified net of
/// this shape can promise; the pixel net's measured sensitivity is read
/// against it.
template <class Real>
NetworkSpec<Real> matched_gauss_net(const NetworkSpec<Real>& pixel_net, Real sigma,
                                    int height, int width, Real max_factor = Real(0.99)) {
  NetworkSpec<Real> net;
  net.pooling = pixel_net.pooling;
  net.window_sigma = pixel_net.window_sigma;
  for (const auto& src : pixel_net.layers) {
    LayerSpec<Real> layer;
    layer.kind = src.d > 1 ? LayerKind::GaussSub : LayerKind::Gauss;
    layer.in_channels = src.in_channels;
    layer.out_channels = src.out_channels;
    layer.sigma = sigma;
    layer.d = src.d;
    layer.sub_mode = src.sub_mode;
    layer.weights.assign(std::size_t(src.out_channels) * kBasisPlanes * src.in_channels,
                         Real(0));
    for (int m = 0; m < src.out_channels; ++m) {
      const int n = m % src.in_channels;  // smoothing plane of one input channel
      layer.weights[(std::size_t(m) * src.in_channels + n) * kBasisPlanes] = Real(1);
    }
    net.layers.push_back(std::move(layer));
  }
  materialize_affine(net);
  project_contractive(net, height, width, max_factor);
  return net;
}

/// Searches random interior-supported inputs and sign kernels for the
/// largest pooled shift difference per unit shift; the first candidate
/// is always the alternating-column witness with delta kernels. The net
/// must contain a strided pixel layer — the construction this bound-less
/// regime comes from.
template <class Real>
double negative_control(const NetworkSpec<Real>& net_template, int height, int width,
                        int trials, unsigned seed = 7) {
  bool strided_pixel = false;
  for (const auto& l : net_template.layers)
    strided_pixel |= is_pixel_kind(l.kind) && l.d > 1;
  if (!strided_pixel)
    throw std::invalid_argument("negative_control: needs a strided pixel layer");
  if (trials < 1) throw std::invalid_argument("negative_control: trials must be >= 1");

  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  const int channels = net_template.layers.front().in_channels;

  double worst = 0;
  for (int t = 0; t < trials; ++t) {
    auto net = net_template;
    materialize_affine(net);
    FeatureMap<Real> input;
    if (t == 0) {
      input = alternating_columns<Real>(channels, height, width);
      for (auto& l : net.layers)
        if (is_pixel_kind(l.kind)) set_delta_kernels(l);
    } else {
      input = FeatureMap<Real>(1, channels, height, width);
      for (int c = 0; c < channels; ++c)
        for (int y = 1; y < height - 1; ++y)
          for (int x = 1; x < width - 1; ++x) input(0, c, y, x) = Real(pixel(rng));
      for (auto& l : net.layers)
        for (auto& w : l.weights) w = sign(rng) ? Real(1) : Real(-1);
    }
    worst = std::max(worst, shift_sensitivity(net, input, Fill::Zero));
  }
  return worst;
}

template <class Real = float>
struct SweepEntry {
  double sigma = 0;  // echoes the sigma the net was built with
  std::vector<EpochMetrics> metrics;
  RobustnessReport report;
};

/// Trains one net per sigma (every sigma-bearing layer gets the value)
/// from the same init seed and training options, then benchmarks each on
/// the shifted test set.
template <class Real>
std::vector<SweepEntry<Real>> sigma_sweep(const NetworkSpec<Real>& net_template,
                                          const std::vector<Real>& sigmas,
                                          const LabeledDataset& train_set,
                                          const LabeledDataset& test_set,
                                          const TrainOptions<Real>& opt,
                                          unsigned init_seed = 1) {
  if (sigmas.empty()) throw std::invalid_argument("sigma_sweep: no sigmas given");
  std::vector<SweepEntry<Real>> entries;
  for (const Real sigma : sigmas) {
    auto net = net_template;
    for (auto& layer : net.layers)
      if (layer.uses_sigma()) layer.sigma = sigma;
    init_network(net, init_seed);
    auto result = train(net, train_set, &test_set, opt);
    ShiftedTestSet set;
    set.base = &test_set;
    SweepEntry<Real> e;
    e.sigma = double(sigma);
    e.metrics = std::move(result.metrics);
    e.report = shift_report(net, set);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace gaussnet
