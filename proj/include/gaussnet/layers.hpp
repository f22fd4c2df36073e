#pragma once

// Layer and network assembly. A layer is convolution (Gaussian-basis or
// free pixel kernel) -> per-channel affine -> ReLU -> optional blur ->
// optional sub-sampling; a network is a layer stack, a pooling head and a
// linear classifier. Shift certificates for pure Gaussian stacks live
// here as well.

#include <cstdint>
#include <string>
#include <vector>

#include "gaussnet/basis.hpp"
#include "gaussnet/conv.hpp"
#include "gaussnet/tensor.hpp"

namespace gaussnet {

enum class LayerKind {
  Gauss,              // r(W DG * I), no sub-sampling
  GaussSub,           // S_d r(W DG * I)
  GaussResidual,      // S_d (I + r(W DG * I))
  Pixel,              // r(K * I), free kernel
  PixelSub,           // S_d r(K * I)
  PixelAntialiasSub,  // S_d (G_sigma * r(K * I)), blur before the stride
};

enum class SubsampleMode { Point, AvgPool2 };
enum class PoolingKind { GlobalAverage, GaussWindowedAverage };

inline bool is_gauss_kind(LayerKind k) {
  return k == LayerKind::Gauss || k == LayerKind::GaussSub ||
         k == LayerKind::GaussResidual;
}
inline bool is_pixel_kind(LayerKind k) { return !is_gauss_kind(k); }

/// Kinds whose definition has no sub-sampling step must keep d = 1.
inline bool kind_allows_subsampling(LayerKind k) {
  return k != LayerKind::Gauss && k != LayerKind::Pixel;
}

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Gauss: return "gauss";
    case LayerKind::GaussSub: return "gauss-sub";
    case LayerKind::GaussResidual: return "gauss-residual";
    case LayerKind::Pixel: return "pixel";
    case LayerKind::PixelSub: return "pixel-sub";
    case LayerKind::PixelAntialiasSub: return "pixel-antialias-sub";
  }
  throw std::invalid_argument("kind_name: unknown layer kind");
}

inline LayerKind kind_from_name(const std::string& s) {
  if (s == "gauss") return LayerKind::Gauss;
  if (s == "gauss-sub") return LayerKind::GaussSub;
  if (s == "gauss-residual") return LayerKind::GaussResidual;
  if (s == "pixel") return LayerKind::Pixel;
  if (s == "pixel-sub") return LayerKind::PixelSub;
  if (s == "pixel-antialias-sub") return LayerKind::PixelAntialiasSub;
  throw std::invalid_argument("unknown layer kind: " + s);
}

inline const char* pooling_name(PoolingKind p) {
  return p == PoolingKind::GlobalAverage ? "global-average" : "gauss-windowed-average";
}

inline PoolingKind pooling_from_name(const std::string& s) {
  if (s == "global-average") return PoolingKind::GlobalAverage;
  if (s == "gauss-windowed-average") return PoolingKind::GaussWindowedAverage;
  throw std::invalid_argument("unknown pooling kind: " + s);
}

template <class Real = float>
struct LayerSpec {
  LayerKind kind = LayerKind::Gauss;
  int in_channels = 0;
  int out_channels = 0;
  Real sigma = Real(1);     // basis sigma (gauss kinds) / blur sigma (antialias kind)
  int d = 1;                // sub-sample factor
  int support = 0;          // 0 = derive from sigma (3-sigma truncation)
  int pixel_side = 3;       // free-kernel side for pixel kinds
  BasisMode basis_mode = BasisMode::Analytic;
  SubsampleMode sub_mode = SubsampleMode::Point;
  ConvMethod conv_method = ConvMethod::Auto;
  bool has_affine = true;

  std::vector<Real> weights;       // gauss: m x (6 n); pixel: m x n x k x k
  std::vector<Real> affine_scale;  // size m; empty means identity
  std::vector<Real> affine_shift;  // size m; empty means zero

  bool uses_sigma() const {
    return is_gauss_kind(kind) || kind == LayerKind::PixelAntialiasSub;
  }
  int basis_support() const {
    return support > 0 ? support : default_support(double(sigma));
  }
  std::size_t weight_count() const {
    const std::size_t m = out_channels, n = in_channels;
    if (is_gauss_kind(kind)) return m * std::size_t(kBasisPlanes) * n;
    return m * n * std::size_t(pixel_side) * pixel_side;
  }
  std::size_t parameter_count() const {
    return weight_count() + (has_affine ? 2 * std::size_t(out_channels) : 0);
  }

  void validate() const {
    if (in_channels < 1 || out_channels < 1)
      throw std::invalid_argument("LayerSpec: channel counts must be >= 1");
    if (d < 1) throw std::invalid_argument("LayerSpec: d must be >= 1");
    if (d != 1 && !kind_allows_subsampling(kind))
      throw std::invalid_argument(std::string("LayerSpec: kind ") + kind_name(kind) +
                                  " does not sub-sample; d must be 1");
    if (kind == LayerKind::GaussResidual && in_channels != out_channels)
      throw std::invalid_argument("LayerSpec: residual layers need in_channels == out_channels");
    if (uses_sigma() && !(sigma > Real(0)))
      throw std::invalid_argument("LayerSpec: sigma must be > 0");
    if (is_pixel_kind(kind) && (pixel_side < 1 || pixel_side % 2 == 0))
      throw std::invalid_argument("LayerSpec: pixel kernel side must be odd and >= 1");
    if (sub_mode == SubsampleMode::AvgPool2 && d != 1 && d != 2)
      throw std::invalid_argument("LayerSpec: AvgPool2 sub-sampling needs d == 2");
    if (weights.size() != weight_count())
      throw std::invalid_argument("LayerSpec: weight count does not match kind/shape");
    const auto m = std::size_t(out_channels);
    if (!affine_scale.empty() && affine_scale.size() != m)
      throw std::invalid_argument("LayerSpec: affine_scale must have out_channels entries");
    if (!affine_shift.empty() && affine_shift.size() != m)
      throw std::invalid_argument("LayerSpec: affine_shift must have out_channels entries");
  }
};

template <class Real = float>
struct NetworkSpec {
  std::vector<LayerSpec<Real>> layers;
  PoolingKind pooling = PoolingKind::GlobalAverage;
  Real window_sigma = Real(0);     // gauss-windowed pooling only
  int classes = 0;                 // 0 = feature extractor without a head
  std::vector<Real> head_weights;  // classes x feature_channels
  std::vector<Real> head_bias;     // classes

  int feature_channels() const {
    return layers.empty() ? 0 : layers.back().out_channels;
  }

  void validate() const {
    if (layers.empty()) throw std::invalid_argument("NetworkSpec: needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].validate();
      if (i > 0 && layers[i].in_channels != layers[i - 1].out_channels)
        throw std::invalid_argument("NetworkSpec: channel counts do not chain at layer " +
                                    std::to_string(i));
    }
    if (pooling == PoolingKind::GaussWindowedAverage && !(window_sigma > Real(0)))
      throw std::invalid_argument("NetworkSpec: windowed pooling needs window_sigma > 0");
    if (classes > 0) {
      if (head_weights.size() != std::size_t(classes) * feature_channels())
        throw std::invalid_argument("NetworkSpec: head weight matrix is classes x features");
      if (head_bias.size() != std::size_t(classes))
        throw std::invalid_argument("NetworkSpec: head bias has one entry per class");
    }
  }
};

namespace detail {

template <class Real>
void apply_affine_relu(FeatureMap<Real>& m, const LayerSpec<Real>& spec,
                       bool relu = true) {
  const std::size_t px = std::size_t(m.height()) * m.width();
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c) {
      const Real scale = spec.affine_scale.empty() ? Real(1) : spec.affine_scale[c];
      const Real shift = spec.affine_shift.empty() ? Real(0) : spec.affine_shift[c];
      Real* p = m.plane(b, c);
      for (std::size_t i = 0; i < px; ++i) {
        Real v = scale * p[i] + shift;
        p[i] = relu ? std::max(v, Real(0)) : v;
      }
    }
}

/// Free-kernel convolution, every output channel a sum over input
/// channels; weights row-major [out][in][ky][kx], kernels centered.
template <class Real>
FeatureMap<Real> conv_pixel(const FeatureMap<Real>& m, const std::vector<Real>& weights,
                            int out_channels, int side) {
  const std::size_t kk = std::size_t(side) * side;
  if (weights.size() != std::size_t(out_channels) * m.channels() * kk)
    throw std::invalid_argument("conv_pixel: weight tensor must be m x n x k x k");
  FeatureMap<Real> out(m.batch(), out_channels, m.height(), m.width());
  const std::size_t px = std::size_t(m.height()) * m.width();
  std::vector<double> acc(px);
  std::vector<Real> response(px);
  Kernel2D<Real> k(side);
  for (int b = 0; b < m.batch(); ++b)
    for (int ko = 0; ko < out_channels; ++ko) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int c = 0; c < m.channels(); ++c) {
        const Real* w = weights.data() + (std::size_t(ko) * m.channels() + c) * kk;
        std::copy(w, w + kk, k.v.begin());
        conv_plane_direct(m.plane(b, c), m.height(), m.width(), k, response.data());
        for (std::size_t i = 0; i < px; ++i) acc[i] += double(response[i]);
      }
      Real* dst = out.plane(b, ko);
      for (std::size_t i = 0; i < px; ++i) dst[i] = Real(acc[i]);
    }
  return out;
}

template <class Real>
FeatureMap<Real> apply_subsample(const FeatureMap<Real>& m, const LayerSpec<Real>& spec) {
  if (spec.d == 1) return m;
  if (spec.sub_mode == SubsampleMode::AvgPool2) return avg_pool2(m);
  return subsample(m, spec.d);
}

}  // namespace detail

template <class Real>
FeatureMap<Real> forward_layer(const LayerSpec<Real>& spec, const FeatureMap<Real>& m) {
  spec.validate();
  if (m.channels() != spec.in_channels)
    throw std::invalid_argument("forward_layer: input has " + std::to_string(m.channels()) +
                                " channels, layer expects " +
                                std::to_string(spec.in_channels));
  FeatureMap<Real> z;
  if (is_gauss_kind(spec.kind)) {
    const auto basis = build_basis(spec.sigma, spec.basis_support(), spec.basis_mode);
    z = conv_basis(m, basis, spec.weights, spec.out_channels, spec.conv_method);
  } else {
    z = detail::conv_pixel(m, spec.weights, spec.out_channels, spec.pixel_side);
  }
  detail::apply_affine_relu(z, spec);

  if (spec.kind == LayerKind::GaussResidual) {
    for (std::size_t i = 0; i < z.size(); ++i) z.values()[i] += m.values()[i];
  } else if (spec.kind == LayerKind::PixelAntialiasSub) {
    const auto blur = build_basis(spec.sigma, spec.basis_support(), BasisMode::Analytic);
    z = conv_same(z, blur.planes[0], spec.conv_method);
  }
  return detail::apply_subsample(z, spec);
}

/// Per-channel Gaussian-weighted mean, window centered on the map. The
/// weights are normalized, so a constant map pools to that constant.
template <class Real>
std::vector<Real> gauss_windowed_average(const FeatureMap<Real>& m, Real window_sigma) {
  if (!(window_sigma > Real(0)))
    throw std::invalid_argument("gauss_windowed_average: window_sigma must be > 0");
  const double cy = (m.height() - 1) / 2.0;
  const double cx = (m.width() - 1) / 2.0;
  const double s2 = 2.0 * double(window_sigma) * double(window_sigma);
  std::vector<double> w(std::size_t(m.height()) * m.width());
  double wsum = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      w[std::size_t(y) * m.width() + x] = std::exp(-r2 / s2);
      wsum += w[std::size_t(y) * m.width() + x];
    }
  std::vector<Real> out(std::size_t(m.batch()) * m.channels());
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c) {
      const Real* p = m.plane(b, c);
      double sum = 0;
      for (std::size_t i = 0; i < w.size(); ++i) sum += w[i] * double(p[i]);
      out[std::size_t(b) * m.channels() + c] = Real(sum / wsum);
    }
  return out;
}

template <class Real>
std::vector<Real> pool_features(const FeatureMap<Real>& m, PoolingKind pooling,
                                Real window_sigma) {
  if (pooling == PoolingKind::GaussWindowedAverage)
    return gauss_windowed_average(m, window_sigma);
  return global_average(m);
}

template <class Real = float>
struct ForwardResult {
  int batch = 0;
  int feature_count = 0;
  int classes = 0;
  std::vector<Real> features;    // batch x feature_count
  std::vector<Real> logits;      // batch x classes, empty without a head
  std::vector<int> predictions;  // argmax per example, lowest index wins ties
};

template <class Real>
ForwardResult<Real> forward_network(const NetworkSpec<Real>& net,
                                    const FeatureMap<Real>& m) {
  net.validate();
  FeatureMap<Real> cur = m;
  for (const auto& layer : net.layers) cur = forward_layer(layer, cur);

  ForwardResult<Real> out;
  out.batch = m.batch();
  out.feature_count = net.feature_channels();
  out.classes = net.classes;
  out.features = pool_features(cur, net.pooling, net.window_sigma);
  if (net.classes > 0) {
    out.logits.resize(std::size_t(out.batch) * net.classes);
    out.predictions.resize(out.batch);
    for (int b = 0; b < out.batch; ++b) {
      const Real* f = out.features.data() + std::size_t(b) * out.feature_count;
      int best = 0;
      for (int k = 0; k < net.classes; ++k) {
        double sum = double(net.head_bias[k]);
        const Real* row = net.head_weights.data() + std::size_t(k) * out.feature_count;
        for (int j = 0; j < out.feature_count; ++j) sum += double(row[j]) * double(f[j]);
        out.logits[std::size_t(b) * net.classes + k] = Real(sum);
        if (out.logits[std::size_t(b) * net.classes + k] >
            out.logits[std::size_t(b) * net.classes + best])
          best = k;
      }
      out.predictions[b] = best;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shift certificates.

/// Induced sup norm of the layer's linear part: largest absolute row sum
/// of the weight matrix, with the channel's affine scale folded in. This
/// is the operator norm that turns a per-response bound into a
/// per-output-channel bound, so multi-channel layers stay certified.
template <class Real>
Real weight_sup_norm(const LayerSpec<Real>& spec) {
  const std::size_t cols = spec.weight_count() / std::size_t(spec.out_channels);
  Real best = 0;
  for (int k = 0; k < spec.out_channels; ++k) {
    double row = 0;
    for (std::size_t j = 0; j < cols; ++j)
      row += std::abs(double(spec.weights[std::size_t(k) * cols + j]));
    const double scale =
        spec.affine_scale.empty() ? 1.0 : std::abs(double(spec.affine_scale[k]));
    best = std::max(best, Real(row * scale));
  }
  return best;
}

template <class Real = float>
struct CertLayerEntry {
  std::int64_t pixels = 0;  // spatial size of the map the convolution reads
  Real w_sup = 0;           // weight_sup_norm of the layer
  Real basis_sup = 0;       // sup norm of the layer's filter bank
  Real factor = 0;          // this layer's multiplicative contribution
};

template <class Real = float>
struct LipschitzCertificate {
  std::vector<CertLayerEntry<Real>> per_layer;
  Real c_g = 0;       // unit-shift constant of the first layer's bank
  Real input_sup = 0;
  Real bound = 0;     // certified |F(T_s I) - F(I)| per unit of |s|
};

/// Certified shift bound of the pooled features, per unit shift length:
///
///   bound = c_g * ||I||_inf * (w_1 N_1) * prod_{i>=2} (w_i N_i basis_sup_i)
///
/// N_i is the pixel count of the map entering layer i's convolution: the
/// difference at one output position is a sum over that map's support, so
/// the input count is the one the triangle inequality actually produces.
/// Residual layers contribute 1 + w N basis_sup (the skip path passes the
/// incoming difference through unchanged).
template <class Real>
LipschitzCertificate<Real> certify_bound(const NetworkSpec<Real>& net,
                                         const FeatureMap<Real>& input) {
  net.validate();
  if (input.channels() != net.layers.front().in_channels)
    throw std::invalid_argument("certify_bound: input channels do not match the network");
  for (const auto& layer : net.layers)
    if (is_pixel_kind(layer.kind))
      throw std::invalid_argument("certify_bound: no shift bound exists for pixel kernels");
  if (net.layers.front().kind == LayerKind::GaussResidual)
    throw std::invalid_argument(
        "certify_bound: a leading residual layer passes the raw input through; "
        "no shift bound exists");

  LipschitzCertificate<Real> cert;
  cert.input_sup = sup_norm(input);
  double bound = 0;
  int h = input.height(), w = input.width();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    const auto est = estimate_lipschitz(
        build_basis(layer.sigma, layer.basis_support(), layer.basis_mode));
    CertLayerEntry<Real> e;
    e.pixels = std::int64_t(h) * w;
    e.w_sup = weight_sup_norm(layer);
    e.basis_sup = est.basis_sup;
    if (i == 0) {
      cert.c_g = est.c_g;
      bound = double(est.c_g) * double(cert.input_sup) * double(e.w_sup) * double(e.pixels);
      e.factor = Real(double(e.w_sup) * double(e.pixels));
    } else {
      double f = double(e.w_sup) * double(e.pixels) * double(e.basis_sup);
      if (layer.kind == LayerKind::GaussResidual) f += 1.0;
      bound *= f;
      e.factor = Real(f);
    }
    cert.per_layer.push_back(e);
    h = (h + layer.d - 1) / layer.d;
    w = (w + layer.d - 1) / layer.d;
  }
  cert.bound = Real(bound);
  return cert;
}

/// Shift bound for one anti-aliased layer, per unit shift: the blur makes
/// the pre-stride map Lipschitz in the shift, everything before it is
/// covariant. c_g is the blur kernel's unit-shift constant, kernel_sup
/// the free kernel's induced sup norm, N the pixel count the blur reads.
template <class Real>
Real antialias_bound(Real kernel_sup, Real input_sup, std::int64_t pixels, Real c_g) {
  if (kernel_sup < Real(0) || input_sup < Real(0) || pixels < 0 || c_g < Real(0))
    throw std::invalid_argument("antialias_bound: factors must be >= 0");
  return Real(double(pixels) * double(c_g) * double(kernel_sup) * double(input_sup));
}

template <class Real>
std::size_t count_parameters(const NetworkSpec<Real>& net) {
  std::size_t total = 0;
  for (const auto& layer : net.layers) total += layer.parameter_count();
  if (net.classes > 0)
    total += std::size_t(net.classes) * net.feature_channels() + net.classes;
  return total;
}

}  // namespace gaussnet
