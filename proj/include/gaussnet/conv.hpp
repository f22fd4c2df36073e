#pragma once

// 2-D convolution of feature maps with square kernels. Two routes with
// identical semantics: direct summation (used for small supports and as
// the reference) and FFT convolution on power-of-two grids (used for
// map-sized supports). Both compute linear, zero-extended, same-size
// convolution; circular wraparound never happens because the transform
// grid is padded to input + kernel - 1 per side.
//
// out(x) = sum_t kernel(t) * in(x - t), kernel centered.

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

#include "gaussnet/basis.hpp"
#include "gaussnet/fft.hpp"
#include "gaussnet/tensor.hpp"

namespace gaussnet {

enum class ConvMethod { Auto, Direct, Fft };

/// Kernels at least this wide go through the FFT when the method is Auto.
inline constexpr int kFftKernelThreshold = 15;

struct ConvPlan {
  Shape input_shape;
  int kernel_size = 0;
  ConvMethod method = ConvMethod::Fft;
  int padded_size = 0;  // transform side, power of two, >= map side + kernel side - 1

  void check(const Shape& s, int kside) const {
    if (!(input_shape == s) || kernel_size != kside)
      throw std::invalid_argument("ConvPlan: plan does not match arguments");
  }
};

inline ConvPlan make_plan(const Shape& s, int kernel_size, ConvMethod method) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("make_plan: kernel side must be odd and >= 1");
  if (method == ConvMethod::Auto)
    method = kernel_size >= kFftKernelThreshold ? ConvMethod::Fft : ConvMethod::Direct;
  ConvPlan p;
  p.input_shape = s;
  p.kernel_size = kernel_size;
  p.method = method;
  p.padded_size = fft::next_pow2(std::max(s.height, s.width) + kernel_size - 1);
  return p;
}

namespace detail {

/// Direct same-size convolution of one spatial plane, zero extension,
/// double accumulation. in and out must not alias.
template <class Real>
void conv_plane_direct(const Real* in, int height, int width,
                       const Kernel2D<Real>& k, Real* out) {
  const int h = k.radius();
  for (int y = 0; y < height; ++y) {
    const int dy_lo = std::max(-h, y - height + 1);
    const int dy_hi = std::min(h, y);
    for (int x = 0; x < width; ++x) {
      const int dx_lo = std::max(-h, x - width + 1);
      const int dx_hi = std::min(h, x);
      double sum = 0;
      for (int dy = dy_lo; dy <= dy_hi; ++dy) {
        const Real* krow = &k.v[std::size_t(dy + h) * k.side + (dx_lo + h)];
        const Real* irow = in + std::size_t(y - dy) * width + (x - dx_lo);
        for (int dx = dx_lo; dx <= dx_hi; ++dx)
          sum += double(krow[dx - dx_lo]) * double(irow[-(dx - dx_lo)]);
      }
      out[std::size_t(y) * width + x] = Real(sum);
    }
  }
}

/// Kernel embedded at the top-left of the transform grid; the center
/// offset is compensated when the result window is extracted.
template <class Real>
std::vector<std::complex<double>> kernel_spectrum(const Kernel2D<Real>& k, int padded) {
  std::vector<std::complex<double>> grid(std::size_t(padded) * padded);
  for (int y = 0; y < k.side; ++y)
    for (int x = 0; x < k.side; ++x)
      grid[std::size_t(y) * padded + x] = double(k.v[std::size_t(y) * k.side + x]);
  fft::fft_2d(grid, padded, false);
  return grid;
}

template <class Real>
std::vector<std::complex<double>> plane_spectrum_of_map(const Real* in, int height,
                                                        int width, int padded) {
  std::vector<std::complex<double>> grid(std::size_t(padded) * padded);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      grid[std::size_t(y) * padded + x] = double(in[std::size_t(y) * width + x]);
  fft::fft_2d(grid, padded, false);
  return grid;
}

/// product = input spectrum * kernel spectrum; inverse transform; extract
/// the same-size window starting at the kernel radius.
template <class Real>
void spectrum_to_plane(std::vector<std::complex<double>> product, int padded,
                       int height, int width, int kernel_radius, Real* out) {
  fft::fft_2d(product, padded, true);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[std::size_t(y) * width + x] =
          Real(product[std::size_t(y + kernel_radius) * padded + (x + kernel_radius)].real());
}

inline void multiply_spectra(const std::vector<std::complex<double>>& a,
                             const std::vector<std::complex<double>>& b,
                             std::vector<std::complex<double>>& out) {
  out.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
}

}  // namespace detail

/// Reference route: direct summation.
template <class Real>
FeatureMap<Real> conv_direct(const FeatureMap<Real>& m, const Kernel2D<Real>& k) {
  if (k.side < 1 || k.side % 2 == 0)
    throw std::invalid_argument("conv_direct: kernel side must be odd");
  FeatureMap<Real> out(m.shape());
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c)
      detail::conv_plane_direct(m.plane(b, c), m.height(), m.width(), k,
                                out.plane(b, c));
  return out;
}

/// FFT route; numerically equal to conv_direct well within 1e-5 relative.
template <class Real>
FeatureMap<Real> conv_fft(const FeatureMap<Real>& m, const Kernel2D<Real>& k,
                          const ConvPlan& plan) {
  plan.check(m.shape(), k.side);
  const int P = plan.padded_size;
  if (P < std::max(m.height(), m.width()) + k.side - 1)
    throw std::invalid_argument("conv_fft: padded size too small for linear convolution");
  const auto kspec = detail::kernel_spectrum(k, P);
  FeatureMap<Real> out(m.shape());
  std::vector<std::complex<double>> prod;
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c) {
      const auto ispec =
          detail::plane_spectrum_of_map(m.plane(b, c), m.height(), m.width(), P);
      detail::multiply_spectra(ispec, kspec, prod);
      detail::spectrum_to_plane(prod, P, m.height(), m.width(), k.radius(),
                                out.plane(b, c));
    }
  return out;
}

/// Same-size convolution picking the route from the kernel size.
template <class Real>
FeatureMap<Real> conv_same(const FeatureMap<Real>& m, const Kernel2D<Real>& k,
                           ConvMethod method = ConvMethod::Auto) {
  ConvPlan plan = make_plan(m.shape(), k.side, method);
  if (plan.method == ConvMethod::Direct) return conv_direct(m, k);
  return conv_fft(m, k, plan);
}

// ---------------------------------------------------------------------------
// Cached basis-plane spectra. The transform of the filter bank depends only
// on (sigma, support, mode, padded size), so it is computed once per shape
// and reused across layers, batches and training steps. Concurrent readers
// are fine; insertion is serialized.

namespace detail {

struct SpectrumKey {
  double sigma;
  int support;
  int mode;
  int padded;
  bool operator<(const SpectrumKey& o) const {
    return std::tie(sigma, support, mode, padded) <
           std::tie(o.sigma, o.support, o.mode, o.padded);
  }
};

using BasisSpectra = std::array<std::vector<std::complex<double>>, kBasisPlanes>;

template <class Real>
std::shared_ptr<const BasisSpectra> basis_spectra(const GaussBasis<Real>& basis,
                                                  int padded) {
  static std::map<SpectrumKey, std::shared_ptr<const BasisSpectra>> cache;
  static std::mutex mutex;
  const SpectrumKey key{double(basis.sigma), basis.support,
                        int(basis.mode), padded};
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto spectra = std::make_shared<BasisSpectra>();
  for (int j = 0; j < kBasisPlanes; ++j)
    (*spectra)[j] = kernel_spectrum(basis.planes[j], padded);
  std::lock_guard<std::mutex> lock(mutex);
  auto [it, inserted] = cache.emplace(key, std::move(spectra));
  return it->second;
}

}  // namespace detail

/// All six basis responses of every input channel, as a map with
/// channels(in) * 6 output channels ordered c*6 + j. One forward and six
/// inverse transforms per input channel on the FFT route, so the cost is
/// independent of how many output channels later mix these.
template <class Real>
FeatureMap<Real> basis_responses(const FeatureMap<Real>& m, const GaussBasis<Real>& basis,
                                 ConvMethod method = ConvMethod::Auto) {
  ConvPlan plan = make_plan(m.shape(), basis.support, method);
  FeatureMap<Real> out(m.batch(), m.channels() * kBasisPlanes, m.height(), m.width());

  std::shared_ptr<const detail::BasisSpectra> spectra;
  if (plan.method == ConvMethod::Fft)
    spectra = detail::basis_spectra(basis, plan.padded_size);

  std::vector<std::complex<double>> prod;
  for (int b = 0; b < m.batch(); ++b)
    for (int c = 0; c < m.channels(); ++c) {
      std::vector<std::complex<double>> ispec;
      if (plan.method == ConvMethod::Fft)
        ispec = detail::plane_spectrum_of_map(m.plane(b, c), m.height(), m.width(),
                                              plan.padded_size);
      for (int j = 0; j < kBasisPlanes; ++j) {
        Real* dst = out.plane(b, c * kBasisPlanes + j);
        if (plan.method == ConvMethod::Fft) {
          detail::multiply_spectra(ispec, (*spectra)[j], prod);
          detail::spectrum_to_plane(prod, plan.padded_size, m.height(), m.width(),
                                    basis.planes[j].radius(), dst);
        } else {
          detail::conv_plane_direct(m.plane(b, c), m.height(), m.width(),
                                    basis.planes[j], dst);
        }
      }
    }
  return out;
}

/// Linear mix of basis responses: output channel k = sum over columns of
/// W[k, c*6+j] times response (c, j).
template <class Real>
FeatureMap<Real> mix_responses(const FeatureMap<Real>& responses,
                               const std::vector<Real>& weights, int out_channels) {
  if (responses.channels() % kBasisPlanes != 0)
    throw std::invalid_argument("mix_responses: channel count is not a multiple of 6");
  const int cols = responses.channels();
  if (std::size_t(out_channels) * cols != weights.size())
    throw std::invalid_argument("mix_responses: weight matrix must be m x (6 n)");

  FeatureMap<Real> out(responses.batch(), out_channels, responses.height(),
                       responses.width());
  const std::size_t plane_px = std::size_t(responses.height()) * responses.width();
  std::vector<double> acc(plane_px * out_channels);
  for (int b = 0; b < responses.batch(); ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int col = 0; col < cols; ++col) {
      const Real* src = responses.plane(b, col);
      for (int k = 0; k < out_channels; ++k) {
        const double w = double(weights[std::size_t(k) * cols + col]);
        if (w == 0.0) continue;
        double* dst = acc.data() + plane_px * k;
        for (std::size_t i = 0; i < plane_px; ++i) dst[i] += w * double(src[i]);
      }
    }
    for (int k = 0; k < out_channels; ++k) {
      Real* dst = out.plane(b, k);
      const double* src = acc.data() + plane_px * k;
      for (std::size_t i = 0; i < plane_px; ++i) dst[i] = Real(src[i]);
    }
  }
  return out;
}

/// Filter-bank convolution: every input channel is convolved with the six
/// basis planes once, and output channels are linear combinations of those
/// responses. weights is row-major out_channels x (6 * in_channels) with
/// column c*6 + j for input channel c and plane j.
template <class Real>
FeatureMap<Real> conv_basis(const FeatureMap<Real>& m, const GaussBasis<Real>& basis,
                            const std::vector<Real>& weights, int out_channels,
                            ConvMethod method = ConvMethod::Auto) {
  if (static_cast<std::size_t>(out_channels) * kBasisPlanes * m.channels() !=
      weights.size())
    throw std::invalid_argument("conv_basis: weight matrix must be m x (6 n)");
  return mix_responses(basis_responses(m, basis, method), weights, out_channels);
}

}  // namespace gaussnet
