#pragma once

// Discretized Gaussian-derivative filter bank: the unit-sum Gaussian and
// its five derivative planes up to order two, either sampled from the
// closed-form expressions or built by running Sobel-Feldman difference
// stencils over the sampled Gaussian. Also computes the discrete
// shift-Lipschitz constant of the bank that the robustness certificates
// are assembled from.

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gaussnet {

/// Square kernel with centered indexing: at(dy, dx) for dy, dx in [-h, h],
/// h = (side-1)/2. Sides are odd so the center is well defined.
template <class Real = float>
struct Kernel2D {
  int side = 0;
  std::vector<Real> v;

  Kernel2D() = default;
  explicit Kernel2D(int s) : side(s), v(std::size_t(s) * s, Real(0)) {}

  int radius() const { return (side - 1) / 2; }

  Real& at(int dy, int dx) {
    return v[std::size_t(dy + radius()) * side + (dx + radius())];
  }
  Real at(int dy, int dx) const {
    return v[std::size_t(dy + radius()) * side + (dx + radius())];
  }
  Real at_or_zero(int dy, int dx) const {
    const int h = radius();
    if (dy < -h || dy > h || dx < -h || dx > h) return Real(0);
    return at(dy, dx);
  }
};

enum class BasisMode { Analytic, SobelOnGaussian };

/// Plane order: G, dG/dx, dG/dy, d2G/dx2, d2G/dxdy, d2G/dy2.
inline constexpr int kBasisPlanes = 6;

template <class Real = float>
struct GaussBasis {
  Real sigma = Real(1);
  int support = 0;
  BasisMode mode = BasisMode::Analytic;
  std::array<Kernel2D<Real>, kBasisPlanes> planes;
};

template <class Real = float>
struct LipschitzEstimate {
  Real c_g = 0;                                // max unit-shift difference over the bank
  std::array<Real, kBasisPlanes> per_plane_sup{};  // max |value| per plane
  Real basis_sup = 0;                          // max over per_plane_sup
};

/// Truncation rule for layers that do not use map-sized supports:
/// 3 sigma per side captures essentially all of the mass.
inline int default_support(double sigma) {
  return 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1;
}

/// Smallest odd support covering a feature map of the given side.
inline int map_support(int side) { return (side % 2 == 0) ? side + 1 : side; }

namespace detail {

// Sobel-Feldman first-derivative stencils with 1/8 scaling so they
// approximate true derivatives. Applied as correlations: the x stencil is
// a central difference along x smoothed by (1,2,1)/4 along y.
inline double sobel_weight_x(int dy, int dx) {
  return double(dx) * (2 - std::abs(dy)) / 8.0;
}
inline double sobel_weight_y(int dy, int dx) { return sobel_weight_x(dx, dy); }

template <class Real>
Kernel2D<Real> apply_stencil(const Kernel2D<Real>& in, bool along_y) {
  Kernel2D<Real> out(in.side);
  const int h = in.radius();
  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x) {
      double sum = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const double w = along_y ? sobel_weight_y(dy, dx) : sobel_weight_x(dy, dx);
          sum += w * double(in.at_or_zero(y + dy, x + dx));
        }
      out.at(y, x) = Real(sum);
    }
  return out;
}

}  // namespace detail

template <class Real = float>
GaussBasis<Real> build_basis(Real sigma, int support, BasisMode mode) {
  if (!(sigma > Real(0))) throw std::invalid_argument("build_basis: sigma must be > 0");
  if (support < 3 || support % 2 == 0)
    throw std::invalid_argument("build_basis: support must be odd and >= 3");

  GaussBasis<Real> b;
  b.sigma = sigma;
  b.support = support;
  b.mode = mode;
  for (auto& p : b.planes) p = Kernel2D<Real>(support);

  const int h = (support - 1) / 2;
  const double s2 = double(sigma) * double(sigma);
  const double s4 = s2 * s2;
  const double two_pi = 6.28318530717958647692;

  // Sample the density, then normalize the Gaussian plane to unit sum and
  // scale every derivative plane by the same factor so the linear span of
  // the bank is preserved.
  std::vector<double> g(std::size_t(support) * support);
  double norm = 0;
  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x) {
      const double val = std::exp(-(double(x) * x + double(y) * y) / (2.0 * s2)) /
                         (two_pi * s2);
      g[std::size_t(y + h) * support + (x + h)] = val;
      norm += val;
    }

  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x) {
      const double gv = g[std::size_t(y + h) * support + (x + h)] / norm;
      b.planes[0].at(y, x) = Real(gv);
      if (mode == BasisMode::Analytic) {
        b.planes[1].at(y, x) = Real(-double(x) / s2 * gv);
        b.planes[2].at(y, x) = Real(-double(y) / s2 * gv);
        b.planes[3].at(y, x) = Real((double(x) * x - s2) / s4 * gv);
        b.planes[4].at(y, x) = Real(double(x) * y / s4 * gv);
        b.planes[5].at(y, x) = Real((double(y) * y - s2) / s4 * gv);
      }
    }

  if (mode == BasisMode::SobelOnGaussian) {
    b.planes[1] = detail::apply_stencil(b.planes[0], false);
    b.planes[2] = detail::apply_stencil(b.planes[0], true);
    b.planes[3] = detail::apply_stencil(b.planes[1], false);
    b.planes[4] = detail::apply_stencil(b.planes[1], true);
    b.planes[5] = detail::apply_stencil(b.planes[2], true);
  }
  return b;
}

/// Pointwise weighted sum of the six planes.
template <class Real>
Kernel2D<Real> synthesize_kernel(const GaussBasis<Real>& basis,
                                 const std::array<Real, kBasisPlanes>& weights) {
  for (Real w : weights)
    if (!std::isfinite(double(w)))
      throw std::invalid_argument("synthesize_kernel: weights must be finite");
  Kernel2D<Real> out(basis.support);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    double sum = 0;
    for (int j = 0; j < kBasisPlanes; ++j)
      sum += double(weights[j]) * double(basis.planes[j].v[i]);
    out.v[i] = Real(sum);
  }
  return out;
}

/// Discrete shift-Lipschitz data of the bank. c_g is the largest
/// one-pixel-shift difference over all planes and positions (zero
/// extension past the support), the discrete stand-in for the Lipschitz
/// constant of the continuous bank.
template <class Real>
LipschitzEstimate<Real> estimate_lipschitz(const GaussBasis<Real>& basis) {
  LipschitzEstimate<Real> est;
  const int h = basis.support > 0 ? (basis.support - 1) / 2 : 0;
  constexpr int shifts[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (int j = 0; j < kBasisPlanes; ++j) {
    const auto& p = basis.planes[j];
    Real sup = 0;
    for (Real v : p.v) sup = std::max(sup, std::abs(v));
    est.per_plane_sup[j] = sup;
    est.basis_sup = std::max(est.basis_sup, sup);
    for (int y = -h - 1; y <= h + 1; ++y)
      for (int x = -h - 1; x <= h + 1; ++x)
        for (const auto& u : shifts) {
          const Real d = std::abs(p.at_or_zero(y, x) -
                                  p.at_or_zero(y + u[1], x + u[0]));
          est.c_g = std::max(est.c_g, d);
        }
  }
  return est;
}

/// Receptive-field schedule for stacks without sub-sampling: layer l
/// (1-based) uses base_sigma * d^(l-1), mirroring what a stride-d stack
/// would cover.
template <class Real>
Real sigma_schedule(Real base_sigma, int layer_index, int d) {
  if (layer_index < 1) throw std::invalid_argument("sigma_schedule: layer index >= 1");
  if (d < 1) throw std::invalid_argument("sigma_schedule: d >= 1");
  Real out = base_sigma;
  for (int i = 1; i < layer_index; ++i) out *= Real(d);
  return out;
}

/// Row-major CSV dump of one plane, for inspection.
template <class Real>
void write_plane_csv(const Kernel2D<Real>& k, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_plane_csv: cannot open " + path);
  for (int y = 0; y < k.side; ++y) {
    for (int x = 0; x < k.side; ++x) {
      if (x) f << ',';
      f << k.v[std::size_t(y) * k.side + x];
    }
    f << '\n';
  }
}

}  // namespace gaussnet
