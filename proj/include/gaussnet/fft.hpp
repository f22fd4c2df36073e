#pragma once

// Radix-2 complex FFT on power-of-two grids. Transforms run in double
// precision regardless of the feature-map value type so the convolution
// engine stays well inside its accuracy budget. A process-wide transform
// counter backs the cost assertions in the tests.

#include <atomic>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace gaussnet::fft {

inline std::atomic<std::uint64_t>& transform_counter() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

inline std::uint64_t transforms_performed() { return transform_counter().load(); }
inline void reset_transform_counter() { transform_counter().store(0); }

inline int next_pow2(int n) {
  if (n < 1) throw std::invalid_argument("next_pow2: n must be >= 1");
  int p = 1;
  while (p < n) {
    if (p > (1 << 29)) throw std::invalid_argument("next_pow2: size too large");
    p <<= 1;
  }
  return p;
}

/// In-place iterative radix-2 transform. n must be a power of two.
inline void fft_1d(std::complex<double>* a, int n, bool inverse) {
  if (n <= 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_1d: length must be a power of two");
  // bit-reversal permutation
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double pi = 3.14159265358979323846;
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * pi / len * (inverse ? 1.0 : -1.0);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const double inv = 1.0 / n;
    for (int i = 0; i < n; ++i) a[i] *= inv;
  }
}

/// In-place 2-D transform of a row-major size x size grid.
inline void fft_2d(std::vector<std::complex<double>>& grid, int size, bool inverse) {
  if (static_cast<std::int64_t>(grid.size()) != std::int64_t(size) * size)
    throw std::invalid_argument("fft_2d: buffer does not match size");
  transform_counter().fetch_add(1, std::memory_order_relaxed);
  for (int y = 0; y < size; ++y) fft_1d(grid.data() + std::size_t(y) * size, size, inverse);
  std::vector<std::complex<double>> col(size);
  for (int x = 0; x < size; ++x) {
    for (int y = 0; y < size; ++y) col[y] = grid[std::size_t(y) * size + x];
    fft_1d(col.data(), size, inverse);
    for (int y = 0; y < size; ++y) grid[std::size_t(y) * size + x] = col[y];
  }
}

}  // namespace gaussnet::fft
