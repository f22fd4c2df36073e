#pragma once

// Reverse-mode differentiation through every layer kind, the pooling and
// classifier head, and softmax cross-entropy. The traced forward pass
// reuses the inference primitives in the same order, so its numbers are
// bitwise those of forward_network; the backward pass accumulates in
// double and runs in a fixed order, keeping training deterministic.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaussnet/params.hpp"

namespace gaussnet {

/// Gradient of the loss for every learnable scalar, flat in layout order.
template <class Real = float>
struct GradientTape {
  ParamLayout layout;
  std::vector<Real> values;

  Real* region(const std::string& name, std::size_t* size = nullptr) {
    for (const auto& r : layout.regions)
      if (r.name == name) {
        if (size) *size = r.size;
        return values.data() + r.offset;
      }
    throw std::invalid_argument("GradientTape: no region named " + name);
  }
  const Real* region(const std::string& name, std::size_t* size = nullptr) const {
    return const_cast<GradientTape*>(this)->region(name, size);
  }
};

template <class Real = float>
struct LossGrad {
  Real loss = 0;
  int correct = 0;  // argmax agreement with the labels, lowest index wins
  GradientTape<Real> tape;
};

namespace detail {

/// 180-degree rotation; convolving with the flipped kernel is the adjoint
/// of convolving with the original.
template <class Real>
Kernel2D<Real> flip_kernel(const Kernel2D<Real>& k) {
  Kernel2D<Real> out(k.side);
  const int h = k.radius();
  for (int y = -h; y <= h; ++y)
    for (int x = -h; x <= h; ++x) out.at(y, x) = k.at(-y, -x);
  return out;
}

template <class Real>
struct LayerTrace {
  FeatureMap<Real> input;      // map entering the layer
  FeatureMap<Real> responses;  // gauss kinds only: basis responses, n*6 channels
  FeatureMap<Real> z0;         // convolution output, pre-affine
  FeatureMap<Real> z1;         // post-affine, pre-ReLU
};

template <class Real>
struct TracedForward {
  std::vector<LayerTrace<Real>> traces;
  FeatureMap<Real> final_map;
  std::vector<Real> features;  // batch x channels
  std::vector<Real> logits;    // batch x classes, empty without a head
};

template <class Real>
TracedForward<Real> forward_traced(const NetworkSpec<Real>& net,
                                   const FeatureMap<Real>& batch) {
  net.validate();
  TracedForward<Real> fwd;
  FeatureMap<Real> cur = batch;
  for (const auto& spec : net.layers) {
    if (cur.channels() != spec.in_channels)
      throw std::invalid_argument("forward_traced: channel mismatch");
    LayerTrace<Real> t;
    t.input = std::move(cur);
    if (is_gauss_kind(spec.kind)) {
      const auto basis = build_basis(spec.sigma, spec.basis_support(), spec.basis_mode);
      t.responses = basis_responses(t.input, basis, spec.conv_method);
      t.z0 = mix_responses(t.responses, spec.weights, spec.out_channels);
    } else {
      t.z0 = conv_pixel(t.input, spec.weights, spec.out_channels, spec.pixel_side);
    }
    t.z1 = t.z0;
    apply_affine_relu(t.z1, spec, /*relu=*/false);
    FeatureMap<Real> act = t.z1;
    for (auto& v : act.values()) v = std::max(v, Real(0));

    if (spec.kind == LayerKind::GaussResidual) {
      for (std::size_t i = 0; i < act.size(); ++i)
        act.values()[i] += t.input.values()[i];
    } else if (spec.kind == LayerKind::PixelAntialiasSub) {
      const auto blur = build_basis(spec.sigma, spec.basis_support(), BasisMode::Analytic);
      act = conv_same(act, blur.planes[0], spec.conv_method);
    }
    cur = apply_subsample(act, spec);
    fwd.traces.push_back(std::move(t));
  }
  fwd.final_map = std::move(cur);
  fwd.features = pool_features(fwd.final_map, net.pooling, net.window_sigma);
  if (net.classes > 0) {
    const int B = batch.batch(), C = net.classes, F = net.feature_channels();
    fwd.logits.resize(std::size_t(B) * C);
    for (int b = 0; b < B; ++b)
      for (int k = 0; k < C; ++k) {
        double sum = double(net.head_bias[k]);
        const Real* row = net.head_weights.data() + std::size_t(k) * F;
        const Real* f = fwd.features.data() + std::size_t(b) * F;
        for (int j = 0; j < F; ++j) sum += double(row[j]) * double(f[j]);
        fwd.logits[std::size_t(b) * C + k] = Real(sum);
      }
  }
  return fwd;
}

/// Adjoint of apply_subsample: scatter for stride-d point sampling; for
/// 2x2 pooling each block position gets g / (block count), matching the
/// ragged-edge averaging of avg_pool2.
template <class Real>
FeatureMap<Real> subsample_backward(const FeatureMap<Real>& g_out,
                                    const Shape& pre_shape,
                                    const LayerSpec<Real>& spec) {
  if (spec.d == 1) return g_out;
  FeatureMap<Real> g(pre_shape);
  for (int b = 0; b < g_out.batch(); ++b)
    for (int c = 0; c < g_out.channels(); ++c)
      for (int y = 0; y < g_out.height(); ++y)
        for (int x = 0; x < g_out.width(); ++x) {
          if (spec.sub_mode == SubsampleMode::AvgPool2) {
            int count = 0;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * y + dy < pre_shape.height && 2 * x + dx < pre_shape.width)
                  ++count;
            const Real share = g_out(b, c, y, x) / Real(count);
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                if (2 * y + dy < pre_shape.height && 2 * x + dx < pre_shape.width)
                  g(b, c, 2 * y + dy, 2 * x + dx) = share;
          } else {
            g(b, c, y * spec.d, x * spec.d) = g_out(b, c, y, x);
          }
        }
  return g;
}

}  // namespace detail

/// Mean softmax cross-entropy over the batch and its gradient for every
/// learnable scalar, by reverse accumulation. ReLU uses subgradient 0 at 0.
template <class Real>
LossGrad<Real> loss_and_grad(const NetworkSpec<Real>& net, const FeatureMap<Real>& batch,
                             const std::vector<int>& labels) {
  net.validate();
  if (net.classes <= 0)
    throw std::invalid_argument("loss_and_grad: network has no classifier head");
  if (int(labels.size()) != batch.batch())
    throw std::invalid_argument("loss_and_grad: one label per batch entry");
  for (int l : labels)
    if (l < 0 || l >= net.classes)
      throw std::invalid_argument("loss_and_grad: label out of range");

  const int B = batch.batch(), C = net.classes, F = net.feature_channels();
  auto fwd = detail::forward_traced(net, batch);

  LossGrad<Real> out;
  out.tape.layout = param_layout(net);
  out.tape.values.assign(out.tape.layout.total, Real(0));

  // Softmax cross-entropy, stabilized by the max trick; the gradient of
  // the mean loss is (softmax - onehot) / B.
  std::vector<double> g_logits(std::size_t(B) * C);
  double loss = 0;
  for (int b = 0; b < B; ++b) {
    const Real* row = fwd.logits.data() + std::size_t(b) * C;
    int argmax = 0;
    for (int k = 1; k < C; ++k)
      if (row[k] > row[argmax]) argmax = k;
    const double mx = double(row[argmax]);
    double z = 0;
    for (int k = 0; k < C; ++k) z += std::exp(double(row[k]) - mx);
    loss += std::log(z) - (double(row[labels[b]]) - mx);
    if (argmax == labels[b]) ++out.correct;
    for (int k = 0; k < C; ++k) {
      const double p = std::exp(double(row[k]) - mx) / z;
      g_logits[std::size_t(b) * C + k] = (p - (k == labels[b] ? 1.0 : 0.0)) / B;
    }
  }
  out.loss = Real(loss / B);

  // Head: logits = W f + b.
  std::vector<double> g_feat(std::size_t(B) * F, 0.0);
  {
    Real* g_hw = out.tape.region("head.weights");
    Real* g_hb = out.tape.region("head.bias");
    for (int k = 0; k < C; ++k) {
      double gb = 0;
      for (int b = 0; b < B; ++b) gb += g_logits[std::size_t(b) * C + k];
      g_hb[k] = Real(gb);
      for (int j = 0; j < F; ++j) {
        double gw = 0;
        for (int b = 0; b < B; ++b)
          gw += g_logits[std::size_t(b) * C + k] *
                double(fwd.features[std::size_t(b) * F + j]);
        g_hw[std::size_t(k) * F + j] = Real(gw);
      }
    }
    for (int b = 0; b < B; ++b)
      for (int j = 0; j < F; ++j) {
        double gf = 0;
        for (int k = 0; k < C; ++k)
          gf += double(net.head_weights[std::size_t(k) * F + j]) *
                g_logits[std::size_t(b) * C + k];
        g_feat[std::size_t(b) * F + j] = gf;
      }
  }

  // Pooling: each final-map pixel receives its pooling weight.
  FeatureMap<Real> g_map(fwd.final_map.shape());
  {
    const int H = fwd.final_map.height(), W = fwd.final_map.width();
    std::vector<double> w(std::size_t(H) * W, 1.0 / (double(H) * W));
    if (net.pooling == PoolingKind::GaussWindowedAverage) {
      const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
      const double s2 = 2.0 * double(net.window_sigma) * double(net.window_sigma);
      double wsum = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          w[std::size_t(y) * W + x] =
              std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / s2);
          wsum += w[std::size_t(y) * W + x];
        }
      for (auto& v : w) v /= wsum;
    }
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < F; ++c) {
        Real* dst = g_map.plane(b, c);
        const double gf = g_feat[std::size_t(b) * F + c];
        for (std::size_t i = 0; i < w.size(); ++i) dst[i] = Real(gf * w[i]);
      }
  }

  // Layers, last to first.
  for (int li = int(net.layers.size()) - 1; li >= 0; --li) {
    const auto& spec = net.layers[li];
    const auto& t = fwd.traces[li];
    const std::size_t px = std::size_t(t.z1.height()) * t.z1.width();

    FeatureMap<Real> g_pre = detail::subsample_backward(g_map, t.z1.shape(), spec);

    FeatureMap<Real> g_skip;  // residual pass-through to the layer input
    if (spec.kind == LayerKind::GaussResidual) {
      g_skip = g_pre;
    } else if (spec.kind == LayerKind::PixelAntialiasSub) {
      const auto blur = build_basis(spec.sigma, spec.basis_support(), BasisMode::Analytic);
      g_pre = conv_same(g_pre, detail::flip_kernel(blur.planes[0]), spec.conv_method);
    }

    for (std::size_t i = 0; i < g_pre.size(); ++i)
      if (!(t.z1.values()[i] > Real(0))) g_pre.values()[i] = Real(0);

    const std::string prefix = "layer" + std::to_string(li);
    if (spec.has_affine) {
      Real* g_scale = out.tape.region(prefix + ".affine_scale");
      Real* g_shift = out.tape.region(prefix + ".affine_shift");
      for (int c = 0; c < spec.out_channels; ++c) {
        double gs = 0, gb = 0;
        for (int b = 0; b < B; ++b) {
          const Real* g = g_pre.plane(b, c);
          const Real* z0 = t.z0.plane(b, c);
          for (std::size_t i = 0; i < px; ++i) {
            gs += double(g[i]) * double(z0[i]);
            gb += double(g[i]);
          }
        }
        g_scale[c] = Real(gs);
        g_shift[c] = Real(gb);
      }
    }
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < spec.out_channels; ++c) {
        const Real scale = spec.affine_scale.empty() ? Real(1) : spec.affine_scale[c];
        Real* g = g_pre.plane(b, c);
        for (std::size_t i = 0; i < px; ++i) g[i] *= scale;
      }
    // g_pre now holds the gradient at the convolution output z0.

    Real* g_w = out.tape.region(prefix + ".weights");
    FeatureMap<Real> g_in;
    if (li > 0) g_in = FeatureMap<Real>(t.input.shape());

    if (is_gauss_kind(spec.kind)) {
      const int cols = spec.in_channels * kBasisPlanes;
      for (int k = 0; k < spec.out_channels; ++k)
        for (int col = 0; col < cols; ++col) {
          double acc = 0;
          for (int b = 0; b < B; ++b) {
            const Real* g = g_pre.plane(b, k);
            const Real* r = t.responses.plane(b, col);
            for (std::size_t i = 0; i < px; ++i) acc += double(g[i]) * double(r[i]);
          }
          g_w[std::size_t(k) * cols + col] = Real(acc);
        }
      if (li > 0) {
        // g_R = W^T g_z0 channel-wise, then each response gradient flows
        // through the flipped plane back to its input channel.
        const auto basis = build_basis(spec.sigma, spec.basis_support(), spec.basis_mode);
        FeatureMap<Real> g_r(t.responses.shape());
        for (int b = 0; b < B; ++b)
          for (int col = 0; col < cols; ++col) {
            Real* dst = g_r.plane(b, col);
            for (int k = 0; k < spec.out_channels; ++k) {
              const Real w = spec.weights[std::size_t(k) * cols + col];
              if (w == Real(0)) continue;
              const Real* g = g_pre.plane(b, k);
              for (std::size_t i = 0; i < px; ++i) dst[i] += w * g[i];
            }
          }
        for (int c = 0; c < spec.in_channels; ++c)
          for (int j = 0; j < kBasisPlanes; ++j) {
            FeatureMap<Real> one(g_r.batch(), 1, g_r.height(), g_r.width());
            for (int b = 0; b < B; ++b)
              std::copy(g_r.plane(b, c * kBasisPlanes + j),
                        g_r.plane(b, c * kBasisPlanes + j) + px, one.plane(b, 0));
            const auto back =
                conv_same(one, detail::flip_kernel(basis.planes[j]), spec.conv_method);
            for (int b = 0; b < B; ++b) {
              Real* dst = g_in.plane(b, c);
              const Real* src = back.plane(b, 0);
              for (std::size_t i = 0; i < px; ++i) dst[i] += src[i];
            }
          }
      }
    } else {
      const int side = spec.pixel_side, h = (side - 1) / 2;
      const std::size_t kk = std::size_t(side) * side;
      for (int ko = 0; ko < spec.out_channels; ++ko)
        for (int c = 0; c < spec.in_channels; ++c)
          for (int dy = -h; dy <= h; ++dy)
            for (int dx = -h; dx <= h; ++dx) {
              double acc = 0;
              for (int b = 0; b < B; ++b)
                for (int y = 0; y < t.z1.height(); ++y)
                  for (int x = 0; x < t.z1.width(); ++x)
                    acc += double(g_pre(b, ko, y, x)) *
                           double(t.input.at_or_zero(b, c, y - dy, x - dx));
              g_w[(std::size_t(ko) * spec.in_channels + c) * kk +
                  std::size_t(dy + h) * side + (dx + h)] = Real(acc);
            }
      if (li > 0) {
        Kernel2D<Real> k(side);
        for (int ko = 0; ko < spec.out_channels; ++ko)
          for (int c = 0; c < spec.in_channels; ++c) {
            const Real* w =
                spec.weights.data() + (std::size_t(ko) * spec.in_channels + c) * kk;
            std::copy(w, w + kk, k.v.begin());
            FeatureMap<Real> one(B, 1, t.z1.height(), t.z1.width());
            for (int b = 0; b < B; ++b)
              std::copy(g_pre.plane(b, ko), g_pre.plane(b, ko) + px, one.plane(b, 0));
            const auto back = conv_same(one, detail::flip_kernel(k), spec.conv_method);
            for (int b = 0; b < B; ++b) {
              Real* dst = g_in.plane(b, c);
              const Real* src = back.plane(b, 0);
              for (std::size_t i = 0; i < px; ++i) dst[i] += src[i];
            }
          }
      }
    }

    if (li > 0) {
      if (spec.kind == LayerKind::GaussResidual)
        for (std::size_t i = 0; i < g_in.size(); ++i)
          g_in.values()[i] += g_skip.values()[i];
      g_map = std::move(g_in);
    }
  }
  return out;
}

}  // namespace gaussnet
