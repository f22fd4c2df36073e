#pragma once

// Canonical flat layout of a network's learnable scalars, in declaration
// order: per layer weights, affine scale, affine shift (when the layer has
// affine parameters), then head weights and bias. Gradient tapes, ADAM
// moments and checkpoint blocks all mirror this layout.

#include <string>
#include <vector>

#include "gaussnet/layers.hpp"

namespace gaussnet {

struct ParamRegion {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ParamLayout {
  std::vector<ParamRegion> regions;
  std::size_t total = 0;
};

/// Layers with affine enabled but no explicit vectors get identity
/// parameters materialized so they can be trained and serialized.
template <class Real>
void materialize_affine(LayerSpec<Real>& spec) {
  if (!spec.has_affine) return;
  if (spec.affine_scale.empty()) spec.affine_scale.assign(spec.out_channels, Real(1));
  if (spec.affine_shift.empty()) spec.affine_shift.assign(spec.out_channels, Real(0));
}

template <class Real>
void materialize_affine(NetworkSpec<Real>& net) {
  for (auto& layer : net.layers) materialize_affine(layer);
}

template <class Real>
ParamLayout param_layout(const NetworkSpec<Real>& net) {
  ParamLayout layout;
  auto add = [&layout](const std::string& name, std::size_t size) {
    layout.regions.push_back({name, layout.total, size});
    layout.total += size;
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    const std::string prefix = "layer" + std::to_string(i);
    add(prefix + ".weights", layer.weight_count());
    if (layer.has_affine) {
      add(prefix + ".affine_scale", std::size_t(layer.out_channels));
      add(prefix + ".affine_shift", std::size_t(layer.out_channels));
    }
  }
  if (net.classes > 0) {
    add("head.weights", std::size_t(net.classes) * net.feature_channels());
    add("head.bias", std::size_t(net.classes));
  }
  return layout;
}

namespace detail {

/// Visits every parameter vector in layout order. Visitor signature:
/// (const std::string& name, std::vector<Real>& values).
template <class Real, class Visitor>
void visit_parameters(NetworkSpec<Real>& net, Visitor&& visit) {
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& layer = net.layers[i];
    const std::string prefix = "layer" + std::to_string(i);
    visit(prefix + ".weights", layer.weights);
    if (layer.has_affine) {
      materialize_affine(layer);
      visit(prefix + ".affine_scale", layer.affine_scale);
      visit(prefix + ".affine_shift", layer.affine_shift);
    }
  }
  if (net.classes > 0) {
    visit("head.weights", net.head_weights);
    visit("head.bias", net.head_bias);
  }
}

}  // namespace detail

template <class Real>
std::vector<Real> flatten_parameters(const NetworkSpec<Real>& net) {
  std::vector<Real> flat;
  auto copy = net;
  detail::visit_parameters(copy, [&flat](const std::string&, std::vector<Real>& v) {
    flat.insert(flat.end(), v.begin(), v.end());
  });
  return flat;
}

template <class Real>
void unflatten_parameters(NetworkSpec<Real>& net, const std::vector<Real>& flat) {
  std::size_t pos = 0;
  detail::visit_parameters(net, [&](const std::string& name, std::vector<Real>& v) {
    if (pos + v.size() > flat.size())
      throw std::invalid_argument("unflatten_parameters: flat vector too short at " + name);
    std::copy(flat.begin() + pos, flat.begin() + pos + v.size(), v.begin());
    pos += v.size();
  });
  if (pos != flat.size())
    throw std::invalid_argument("unflatten_parameters: flat vector has extra values");
}

}  // namespace gaussnet
