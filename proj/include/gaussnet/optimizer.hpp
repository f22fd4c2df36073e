#pragma once

// ADAM over the flat parameter layout, the contractive weight projection,
// and checkpoint save/load (network plus optimizer state in one
// container). Update arithmetic runs in double and rounds back to the
// parameter precision, keeping runs bit-reproducible.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gaussnet/autodiff.hpp"
#include "gaussnet/serialize.hpp"

namespace gaussnet {

template <class Real = float>
struct AdamState {
  std::int64_t step = 0;
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real epsilon = Real(1e-8);
  std::vector<Real> first_moment;   // shaped like the flat parameters
  std::vector<Real> second_moment;
};

template <class Real>
AdamState<Real> init_adam(const NetworkSpec<Real>& net, Real lr = Real(1e-3)) {
  AdamState<Real> s;
  s.lr = lr;
  const auto layout = param_layout(net);
  s.first_moment.assign(layout.total, Real(0));
  s.second_moment.assign(layout.total, Real(0));
  return s;
}

/// Standard ADAM update with bias correction; increments the step count.
template <class Real>
void adam_step(NetworkSpec<Real>& net, const GradientTape<Real>& tape,
               AdamState<Real>& state) {
  auto params = flatten_parameters(net);
  if (tape.values.size() != params.size() ||
      state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw std::invalid_argument("adam_step: gradient/state size does not match parameters");

  state.step += 1;
  const double b1 = double(state.beta1), b2 = double(state.beta2);
  const double c1 = 1.0 - std::pow(b1, double(state.step));
  const double c2 = 1.0 - std::pow(b2, double(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = double(tape.values[i]);
    const double m = b1 * double(state.first_moment[i]) + (1.0 - b1) * g;
    const double v = b2 * double(state.second_moment[i]) + (1.0 - b2) * g * g;
    state.first_moment[i] = Real(m);
    state.second_moment[i] = Real(v);
    params[i] = Real(double(params[i]) -
                     double(state.lr) * (m / c1) /
                         (std::sqrt(v / c2) + double(state.epsilon)));
  }
  unflatten_parameters(net, params);
}

/// Rescales gauss-layer weights so every layer's certified factor stays at
/// most max_factor for inputs of the given spatial size: w_sup N for the
/// first layer, w_sup N basis_sup deeper. Returns how many layers were
/// rescaled. Pixel layers have no certificate and are left alone.
template <class Real>
int project_contractive(NetworkSpec<Real>& net, int height, int width,
                        Real max_factor = Real(0.99)) {
  if (!(max_factor > Real(0)))
    throw std::invalid_argument("project_contractive: max_factor must be > 0");
  int rescaled = 0;
  int h = height, w = width;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& layer = net.layers[i];
    if (is_gauss_kind(layer.kind)) {
      const double n = double(h) * double(w);
      double limit = double(max_factor) / n;
      if (i > 0) {
        const auto est = estimate_lipschitz(
            build_basis(layer.sigma, layer.basis_support(), layer.basis_mode));
        limit /= double(est.basis_sup);
      }
      const double cur = double(weight_sup_norm(layer));
      if (cur > limit) {
        const Real t = Real(limit / cur);
        for (auto& v : layer.weights) v *= t;
        ++rescaled;
      }
    }
    h = (h + layer.d - 1) / layer.d;
    w = (w + layer.d - 1) / layer.d;
  }
  return rescaled;
}

}  // namespace gaussnet

namespace gaussnet::io {

template <class Real>
void save_checkpoint(const std::string& path, const NetworkSpec<Real>& net,
                     const AdamState<Real>& state) {
  net.validate();
  json header{{"kind", "checkpoint"},
              {"network", describe_network(net)},
              {"adam",
               {{"step", state.step},
                {"lr", double(state.lr)},
                {"beta1", double(state.beta1)},
                {"beta2", double(state.beta2)},
                {"epsilon", double(state.epsilon)}}}};
  auto blocks = parameter_blocks(net);
  Block m{"adam.m", {state.first_moment.begin(), state.first_moment.end()}};
  Block v{"adam.v", {state.second_moment.begin(), state.second_moment.end()}};
  blocks.push_back(std::move(m));
  blocks.push_back(std::move(v));
  write_container(path, std::move(header), blocks);
}

template <class Real = float>
std::pair<NetworkSpec<Real>, AdamState<Real>> load_checkpoint(const std::string& path) {
  auto [header, blocks] = read_container(path);
  if (header.at("kind").get<std::string>() != "checkpoint")
    throw std::runtime_error(path + ": container does not hold a checkpoint");
  auto net = network_from_description<Real>(header.at("network"));
  materialize_affine(net);
  load_parameter_blocks(net, blocks, 0);
  net.validate();

  AdamState<Real> state;
  const auto& adam = header.at("adam");
  state.step = adam.at("step").get<std::int64_t>();
  state.lr = Real(adam.at("lr").get<double>());
  state.beta1 = Real(adam.at("beta1").get<double>());
  state.beta2 = Real(adam.at("beta2").get<double>());
  state.epsilon = Real(adam.at("epsilon").get<double>());
  const std::size_t total = param_layout(net).total;
  for (const auto& b : blocks) {
    if (b.name == "adam.m") state.first_moment.assign(b.data.begin(), b.data.end());
    if (b.name == "adam.v") state.second_moment.assign(b.data.begin(), b.data.end());
  }
  if (state.first_moment.size() != total || state.second_moment.size() != total)
    throw std::runtime_error(path + ": ADAM moment blocks missing or missized");
  return {std::move(net), std::move(state)};
}

}  // namespace gaussnet::io
