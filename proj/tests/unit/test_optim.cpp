#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "gaussnet/train.hpp"

using namespace gaussnet;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gaussnet-optim-tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

NetworkSpec<float> small_net(int classes = 2, int channels = 3) {
  NetworkSpec<float> net;
  LayerSpec<float> a;
  a.kind = LayerKind::Gauss;
  a.in_channels = 1;
  a.out_channels = channels;
  a.sigma = 0.8f;
  a.weights.resize(std::size_t(channels) * kBasisPlanes);
  net.layers.push_back(a);

  LayerSpec<float> b;
  b.kind = LayerKind::GaussSub;
  b.in_channels = channels;
  b.out_channels = channels;
  b.sigma = 0.7f;
  b.d = 2;
  b.weights.resize(std::size_t(channels) * kBasisPlanes * channels);
  net.layers.push_back(b);

  net.classes = classes;
  net.head_weights.resize(std::size_t(classes) * channels);
  net.head_bias.resize(classes);
  materialize_affine(net);
  return net;
}

/// Two-class set that is linearly separable from the pooled plane-0
/// response: dim images vs bright images.
LabeledDataset brightness_set(int n, int side, unsigned seed) {
  LabeledDataset ds;
  ds.name = "brightness";
  ds.class_count = 2;
  ds.images = FeatureMap<float>(n, 1, side, side);
  ds.labels.resize(n);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> noise(0.f, 0.1f);
  for (int i = 0; i < n; ++i) {
    ds.labels[i] = i % 2;
    const float base = ds.labels[i] == 0 ? 0.15f : 0.75f;
    float* img = ds.images.plane(i, 0);
    for (int p = 0; p < side * side; ++p) img[p] = base + noise(rng);
  }
  return ds;
}

}  // namespace

TEST_CASE("init_network seeds weights in the fan-in range, head zero") {
  auto net = small_net();
  init_network(net, 7);

  const double bound1 = 1.0 / std::sqrt(6.0 * 1);
  const double bound2 = 1.0 / std::sqrt(6.0 * 3);
  bool nonzero = false;
  for (float w : net.layers[0].weights) {
    CHECK(std::abs(w) <= bound1);
    nonzero |= w != 0.f;
  }
  CHECK(nonzero);
  for (float w : net.layers[1].weights) CHECK(std::abs(w) <= bound2);
  for (float w : net.head_weights) CHECK(w == 0.f);
  for (float b : net.head_bias) CHECK(b == 0.f);
  for (float s : net.layers[0].affine_scale) CHECK(s == 1.f);
  for (float s : net.layers[0].affine_shift) CHECK(s == 0.f);

  auto again = small_net();
  init_network(again, 7);
  CHECK(flatten_parameters(again) == flatten_parameters(net));

  auto other = small_net();
  init_network(other, 8);
  CHECK(flatten_parameters(other) != flatten_parameters(net));
}

TEST_CASE("init_network scales pixel kernels by their tap count") {
  NetworkSpec<float> net;
  LayerSpec<float> a;
  a.kind = LayerKind::Pixel;
  a.in_channels = 2;
  a.out_channels = 2;
  a.pixel_side = 3;
  a.weights.resize(2 * 2 * 9);
  net.layers.push_back(a);
  net.classes = 2;
  net.head_weights.resize(4);
  net.head_bias.resize(2);
  init_network(net, 3);

  const double bound = 1.0 / std::sqrt(9.0 * 2);
  for (float w : net.layers[0].weights) CHECK(std::abs(w) <= bound);
}

TEST_CASE("adam_step leaves parameters unchanged on zero gradients") {
  auto net = small_net();
  init_network(net, 11);
  const auto before = flatten_parameters(net);

  GradientTape<float> tape;
  tape.layout = param_layout(net);
  tape.values.assign(tape.layout.total, 0.f);
  auto state = init_adam(net);
  adam_step(net, tape, state);

  CHECK(state.step == 1);
  CHECK(flatten_parameters(net) == before);
}

TEST_CASE("constant gradients drive parameters at -lr per step") {
  auto net = small_net();
  init_network(net, 13);
  GradientTape<float> tape;
  tape.layout = param_layout(net);
  tape.values.assign(tape.layout.total, 0.25f);
  auto state = init_adam(net);

  auto before = flatten_parameters(net);
  for (int s = 0; s < 60; ++s) adam_step(net, tape, state);
  auto mid = flatten_parameters(net);
  for (int s = 0; s < 40; ++s) adam_step(net, tape, state);
  auto after = flatten_parameters(net);

  // After warm-up the per-step move approaches lr * sign(g) = 1e-3.
  for (std::size_t i = 0; i < after.size(); ++i) {
    const double per_step = (double(mid[i]) - double(after[i])) / 40.0;
    CHECK(per_step == doctest::Approx(1e-3).epsilon(0.02));
  }
  CHECK(before[0] > after[0]);
}

TEST_CASE("adam_step rejects mismatched shapes") {
  auto net = small_net();
  init_network(net, 17);
  GradientTape<float> tape;
  tape.layout = param_layout(net);
  tape.values.assign(tape.layout.total - 1, 0.f);
  auto state = init_adam(net);
  CHECK_THROWS_AS(adam_step(net, tape, state), std::invalid_argument);
}

TEST_CASE("project_contractive caps certified factors") {
  auto net = small_net();
  init_network(net, 19);
  // Inflate the weights so both layers exceed their limits.
  for (auto& l : net.layers)
    for (auto& w : l.weights) w *= 100.f;

  const int rescaled = project_contractive(net, 16, 16, 0.9f);
  CHECK(rescaled == 2);

  const auto input = FeatureMap<float>(1, 1, 16, 16);
  const auto cert = certify_bound(net, input);
  for (const auto& e : cert.per_layer) {
    CHECK(e.factor <= 1.0f);
    CHECK(e.factor >= 0.5f);  // projection lands on the cap, not below it
  }

  // Weights already far inside the feasible set are left untouched.
  auto tiny = small_net();
  init_network(tiny, 19);
  for (auto& l : tiny.layers)
    for (auto& w : l.weights) w *= 1e-6f;
  const auto before = flatten_parameters(tiny);
  CHECK(project_contractive(tiny, 16, 16, 0.9f) == 0);
  CHECK(flatten_parameters(tiny) == before);

  CHECK_THROWS_AS(project_contractive(net, 16, 16, 0.f), std::invalid_argument);
}

TEST_CASE("training on a fixed batch does not increase the loss early on") {
  int ok = 0;
  const int seeds = 12;
  for (int seed = 0; seed < seeds; ++seed) {
    auto net = small_net();
    init_network(net, 100 + seed);
    const auto ds = brightness_set(16, 8, 200 + seed);
    std::vector<int> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto batch = gather_batch(ds, idx);

    auto state = init_adam(net);
    bool monotone = true;
    float prev = std::numeric_limits<float>::max();
    for (int s = 0; s < 10; ++s) {
      const auto lg = loss_and_grad(net, batch, ds.labels);
      if (lg.loss > prev + 1e-6f) monotone = false;
      prev = lg.loss;
      adam_step(net, lg.tape, state);
    }
    if (monotone) ++ok;
  }
  CHECK(ok >= seeds - 1);
}

TEST_CASE("a separable toy set trains to >= 99% accuracy") {
  NetworkSpec<float> net;
  LayerSpec<float> a;
  a.kind = LayerKind::Gauss;
  a.in_channels = 1;
  a.out_channels = 4;
  a.sigma = 1.0f;
  a.weights.resize(4 * kBasisPlanes);
  net.layers.push_back(a);
  net.classes = 2;
  net.head_weights.resize(8);
  net.head_bias.resize(2);
  init_network(net, 23);

  const auto ds = brightness_set(40, 8, 31);
  TrainOptions<float> opt;
  opt.epochs = 60;
  opt.batch_size = 8;
  opt.seed = 5;
  opt.lr = 5e-3f;
  const auto result = train(net, ds, &ds, opt);

  REQUIRE(result.metrics.size() == 60);
  CHECK(result.metrics.back().train_acc >= 0.99);
  CHECK(result.metrics.back().test_acc >= 0.99);
  CHECK(result.metrics.back().train_loss < result.metrics.front().train_loss);
}

TEST_CASE("zero epochs leave the network untouched") {
  auto net = small_net();
  init_network(net, 29);
  const auto before = flatten_parameters(net);
  const auto ds = brightness_set(8, 8, 3);
  TrainOptions<float> opt;
  opt.epochs = 0;
  const auto result = train(net, ds, nullptr, opt);
  CHECK(result.metrics.empty());
  CHECK(flatten_parameters(net) == before);
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
  const auto ds = brightness_set(24, 8, 7);
  TrainOptions<float> opt;
  opt.epochs = 3;
  opt.batch_size = 8;
  opt.seed = 42;

  auto run = [&]() {
    auto net = small_net();
    init_network(net, 55);
    auto result = train(net, ds, &ds, opt);
    return std::make_pair(flatten_parameters(net), result.metrics);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  REQUIRE(a.second.size() == b.second.size());
  for (std::size_t i = 0; i < a.second.size(); ++i) {
    CHECK(a.second[i].train_loss == b.second[i].train_loss);
    CHECK(a.second[i].test_acc == b.second[i].test_acc);
  }
}

TEST_CASE("contractive training keeps every certified factor below one") {
  auto net = small_net();
  init_network(net, 33);
  const auto ds = brightness_set(16, 8, 9);
  TrainOptions<float> opt;
  opt.epochs = 4;
  opt.batch_size = 8;
  opt.contractive = true;
  opt.max_factor = 0.95f;
  train(net, ds, nullptr, opt);

  const auto cert = certify_bound(net, FeatureMap<float>(1, 1, 8, 8));
  for (const auto& e : cert.per_layer) CHECK(e.factor < 1.0f);
}

TEST_CASE("checkpoints round-trip the network and optimizer state") {
  auto net = small_net();
  init_network(net, 37);
  const auto ds = brightness_set(16, 8, 11);
  TrainOptions<float> opt;
  opt.epochs = 2;
  opt.batch_size = 8;
  auto result = train(net, ds, nullptr, opt);

  const auto path = scratch("ckpt.gnet");
  io::save_checkpoint(path, net, result.state);
  const auto [back, state] = io::load_checkpoint<float>(path);

  CHECK(flatten_parameters(back) == flatten_parameters(net));
  CHECK(state.step == result.state.step);
  CHECK(state.lr == result.state.lr);
  CHECK(state.first_moment == result.state.first_moment);
  CHECK(state.second_moment == result.state.second_moment);

  io::save_checkpoint(scratch("ckpt2.gnet"), net, result.state);
  CHECK(slurp(path) == slurp(scratch("ckpt2.gnet")));

  io::save_network(scratch("plainnet.gnet"), net);
  CHECK_THROWS_AS(io::load_checkpoint<float>(scratch("plainnet.gnet")),
                  std::runtime_error);
}

TEST_CASE("metrics_csv lays out one epoch per row") {
  std::vector<EpochMetrics> ms(2);
  ms[0] = {1, 0.5, 0.75, 0.5};
  ms[1] = {2, 0.25, 0.875, 0.75};
  const auto csv = metrics_csv(ms);
  CHECK(csv == "epoch,train_loss,train_acc,test_acc\n"
               "1,0.5,0.75,0.5\n"
               "2,0.25,0.875,0.75\n");
}

TEST_CASE("train validates its inputs") {
  auto net = small_net();
  init_network(net, 41);
  LabeledDataset empty;
  empty.name = "empty";
  empty.class_count = 2;
  empty.images = FeatureMap<float>(0, 1, 8, 8);
  TrainOptions<float> opt;
  CHECK_THROWS_AS(train(net, empty, nullptr, opt), std::invalid_argument);

  const auto ds = brightness_set(8, 8, 1);
  opt.batch_size = 0;
  CHECK_THROWS_AS(train(net, ds, nullptr, opt), std::invalid_argument);
}
