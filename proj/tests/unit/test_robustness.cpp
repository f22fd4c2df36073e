#include <doctest.h>

#include <cmath>
#include <random>

#include "gaussnet/robustness.hpp"

using namespace gaussnet;

namespace {

FeatureMap<float> random_map(int b, int c, int h, int w, unsigned seed) {
  FeatureMap<float> m(b, c, h, w);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.f, 1.f);
  for (auto& v : m.values()) v = dist(rng);
  return m;
}

LayerSpec<float> gauss_layer(int in, int out, float sigma, int d, unsigned seed,
                             LayerKind kind = LayerKind::Gauss) {
  LayerSpec<float> spec;
  spec.kind = kind;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.sigma = sigma;
  spec.d = d;
  spec.weights.resize(spec.weight_count());
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(-0.5f, 0.5f);
  for (auto& w : spec.weights) w = dist(rng);
  return spec;
}

LabeledDataset tiny_set(int n, int h, int w, unsigned seed, int classes = 2) {
  LabeledDataset ds;
  ds.name = "tiny";
  ds.class_count = classes;
  ds.images = random_map(n, 1, h, w, seed);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) ds.labels[i] = i % classes;
  return ds;
}

// Quantized-mean classifier: a deterministic image function whose
// predictions flip readily under small shifts with replicate fill.
int mean_bucket(const FeatureMap<float>& m, int b) {
  double sum = 0;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) sum += m(b, 0, y, x);
  return int(std::floor(sum * 50.0)) % 2 == 0 ? 0 : 1;
}

std::vector<int> mean_bucket_batch(const FeatureMap<float>& m) {
  std::vector<int> out(m.batch());
  for (int b = 0; b < m.batch(); ++b) out[b] = mean_bucket(m, b);
  return out;
}

}  // namespace

TEST_CASE("shift_report matches an exhaustive per-image oracle") {
  const auto ds = tiny_set(10, 6, 6, 3);
  ShiftedTestSet set;
  set.base = &ds;

  const auto rep = shift_report(mean_bucket_batch, set);

  // Independent double loop: translate one image at a time and compare.
  int pair_changes = 0, any_changes = 0, wrong = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const auto img = get_example(ds, i);
    const int base = mean_bucket(img, 0);
    wrong += base != ds.labels[i];
    bool any = false;
    for (const auto [sx, sy] : kEightShifts) {
      const int moved = mean_bucket(translate(img, sx, sy, Fill::ReplicateNearest), 0);
      if (moved != base) {
        ++pair_changes;
        any = true;
      }
    }
    any_changes += any;
  }
  CHECK(rep.delta1 == doctest::Approx(pair_changes / 80.0).epsilon(1e-12));
  CHECK(rep.delta2 == doctest::Approx(any_changes / 10.0).epsilon(1e-12));
  CHECK(rep.test_error == doctest::Approx(wrong / 10.0).epsilon(1e-12));
  CHECK(rep.delta1 <= rep.delta2);
  CHECK(rep.delta2 <= 1.0);

  double mean_rate = 0;
  for (double r : rep.per_shift_change_rate) mean_rate += r;
  CHECK(rep.delta1 == doctest::Approx(mean_rate / 8.0).epsilon(1e-12));

  CHECK(delta1(mean_bucket_batch, set) == rep.delta1);
  CHECK(delta2(mean_bucket_batch, set) == rep.delta2);
}

TEST_CASE("a constant classifier never changes class") {
  const auto ds = tiny_set(6, 5, 5, 5);
  ShiftedTestSet set;
  set.base = &ds;
  auto constant = [](const FeatureMap<float>& m) {
    return std::vector<int>(m.batch(), 1);
  };
  const auto rep = shift_report(constant, set);
  CHECK(rep.delta1 == 0.0);
  CHECK(rep.delta2 == 0.0);
  for (double r : rep.per_shift_change_rate) CHECK(r == 0.0);
}

TEST_CASE("one changing shift per image gives delta1 = 1/8, delta2 = 1") {
  // Probe pixel (2, 2); each image is bright at the probe and at seven of
  // the eight positions a unit shift drags onto it, dark at the eighth.
  LabeledDataset ds;
  ds.name = "probe";
  ds.class_count = 2;
  ds.images = FeatureMap<float>(10, 1, 7, 7);
  ds.labels.assign(10, 1);
  for (int i = 0; i < 10; ++i) {
    ds.images(i, 0, 2, 2) = 1.f;
    const auto skip = kEightShifts[i % 8];
    for (const auto [sx, sy] : kEightShifts)
      if (std::pair{sx, sy} != skip) ds.images(i, 0, 2 + sy, 2 + sx) = 1.f;
  }
  ShiftedTestSet set;
  set.base = &ds;
  auto probe = [](const FeatureMap<float>& m) {
    std::vector<int> out(m.batch());
    for (int b = 0; b < m.batch(); ++b) out[b] = m(b, 0, 2, 2) > 0.5f ? 1 : 0;
    return out;
  };
  const auto rep = shift_report(probe, set);
  CHECK(rep.delta1 == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
  CHECK(rep.delta2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.test_error == 0.0);
}

TEST_CASE("network shift_report agrees with the generic overload") {
  NetworkSpec<float> net;
  net.layers.push_back(gauss_layer(1, 3, 0.8f, 2, 11, LayerKind::GaussSub));
  net.classes = 3;
  net.head_weights.resize(9);
  net.head_bias.resize(3);
  init_network(net, 13);
  std::mt19937 rng(17);
  std::uniform_real_distribution<float> dist(-1.f, 1.f);
  for (auto& w : net.head_weights) w = dist(rng);

  const auto ds = tiny_set(12, 9, 9, 19, 3);
  ShiftedTestSet set;
  set.base = &ds;
  const auto a = shift_report(net, set);
  const auto b = shift_report(
      [&](const FeatureMap<float>& m) { return classify(net, m, 5); }, set);
  CHECK(a.delta1 == b.delta1);
  CHECK(a.delta2 == b.delta2);
  CHECK(a.test_error == b.test_error);
}

TEST_CASE("ShiftedTestSet validation") {
  ShiftedTestSet set;
  CHECK_THROWS_AS(set.validate(), std::invalid_argument);

  const auto ds = tiny_set(3, 5, 5, 23);
  set.base = &ds;
  set.validate();

  auto zeroed = set;
  zeroed.shifts[2] = {0, 0};
  CHECK_THROWS_AS(zeroed.validate(), std::invalid_argument);

  auto duped = set;
  duped.shifts[1] = duped.shifts[6];
  CHECK_THROWS_AS(duped.validate(), std::invalid_argument);
}

TEST_CASE("interior_ensemble zeroes the border and fills the interior") {
  const auto e = interior_ensemble<float>(3, 2, 10, 8, 2, 29);
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 8; ++x) {
          const bool border = y < 2 || y >= 8 || x < 2 || x >= 6;
          if (border) CHECK(e(b, c, y, x) == 0.f);
        }
  double sum = 0;
  for (float v : e.values()) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
    sum += v;
  }
  CHECK(sum > 0.0);
  CHECK_THROWS_AS(interior_ensemble<float>(1, 1, 4, 4, 2, 1), std::invalid_argument);
}

TEST_CASE("certify_insensitivity reports zero violations for gauss stacks") {
  NetworkSpec<float> net;
  net.layers.push_back(gauss_layer(1, 3, 0.9f, 2, 31, LayerKind::GaussSub));
  net.layers.push_back(gauss_layer(3, 2, 0.7f, 2, 37, LayerKind::GaussSub));
  materialize_affine(net);

  const auto inputs = interior_ensemble<float>(10, 1, 16, 16, 2, 41);
  const auto margins = certify_insensitivity(net, inputs, 2);
  REQUIRE(margins.size() == 10u * 24u);  // 5x5 grid minus the zero shift
  CHECK(count_violations(margins) == 0);
  for (const auto& m : margins) {
    CHECK(m.theoretical > 0.0);
    const int mag = std::max(std::abs(m.sx), std::abs(m.sy));
    CHECK((mag == 1 || mag == 2));
  }
}

TEST_CASE("certify_insensitivity rejects bad inputs") {
  NetworkSpec<float> net;
  net.layers.push_back(gauss_layer(1, 2, 0.8f, 2, 43, LayerKind::GaussSub));
  const auto good = interior_ensemble<float>(2, 1, 12, 12, 1, 47);
  CHECK_THROWS_AS(certify_insensitivity(net, good, 0), std::invalid_argument);

  auto bad = good;
  bad(1, 0, 0, 3) = 0.5f;  // mass on the border
  CHECK_THROWS_AS(certify_insensitivity(net, bad, 1), std::invalid_argument);

  NetworkSpec<float> pix;
  LayerSpec<float> p;
  p.kind = LayerKind::PixelSub;
  p.in_channels = 1;
  p.out_channels = 1;
  p.d = 2;
  p.weights.resize(9);
  pix.layers.push_back(p);
  CHECK_THROWS_AS(certify_insensitivity(pix, good, 1), std::invalid_argument);
}

TEST_CASE("shift_sensitivity of a zero input is zero") {
  NetworkSpec<float> net;
  net.layers.push_back(gauss_layer(1, 2, 1.f, 2, 53, LayerKind::GaussSub));
  materialize_affine(net);
  const FeatureMap<float> zeros(1, 1, 12, 12);
  CHECK(shift_sensitivity(net, zeros) == 0.0);
}

TEST_CASE("alternating columns flip under a stride-2 pixel layer") {
  NetworkSpec<float> pixel_net;
  LayerSpec<float> layer;
  layer.kind = LayerKind::PixelSub;
  layer.in_channels = 1;
  layer.out_channels = 1;
  layer.d = 2;
  layer.weights.resize(9);
  pixel_net.layers.push_back(layer);
  set_delta_kernels(pixel_net.layers[0]);
  materialize_affine(pixel_net);

  const auto witness = alternating_columns<float>(1, 16, 16);
  const double pixel_emp = shift_sensitivity(pixel_net, witness);
  CHECK(pixel_emp >= 0.5);

  // The matched gauss net stays inside its certificate on the same
  // witness, and that certificate is far below the pixel sensitivity.
  const auto gauss = matched_gauss_net(pixel_net, 1.f, 16, 16);
  const auto cert = certify_bound(gauss, witness);
  CHECK(double(cert.bound) > 0.0);
  CHECK(shift_sensitivity(gauss, witness) <= double(cert.bound));
  CHECK(pixel_emp >= 2.0 * double(cert.bound));

  // The random search starts from exactly this witness.
  CHECK(negative_control(pixel_net, 16, 16, 1) == pixel_emp);
  CHECK(negative_control(pixel_net, 16, 16, 6) >= pixel_emp);

  NetworkSpec<float> nosub;
  nosub.layers.push_back(gauss_layer(1, 1, 1.f, 1, 59));
  CHECK_THROWS_AS(negative_control(nosub, 16, 16, 3), std::invalid_argument);
  CHECK_THROWS_AS(negative_control(pixel_net, 16, 16, 0), std::invalid_argument);
}

TEST_CASE("witness sensitivity does not grow with sigma") {
  const auto witness = alternating_columns<float>(1, 14, 14);
  double prev = std::numeric_limits<double>::max();
  for (const float sigma : {0.3f, 0.76f, 1.3f}) {
    NetworkSpec<float> net;
    LayerSpec<float> layer;
    layer.kind = LayerKind::GaussSub;
    layer.in_channels = 1;
    layer.out_channels = 1;
    layer.sigma = sigma;
    layer.d = 2;
    layer.weights.assign(kBasisPlanes, 0.f);
    layer.weights[0] = 1.f;
    net.layers.push_back(layer);
    materialize_affine(net);

    const double worst = shift_sensitivity(net, witness);
    CHECK(worst <= prev * (1.0 + 1e-9));
    prev = worst;
  }
}

TEST_CASE("sigma_sweep echoes sigma and trains one net per value") {
  NetworkSpec<float> tmpl;
  tmpl.layers.push_back(gauss_layer(1, 3, 1.f, 2, 67, LayerKind::GaussSub));
  tmpl.classes = 2;
  tmpl.head_weights.resize(6);
  tmpl.head_bias.resize(2);

  const auto train_set = tiny_set(24, 10, 10, 71);
  const auto test_set = tiny_set(12, 10, 10, 73);
  TrainOptions<float> opt;
  opt.epochs = 2;
  opt.batch_size = 8;

  const std::vector<float> single = {0.76f};
  const auto one = sigma_sweep(tmpl, single, train_set, test_set, opt);
  REQUIRE(one.size() == 1);
  CHECK(one[0].sigma == doctest::Approx(0.76).epsilon(1e-7));
  CHECK(one[0].report.delta1 <= one[0].report.delta2);

  const std::vector<float> grid(kSweepSigmas.begin(), kSweepSigmas.end());
  const auto entries = sigma_sweep(tmpl, grid, train_set, test_set, opt);
  REQUIRE(entries.size() == 4);
  for (std::size_t i = 0; i < entries.size(); ++i)
    CHECK(entries[i].sigma == doctest::Approx(double(grid[i])).epsilon(1e-7));

  CHECK_THROWS_AS(sigma_sweep(tmpl, std::vector<float>{}, train_set, test_set, opt),
                  std::invalid_argument);
}

TEST_CASE("count_violations counts strict excesses") {
  std::vector<BoundMargin> ms(3);
  ms[0] = {0, 1, 0, 0.5, 1.0};
  ms[1] = {1, 0, 1, 1.0, 1.0};
  ms[2] = {2, -1, 0, 1.5, 1.0};
  CHECK(count_violations(ms) == 1);
}
