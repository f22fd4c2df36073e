// Python bindings for the main operations: the derivative basis and its
// unit-shift Lipschitz estimate, image translation, networks (build from
// a JSON description, init, forward, train, certify, shift-benchmark,
// save/load) and the datasets. Images cross the boundary as float32
// numpy arrays of shape (batch, channels, height, width).

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "gaussnet/experiment.hpp"

namespace py = pybind11;
using namespace gaussnet;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

FeatureMap<float> to_map(const Array& a) {
  if (a.ndim() != 4)
    throw std::invalid_argument("expected a (batch, channels, height, width) array");
  FeatureMap<float> m(int(a.shape(0)), int(a.shape(1)), int(a.shape(2)), int(a.shape(3)));
  std::copy(a.data(), a.data() + m.size(), m.data());
  return m;
}

Array to_array(const FeatureMap<float>& m) {
  Array a({m.batch(), m.channels(), m.height(), m.width()});
  std::copy(m.data(), m.data() + m.size(), a.mutable_data());
  return a;
}

Array matrix(const std::vector<float>& values, int rows, int cols) {
  Array a({rows, cols});
  std::copy(values.begin(), values.end(), a.mutable_data());
  return a;
}

Fill fill_from_name(const std::string& name) {
  if (name == "zero") return Fill::Zero;
  if (name == "replicate") return Fill::ReplicateNearest;
  throw std::invalid_argument("fill must be zero or replicate");
}

BasisMode mode_from_name(const std::string& name) {
  if (name == "analytic") return BasisMode::Analytic;
  if (name == "sobel") return BasisMode::SobelOnGaussian;
  throw std::invalid_argument("mode must be analytic or sobel");
}

LabeledDataset make_dataset(const Array& images, const std::vector<int>& labels, int classes) {
  LabeledDataset ds;
  ds.name = "arrays";
  ds.images = to_map(images);
  ds.labels = labels;
  ds.class_count = classes;
  ds.validate();
  return ds;
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["train_acc"] = m.train_acc;
  d["test_acc"] = m.test_acc;
  return d;
}

}  // namespace

PYBIND11_MODULE(_gaussnet, mod) {
  mod.doc() = "Convolution kernels spanned by a Gaussian-derivative basis";

  mod.def(
      "gauss_basis",
      [](double sigma, int support, const std::string& mode) {
        const int s = support > 0 ? support : default_support(sigma);
        const auto basis = build_basis(float(sigma), s, mode_from_name(mode));
        Array a({int(kBasisPlanes), s, s});
        float* out = a.mutable_data();
        for (const auto& plane : basis.planes)
          out = std::copy(plane.v.begin(), plane.v.end(), out);
        return a;
      },
      py::arg("sigma"), py::arg("support") = 0, py::arg("mode") = "analytic",
      "The six derivative-basis planes as a (6, support, support) array.");

  mod.def(
      "lipschitz_estimate",
      [](double sigma, int support, const std::string& mode) {
        const int s = support > 0 ? support : default_support(sigma);
        const auto est = estimate_lipschitz(build_basis(float(sigma), s, mode_from_name(mode)));
        py::dict d;
        d["c_g"] = est.c_g;
        d["basis_sup"] = est.basis_sup;
        d["per_plane_sup"] =
            std::vector<float>(est.per_plane_sup.begin(), est.per_plane_sup.end());
        d["support"] = s;
        return d;
      },
      py::arg("sigma"), py::arg("support") = 0, py::arg("mode") = "analytic",
      "Unit-shift constant c_g and sup norms of the basis.");

  mod.def(
      "translate",
      [](const Array& x, int sx, int sy, const std::string& fill) {
        return to_array(translate(to_map(x), sx, sy, fill_from_name(fill)));
      },
      py::arg("x"), py::arg("sx"), py::arg("sy"), py::arg("fill") = "zero",
      "Shift image content by (sx, sy): out(y, x) = in(y + sy, x + sx).");

  mod.def(
      "subsample",
      [](const Array& x, int d) { return to_array(subsample(to_map(x), d)); },
      py::arg("x"), py::arg("d"), "Stride-d point sub-sampling.");

  mod.def(
      "synth_shapes",
      [](int n, int size, int classes, unsigned seed, float noise) {
        const auto ds = synth_shapes(n, size, classes, seed, noise);
        return py::make_tuple(to_array(ds.images), ds.labels);
      },
      py::arg("n"), py::arg("size") = 32, py::arg("classes") = 4, py::arg("seed") = 9,
      py::arg("noise") = 0.05f,
      "Synthetic shape classification set: (images, labels).");

  mod.def(
      "load_cifar10",
      [](const std::string& path) {
        const auto ds = load_cifar10(path);
        return py::make_tuple(to_array(ds.images), ds.labels);
      },
      py::arg("path"), "One CIFAR-10 binary batch as (images, labels).");

  mod.def(
      "derive_zp",
      [](const Array& images) {
        LabeledDataset ds;
        ds.name = "zp";
        ds.images = to_map(images);
        ds.labels.assign(std::size_t(ds.images.batch()), 0);
        ds.class_count = 1;
        return to_array(derive_zp(ds).images);
      },
      py::arg("images"),
      "Bilinear down-sample 32x32 images to 30x30, zero-pad back to 32x32.");

  py::class_<NetworkSpec<float>>(mod, "Network")
      .def_static(
          "from_json",
          [](const std::string& text) {
            return io::network_from_description<float>(
                detail::normalize_network(io::json::parse(text)));
          },
          py::arg("description"),
          "Build a network from a JSON description (same layout the "
          "container header and experiment configs use).")
      .def_static(
          "load", [](const std::string& path) { return io::load_network<float>(path); },
          py::arg("path"))
      .def("save",
           [](const NetworkSpec<float>& net, const std::string& path) {
             io::save_network(path, net);
           },
           py::arg("path"))
      .def("to_json",
           [](const NetworkSpec<float>& net) { return io::describe_network(net).dump(2); })
      .def("init",
           [](NetworkSpec<float>& net, unsigned seed) {
             init_network(net, seed);
             return &net;
           },
           py::arg("seed") = 1, py::return_value_policy::reference_internal,
           "Fan-in uniform init of kernel weights; zero head, identity affine.")
      .def_property_readonly(
          "parameters",
          [](const NetworkSpec<float>& net) { return count_parameters(net); })
      .def_property_readonly(
          "layer_count", [](const NetworkSpec<float>& net) { return net.layers.size(); })
      .def("forward",
           [](const NetworkSpec<float>& net, const Array& x) {
             const auto r = forward_network(net, to_map(x));
             py::dict d;
             d["features"] = matrix(r.features, r.batch, r.feature_count);
             if (!r.logits.empty()) d["logits"] = matrix(r.logits, r.batch, r.classes);
             d["predictions"] = r.predictions;
             return d;
           },
           py::arg("x"), "Pooled features, logits (with a head) and argmax predictions.")
      .def("certify",
           [](const NetworkSpec<float>& net, const Array& x) {
             const auto cert = certify_bound(net, to_map(x));
             py::list per_layer;
             for (const auto& e : cert.per_layer) {
               py::dict l;
               l["pixels"] = e.pixels;
               l["w_sup"] = e.w_sup;
               l["basis_sup"] = e.basis_sup;
               l["factor"] = e.factor;
               per_layer.append(l);
             }
             py::dict d;
             d["bound"] = cert.bound;
             d["c_g"] = cert.c_g;
             d["input_sup"] = cert.input_sup;
             d["per_layer"] = per_layer;
             return d;
           },
           py::arg("x"),
           "Certified sup-norm change of the pooled features per unit shift.")
      .def("train",
           [](NetworkSpec<float>& net, const Array& images, const std::vector<int>& labels,
              int epochs, int batch_size, float lr, unsigned seed, bool shuffle,
              bool contractive, float max_factor) {
             const auto ds = make_dataset(images, labels, net.classes);
             TrainOptions<float> opt;
             opt.epochs = epochs;
             opt.batch_size = batch_size;
             opt.lr = lr;
             opt.seed = seed;
             opt.shuffle = shuffle;
             opt.contractive = contractive;
             opt.max_factor = max_factor;
             const auto result = train(net, ds, nullptr, opt);
             py::list metrics;
             for (const auto& m : result.metrics) metrics.append(metrics_dict(m));
             return metrics;
           },
           py::arg("images"), py::arg("labels"), py::arg("epochs") = 10,
           py::arg("batch_size") = 32, py::arg("lr") = 1e-3f, py::arg("seed") = 1,
           py::arg("shuffle") = true, py::arg("contractive") = false,
           py::arg("max_factor") = 0.99f,
           "ADAM training on (images, labels); returns per-epoch metrics.")
      .def("shift_report",
           [](const NetworkSpec<float>& net, const Array& images,
              const std::vector<int>& labels, const std::string& fill) {
             const auto ds = make_dataset(images, labels, net.classes);
             ShiftedTestSet set;
             set.base = &ds;
             set.fill = fill_from_name(fill);
             const auto rep = shift_report(net, set);
             py::dict d;
             d["delta1"] = rep.delta1;
             d["delta2"] = rep.delta2;
             d["test_error"] = rep.test_error;
             d["per_shift_change_rate"] = std::vector<double>(
                 rep.per_shift_change_rate.begin(), rep.per_shift_change_rate.end());
             return d;
           },
           py::arg("images"), py::arg("labels"), py::arg("fill") = "replicate",
           "Prediction-change rates Delta1/Delta2 under the eight unit shifts.");
}
