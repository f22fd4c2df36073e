#pragma once

// Batch experiment front end shared by the command-line tool and the
// tests. One JSON document describes the network, the dataset and the
// optimizer; the command functions resolve it, run, and write their
// artifacts atomically into the output directory. Reruns with identical
// config and seed overwrite every file with identical bytes, which is
// why wall-clock phase timings go to the log stream and never into the
// artifacts themselves.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gaussnet/dataset.hpp"
#include "gaussnet/optimizer.hpp"
#include "gaussnet/robustness.hpp"
#include "gaussnet/serialize.hpp"
#include "gaussnet/train.hpp"

namespace gaussnet {

/// Parsed form of the single config document:
///
///   {
///     "network":  { ... same layout the container header uses ... },
///     "dataset":  {"name": "shapes" | "cifar10" | "cifar10-zp", ...},
///     "seed": 1, "epochs": 10, "batch_size": 32, "lr": 0.001,
///     "shuffle": true, "contractive": false, "max_factor": 0.99,
///     "sigmas": [0.3, 0.76, 1.3, 2.3],
///     "checkpoint": "runs/a/checkpoint.gnet",
///     "benchmark": {"fill": "replicate"},
///     "certify": {"inputs": 100, "max_shift": 1, "margin": 2, "seed": 5},
///     "out": "runs/a", "dataset_root": "data"
///   }
///
/// Only the sections a verb consumes need to be present. Every field
/// has the default shown by the tool's --help.
struct ExperimentConfig {
  io::json raw;      // the parsed document, echoed into reports
  io::json network;  // network description (validated on parse if present)
  io::json dataset;  // dataset descriptor
  unsigned seed = 1;
  TrainOptions<float> train;
  std::vector<float> sigmas{kSweepSigmas.begin(), kSweepSigmas.end()};
  std::string checkpoint;
  std::string out = "out";
  std::string dataset_root = "data";
  Fill benchmark_fill = Fill::ReplicateNearest;
  int certify_inputs = 100;
  int certify_max_shift = 1;
  int certify_margin = 2;
  unsigned certify_seed = 5;
};

namespace detail {

/// Layer descriptions in configs may omit sigma/d (pixel layers have no
/// sigma); the container reader requires them, so fill the defaults in.
inline io::json normalize_network(io::json desc) {
  if (!desc.contains("layers"))
    throw std::invalid_argument("config: network needs a layers array");
  for (auto& layer : desc.at("layers")) {
    if (!layer.contains("sigma")) layer["sigma"] = 1.0;
    if (!layer.contains("d")) layer["d"] = 1;
  }
  if (!desc.contains("pooling")) desc["pooling"] = "global-average";
  if (!desc.contains("window_sigma")) desc["window_sigma"] = 0.0;
  if (!desc.contains("classes")) desc["classes"] = 0;
  return desc;
}

}  // namespace detail

inline ExperimentConfig parse_config(const io::json& doc) {
  if (!doc.is_object()) throw std::invalid_argument("config: document must be a JSON object");

  ExperimentConfig cfg;
  cfg.raw = doc;
  if (doc.contains("network")) {
    cfg.network = detail::normalize_network(doc.at("network"));
    io::network_from_description<float>(cfg.network).validate();
  }
  if (doc.contains("dataset")) {
    cfg.dataset = doc.at("dataset");
    const std::string name = cfg.dataset.value("name", "");
    if (name != "shapes" && name != "cifar10" && name != "cifar10-zp")
      throw std::invalid_argument("config: dataset.name must be shapes, cifar10 or cifar10-zp");
  }

  cfg.seed = doc.value("seed", cfg.seed);
  cfg.train.seed = cfg.seed;
  cfg.train.epochs = doc.value("epochs", cfg.train.epochs);
  cfg.train.batch_size = doc.value("batch_size", cfg.train.batch_size);
  cfg.train.lr = doc.value("lr", cfg.train.lr);
  cfg.train.shuffle = doc.value("shuffle", cfg.train.shuffle);
  cfg.train.contractive = doc.value("contractive", cfg.train.contractive);
  cfg.train.max_factor = doc.value("max_factor", cfg.train.max_factor);
  if (cfg.train.epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
  if (cfg.train.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (!(cfg.train.lr > 0)) throw std::invalid_argument("config: lr must be > 0");

  if (doc.contains("sigmas")) {
    cfg.sigmas = doc.at("sigmas").get<std::vector<float>>();
    if (cfg.sigmas.empty()) throw std::invalid_argument("config: sigmas must be non-empty");
    for (float s : cfg.sigmas)
      if (!(s > 0)) throw std::invalid_argument("config: sigmas must be > 0");
  }

  cfg.checkpoint = doc.value("checkpoint", cfg.checkpoint);
  cfg.out = doc.value("out", cfg.out);
  cfg.dataset_root = doc.value("dataset_root", cfg.dataset_root);

  if (doc.contains("benchmark")) {
    const std::string fill = doc.at("benchmark").value("fill", "replicate");
    if (fill == "replicate") cfg.benchmark_fill = Fill::ReplicateNearest;
    else if (fill == "zero") cfg.benchmark_fill = Fill::Zero;
    else throw std::invalid_argument("config: benchmark.fill must be replicate or zero");
  }
  if (doc.contains("certify")) {
    const auto& c = doc.at("certify");
    cfg.certify_inputs = c.value("inputs", cfg.certify_inputs);
    cfg.certify_max_shift = c.value("max_shift", cfg.certify_max_shift);
    cfg.certify_margin = c.value("margin", cfg.certify_margin);
    cfg.certify_seed = c.value("seed", cfg.certify_seed);
    if (cfg.certify_inputs < 1) throw std::invalid_argument("config: certify.inputs must be >= 1");
    if (cfg.certify_max_shift < 1)
      throw std::invalid_argument("config: certify.max_shift must be >= 1");
    if (cfg.certify_margin < cfg.certify_max_shift)
      throw std::invalid_argument("config: certify.margin must be >= certify.max_shift");
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  io::json doc;
  try {
    doc = io::json::parse(in);
  } catch (const io::json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Dataset resolution

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

namespace detail {

inline LabeledDataset load_cifar10_split(const std::filesystem::path& dir, bool train) {
  namespace fs = std::filesystem;
  if (!train) {
    const fs::path f = dir / "test_batch.bin";
    if (!fs::exists(f)) throw std::runtime_error("missing " + f.string());
    return load_cifar10(f.string());
  }
  LabeledDataset out;
  bool first = true;
  for (int i = 1; i <= 5; ++i) {
    const fs::path f = dir / ("data_batch_" + std::to_string(i) + ".bin");
    if (!fs::exists(f)) continue;
    auto batch = load_cifar10(f.string());
    out = first ? std::move(batch) : concat_datasets(out, batch);
    first = false;
  }
  if (first) throw std::runtime_error("no data_batch_*.bin under " + dir.string());
  return out;
}

}  // namespace detail

/// Builds the train/test pair a config's dataset section names. CIFAR-10
/// binaries are looked up under root (or root/cifar-10-batches-bin);
/// shapes are synthesized on the spot and need no files.
inline DatasetPair resolve_dataset(const io::json& ds, const std::string& root) {
  if (!ds.is_object() || !ds.contains("name"))
    throw std::invalid_argument("config: this command needs a dataset section");
  const std::string name = ds.at("name");

  DatasetPair pair;
  if (name == "shapes") {
    const int n_train = ds.value("n_train", 2000);
    const int n_test = ds.value("n_test", 500);
    const int size = ds.value("size", 32);
    const int classes = ds.value("classes", 4);
    const unsigned seed = ds.value("seed", 9u);
    const float noise = ds.value("noise", 0.05f);
    pair.train = synth_shapes(n_train, size, classes, seed, noise);
    pair.test = synth_shapes(n_test, size, classes, seed + 1, noise);
    return pair;
  }
  if (name == "cifar10" || name == "cifar10-zp") {
    namespace fs = std::filesystem;
    fs::path dir = root;
    if (fs::exists(dir / "cifar-10-batches-bin")) dir /= "cifar-10-batches-bin";
    pair.train = detail::load_cifar10_split(dir, true);
    pair.test = detail::load_cifar10_split(dir, false);
    if (name == "cifar10-zp") {
      pair.train = derive_zp(pair.train);
      pair.test = derive_zp(pair.test);
    }
    return pair;
  }
  throw std::invalid_argument("config: unknown dataset " + name);
}

// ---------------------------------------------------------------------------
// Command implementations

namespace detail {

/// Prints one "[time] name: X s" line per completed phase.
class PhaseClock {
 public:
  explicit PhaseClock(std::ostream& log) : log_(log) {}
  void lap(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - mark_).count();
    std::ostringstream line;
    line.precision(3);
    line << "[time] " << name << ": " << std::fixed << s << " s\n";
    log_ << line.str();
    mark_ = now;
  }

 private:
  std::ostream& log_;
  std::chrono::steady_clock::time_point mark_ = std::chrono::steady_clock::now();
};

inline std::string join(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline void write_report(const std::string& path, const io::json& report) {
  io::atomic_write_text(path, report.dump(2) + "\n");
}

inline io::json dataset_summary(const io::json& ds, const DatasetPair& data) {
  return {{"name", ds.at("name")},
          {"train_examples", data.train.size()},
          {"test_examples", data.test.size()},
          {"classes", data.test.class_count}};
}

inline std::ostringstream csv_stream(const std::string& header) {
  std::ostringstream out;
  out << header << '\n';
  out.precision(9);
  return out;
}

}  // namespace detail

/// Trains the configured network and writes checkpoint.gnet, metrics.csv
/// and train_report.json. epochs = 0 checkpoints the initial net.
inline int cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.network.is_null()) throw std::invalid_argument("train: config needs a network");
  std::filesystem::create_directories(cfg.out);
  detail::PhaseClock clock(log);

  const auto data = resolve_dataset(cfg.dataset, cfg.dataset_root);
  clock.lap("data");

  auto net = io::network_from_description<float>(cfg.network);
  init_network(net, cfg.seed);
  auto result = train(net, data.train, &data.test, cfg.train);
  clock.lap("train");

  io::save_checkpoint(detail::join(cfg.out, "checkpoint.gnet"), net, result.state);
  io::atomic_write_text(detail::join(cfg.out, "metrics.csv"), metrics_csv(result.metrics));

  io::json report{{"command", "train"},
                  {"seed", cfg.seed},
                  {"epochs", cfg.train.epochs},
                  {"dataset", detail::dataset_summary(cfg.dataset, data)},
                  {"parameters", count_parameters(net)},
                  {"artifacts", {{"checkpoint", "checkpoint.gnet"}, {"metrics", "metrics.csv"}}}};
  if (!result.metrics.empty()) {
    const auto& last = result.metrics.back();
    report["final"] = {{"train_loss", last.train_loss},
                       {"train_acc", last.train_acc},
                       {"test_acc", last.test_acc}};
    log << "final train_acc " << last.train_acc << ", test_acc " << last.test_acc << "\n";
  }
  detail::write_report(detail::join(cfg.out, "train_report.json"), report);
  clock.lap("write");
  return 0;
}

/// Benchmark mode: shifted-test-set disagreement rates (replicate fill by
/// default). Certify mode: per-input bound margins on an interior-supported
/// ensemble with zero fill; exit status reports violations. Pixel nets are
/// refused in certify mode because no shift bound exists for them.
inline int cmd_robustness(const ExperimentConfig& cfg, const std::string& mode,
                          std::ostream& log) {
  if (mode != "benchmark" && mode != "certify")
    throw std::invalid_argument("robustness: mode must be benchmark or certify");
  if (cfg.checkpoint.empty())
    throw std::invalid_argument("robustness: config needs a checkpoint path");
  std::filesystem::create_directories(cfg.out);
  detail::PhaseClock clock(log);

  const auto net = io::load_network<float>(cfg.checkpoint);
  const auto data = resolve_dataset(cfg.dataset, cfg.dataset_root);
  clock.lap("data");

  if (mode == "benchmark") {
    ShiftedTestSet set;
    set.base = &data.test;
    set.fill = cfg.benchmark_fill;
    const auto rep = shift_report(net, set);
    clock.lap("benchmark");

    io::json shifts = io::json::array();
    auto csv = detail::csv_stream("sx,sy,change_rate");
    for (std::size_t i = 0; i < set.shifts.size(); ++i) {
      const auto [sx, sy] = set.shifts[i];
      shifts.push_back({{"sx", sx}, {"sy", sy}, {"change_rate", rep.per_shift_change_rate[i]}});
      csv << sx << ',' << sy << ',' << rep.per_shift_change_rate[i] << '\n';
    }
    io::json report{{"command", "robustness"},
                    {"mode", "benchmark"},
                    {"checkpoint", cfg.checkpoint},
                    {"dataset", detail::dataset_summary(cfg.dataset, data)},
                    {"fill", cfg.benchmark_fill == Fill::Zero ? "zero" : "replicate"},
                    {"delta1", rep.delta1},
                    {"delta2", rep.delta2},
                    {"test_error", rep.test_error},
                    {"per_shift", shifts}};
    detail::write_report(detail::join(cfg.out, "robustness_report.json"), report);
    io::atomic_write_text(detail::join(cfg.out, "shift_rates.csv"), csv.str());
    clock.lap("write");
    log << "delta1 " << rep.delta1 << ", delta2 " << rep.delta2 << "\n";
    return 0;
  }

  const auto ensemble = interior_ensemble<float>(
      cfg.certify_inputs, data.test.images.channels(), data.test.images.height(),
      data.test.images.width(), cfg.certify_margin, cfg.certify_seed);
  const auto margins = certify_insensitivity(net, ensemble, cfg.certify_max_shift);
  const int violations = count_violations(margins);
  clock.lap("certify");

  double worst_ratio = 0;
  auto csv = detail::csv_stream("input,sx,sy,empirical,theoretical");
  for (const auto& m : margins) {
    if (m.theoretical > 0) worst_ratio = std::max(worst_ratio, m.empirical / m.theoretical);
    csv << m.input << ',' << m.sx << ',' << m.sy << ',' << m.empirical << ','
        << m.theoretical << '\n';
  }
  io::json report{{"command", "robustness"},
                  {"mode", "certify"},
                  {"checkpoint", cfg.checkpoint},
                  {"inputs", cfg.certify_inputs},
                  {"max_shift", cfg.certify_max_shift},
                  {"margin_count", margins.size()},
                  {"violations", violations},
                  {"worst_ratio", worst_ratio}};
  detail::write_report(detail::join(cfg.out, "certify_report.json"), report);
  io::atomic_write_text(detail::join(cfg.out, "bound_margins.csv"), csv.str());
  clock.lap("write");
  log << "violations " << violations << " over " << margins.size() << " margins\n";
  return violations == 0 ? 0 : 1;
}

/// Trains one net per sigma and benchmarks each on the shifted test set;
/// writes sweep_metrics.csv (one row per sigma and epoch), a per-sigma
/// sweep_summary.csv and sweep_report.json.
inline int cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.network.is_null()) throw std::invalid_argument("sweep: config needs a network");
  std::filesystem::create_directories(cfg.out);
  detail::PhaseClock clock(log);

  const auto data = resolve_dataset(cfg.dataset, cfg.dataset_root);
  clock.lap("data");

  const auto tmpl = io::network_from_description<float>(cfg.network);
  const auto entries = sigma_sweep(tmpl, cfg.sigmas, data.train, data.test, cfg.train, cfg.seed);
  clock.lap("sweep");

  auto metrics = detail::csv_stream("sigma,epoch,train_loss,train_acc,test_acc");
  auto summary = detail::csv_stream("sigma,delta1,delta2,test_error");
  io::json rows = io::json::array();
  for (const auto& e : entries) {
    for (const auto& m : e.metrics)
      metrics << e.sigma << ',' << m.epoch << ',' << m.train_loss << ',' << m.train_acc << ','
              << m.test_acc << '\n';
    summary << e.sigma << ',' << e.report.delta1 << ',' << e.report.delta2 << ','
            << e.report.test_error << '\n';
    rows.push_back({{"sigma", e.sigma},
                    {"delta1", e.report.delta1},
                    {"delta2", e.report.delta2},
                    {"test_error", e.report.test_error},
                    {"final_test_acc", e.metrics.empty() ? 0.0 : e.metrics.back().test_acc}});
    log << "sigma " << e.sigma << ": delta1 " << e.report.delta1 << ", delta2 "
        << e.report.delta2 << "\n";
  }
  io::json report{{"command", "sweep"},
                  {"seed", cfg.seed},
                  {"epochs", cfg.train.epochs},
                  {"dataset", detail::dataset_summary(cfg.dataset, data)},
                  {"entries", rows}};
  io::atomic_write_text(detail::join(cfg.out, "sweep_metrics.csv"), metrics.str());
  io::atomic_write_text(detail::join(cfg.out, "sweep_summary.csv"), summary.str());
  detail::write_report(detail::join(cfg.out, "sweep_report.json"), report);
  clock.lap("write");
  return 0;
}

/// Dumps the unit-shift Lipschitz estimate of each sigma-bearing layer's
/// basis (or of the config's explicit "basis" section) to basis_report.json.
inline int cmd_certify_basis(const ExperimentConfig& cfg, std::ostream& log) {
  std::filesystem::create_directories(cfg.out);

  io::json entries = io::json::array();
  auto add = [&](int layer, double sigma, int support, BasisMode mode) {
    const auto est = estimate_lipschitz(build_basis(float(sigma), support, mode));
    io::json planes = io::json::array();
    for (float p : est.per_plane_sup) planes.push_back(p);
    entries.push_back({{"layer", layer},
                       {"sigma", sigma},
                       {"support", support},
                       {"mode", mode == BasisMode::Analytic ? "analytic" : "sobel"},
                       {"c_g", est.c_g},
                       {"basis_sup", est.basis_sup},
                       {"per_plane_sup", planes}});
    log << (layer < 0 ? std::string("basis") : "layer " + std::to_string(layer)) << ": sigma "
        << sigma << ", support " << support << ", c_g " << est.c_g << ", basis_sup "
        << est.basis_sup << "\n";
  };

  if (cfg.raw.contains("basis")) {
    const auto& b = cfg.raw.at("basis");
    const double sigma = b.at("sigma");
    const int support = b.value("support", 0);
    const auto mode =
        b.value("mode", "analytic") == std::string("sobel") ? BasisMode::SobelOnGaussian
                                                            : BasisMode::Analytic;
    add(-1, sigma, support > 0 ? support : default_support(sigma), mode);
  } else if (!cfg.network.is_null()) {
    const auto net = io::network_from_description<float>(cfg.network);
    for (std::size_t i = 0; i < net.layers.size(); ++i)
      if (net.layers[i].uses_sigma())
        add(int(i), net.layers[i].sigma, net.layers[i].basis_support(), net.layers[i].basis_mode);
  } else {
    throw std::invalid_argument("certify-basis: config needs a basis section or a network");
  }

  detail::write_report(detail::join(cfg.out, "basis_report.json"),
                       io::json{{"command", "certify-basis"}, {"entries", entries}});
  return 0;
}

/// Per-layer parameter counts next to the 3x3 pixel layer of identical
/// channel counts, plus totals; writes info.json.
inline int cmd_info(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.network.is_null()) throw std::invalid_argument("info: config needs a network");
  std::filesystem::create_directories(cfg.out);
  const auto net = io::network_from_description<float>(cfg.network);

  io::json layers = io::json::array();
  std::size_t conv_total = 0, pixel_total = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const std::size_t affine = l.has_affine ? 2 * std::size_t(l.out_channels) : 0;
    const std::size_t pixel3x3 = 9 * std::size_t(l.out_channels) * l.in_channels + affine;
    conv_total += l.parameter_count();
    pixel_total += pixel3x3;
    layers.push_back({{"index", i},
                      {"kind", kind_name(l.kind)},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"d", l.d},
                      {"parameters", l.parameter_count()},
                      {"pixel3x3_parameters", pixel3x3}});
    log << "layer " << i << " (" << kind_name(l.kind) << "): " << l.parameter_count()
        << " parameters (3x3 pixel layer: " << pixel3x3 << ")\n";
  }
  const std::size_t head =
      net.classes > 0 ? std::size_t(net.classes) * net.feature_channels() + net.classes : 0;

  io::json report{{"command", "info"},
                  {"layers", layers},
                  {"layer_parameters", conv_total},
                  {"pixel3x3_layer_parameters", pixel_total},
                  {"head_parameters", head},
                  {"total_parameters", count_parameters(net)}};
  detail::write_report(detail::join(cfg.out, "info.json"), report);
  log << "total " << count_parameters(net) << " parameters (head " << head << ")\n";
  return 0;
}

}  // namespace gaussnet
