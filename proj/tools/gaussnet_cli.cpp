// gaussnet: batch experiment runner. One verb per process, one JSON
// config per run; artifacts land in the config's output directory and
// reruns with identical config and seed overwrite them byte-for-byte.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gaussnet/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{
      "GaussNet experiment runner: every verb reads one JSON config and "
      "writes its artifacts atomically into the output directory."};
  app.require_subcommand(1);
  app.footer(
      "Config keys and defaults:\n"
      "  network      layers: [{kind gauss|gauss-sub|gauss-residual|pixel|\n"
      "               pixel-sub|pixel-antialias-sub, in_channels, out_channels,\n"
      "               sigma 1.0, d 1, support 0 (0 = 2*ceil(3*sigma)+1),\n"
      "               pixel_side 3, basis_mode analytic|sobel,\n"
      "               sub_mode point|avgpool2, has_affine true}],\n"
      "               pooling global-average|gauss-windowed-average,\n"
      "               window_sigma, classes\n"
      "  dataset      name shapes|cifar10|cifar10-zp; shapes takes n_train 2000,\n"
      "               n_test 500, size 32, classes 4, seed 9, noise 0.05\n"
      "  seed 1       init + shuffle seed\n"
      "  epochs 10, batch_size 32, lr 0.001, shuffle true\n"
      "  contractive false, max_factor 0.99\n"
      "  sigmas [0.3, 0.76, 1.3, 2.3]    sweep grid\n"
      "  checkpoint   container the robustness verb loads\n"
      "  benchmark    fill replicate|zero (default replicate)\n"
      "  certify      inputs 100, max_shift 1, margin 2 (zero border width), seed 5\n"
      "  out \"out\", dataset_root \"data\"\n");

  std::string config, mode = "benchmark", out, root;
  long long seed = -1;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON experiment config")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "override the output directory");
    sub->add_option("--dataset-root", root, "directory holding the CIFAR-10 binaries");
    return sub;
  };

  add_common(app.add_subcommand("train", "train the configured network, write checkpoint.gnet "
                                         "and per-epoch metrics.csv"));
  auto* rob = add_common(
      app.add_subcommand("robustness", "evaluate a checkpoint under test-set shifts"));
  rob->add_option("--mode", mode, "benchmark (delta1/delta2, replicate fill) or certify "
                                  "(bound margins, zero fill)")
      ->check(CLI::IsMember({"benchmark", "certify"}));
  add_common(app.add_subcommand("sweep", "train + benchmark once per sigma in the grid"));
  add_common(app.add_subcommand("certify-basis",
                                "dump the basis unit-shift Lipschitz estimates"));
  add_common(app.add_subcommand("info", "per-layer parameter counts vs 3x3 pixel layers"));

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = gaussnet::load_config(config);
    if (seed >= 0) {
      cfg.seed = unsigned(seed);
      cfg.train.seed = unsigned(seed);
    }
    if (!out.empty()) cfg.out = out;
    if (!root.empty()) cfg.dataset_root = root;

    if (app.got_subcommand("train")) return gaussnet::cmd_train(cfg, std::cout);
    if (app.got_subcommand("robustness"))
      return gaussnet::cmd_robustness(cfg, mode, std::cout);
    if (app.got_subcommand("sweep")) return gaussnet::cmd_sweep(cfg, std::cout);
    if (app.got_subcommand("certify-basis"))
      return gaussnet::cmd_certify_basis(cfg, std::cout);
    if (app.got_subcommand("info")) return gaussnet::cmd_info(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
