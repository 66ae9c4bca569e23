// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

// pmamba: command-line front end for training, evaluation, inference,
// synthetic data generation and the built-in self-checks.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "pmamba/diag/suites.hpp"
#include "pmamba/pipeline/run.hpp"

namespace {

using namespace pmamba;
namespace fs = std::filesystem;

constexpr double kBenchTolerance = 1e-5;

int cmd_train(const fs::path& config, bool resume) {
  const auto cfg = pipeline::load_run_config(config);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = pipeline::train_run(cfg, resume, &std::cout);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& r = res.report;
  std::cout << "trained " << r.epochs_run << " epochs in " << secs << " s";
  if (r.stopped_early) std::cout << " (early stop)";
  if (r.reached_target) std::cout << " (target mIoU reached)";
  std::cout << '\n';
  if (r.best_epoch >= 0) std::cout << "best val mIoU " << r.best_miou << " at epoch " << r.best_epoch + 1 << '\n';
  std::cout << "log: " << res.log_path.string() << "\ncheckpoint: " << res.last_checkpoint.string() << '\n';
  return kExitOk;
}

int cmd_eval(const fs::path& config, const fs::path& checkpoint, bool tta, const fs::path& save_masks) {
  const auto cfg = pipeline::load_run_config(config);
  auto lm = pipeline::load_model(checkpoint);
  const auto& mc = lm.config.model;
  const fs::path manifest_path = cfg.val_manifest.empty() ? cfg.train_manifest : cfg.val_manifest;
  if (manifest_path.empty()) throw ConfigError("eval: neither pipeline.val_manifest nor pipeline.train_manifest is set");
  const auto manifest = pipeline::load_manifest(manifest_path);
  const auto samples = pipeline::load_split<float>(manifest_path, mc.input_size, mc.num_classes);

  pipeline::TtaStats stats;
  const auto predict =
      tta ? pipeline::tta_predictor(*lm.model, cfg.tta, &stats) : pipeline::window_predictor(*lm.model);
  const auto res = train::evaluate(samples, mc.num_classes, predict, cfg.eval_batch, manifest.ignore_label);
  std::cout << "checkpoint " << checkpoint.string() << " (" << net::variant_name(mc.variant) << ")\n"
            << "data       " << manifest_path.string() << " (" << samples.size() << " patches)\n"
            << "tta        " << (tta ? "on, " + std::to_string(stats.branches) + " branches" : std::string("off"))
            << "\n\n"
            << pipeline::format_eval_report(res.metrics, manifest.class_names);
  if (!save_masks.empty()) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& img = samples[i].image;
      const auto logits = predict(img.reshape({1, img.dim(0), img.dim(1), img.dim(2)}));
      char name[32];
      std::snprintf(name, sizeof name, "pred_%04zu.pgm", i);
      pipeline::save_mask(save_masks / name, train::LabelMap({img.dim(1), img.dim(2)}, train::argmax_classes(logits)));
    }
    std::cout << "\nwrote " << samples.size() << " masks to " << save_masks.string() << '\n';
  }
  return kExitOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& image_path, const fs::path& out, bool tta) {
  auto lm = pipeline::load_model(checkpoint);
  const auto image = pipeline::load_image<float>(image_path);
  const auto logits = tta ? pipeline::tta_infer(*lm.model, image, lm.config.tta) : pipeline::window_forward(*lm.model, image);
  pipeline::save_mask(out, train::LabelMap({image.dim(1), image.dim(2)}, train::argmax_classes(logits)));
  std::cout << "wrote " << out.string() << " (" << image.dim(2) << "x" << image.dim(1) << ", "
            << lm.config.model.num_classes << " classes)\n";
  return kExitOk;
}

int cmd_synth(const fs::path& out, std::uint64_t seed, Index n, Index size, Index classes) {
  const auto m = pipeline::synth_dataset(out, seed, n, size, classes);
  std::cout << "wrote " << m.pairs.size() << " samples to " << (out / "manifest.ini").string() << '\n';
  return kExitOk;
}

int cmd_bench(const fs::path& csv, const diag::BenchOptions& opt) {
  std::ofstream file;
  if (!csv.empty()) {
    if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
    file.open(csv);
    if (!file) throw DataError("bench-scan: cannot write " + csv.string());
  }
  std::ostream& os = csv.empty() ? std::cout : file;
  os << diag::kBenchHeader << '\n';
  double worst = 0.0;
  diag::bench_scan(opt, [&](const diag::BenchRow& r) {
    os << diag::format_bench_row(r) << '\n' << std::flush;
    if (!csv.empty()) std::cerr << diag::format_bench_row(r) << '\n';
    worst = std::max(worst, r.max_abs_err_vs_sequential);
  });
  const bool ok = worst < kBenchTolerance;
  std::cerr << "max_abs_err_vs_sequential " << worst << " (tolerance " << kBenchTolerance << "): "
            << (ok ? "ok" : "FAILED") << '\n';
  return ok ? kExitOk : kExitFailure;
}

int cmd_gradcheck(const std::string& module) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto entries = diag::gradcheck_suite(module);
  int failed = 0;
  for (const auto& e : entries) {
    const auto& r = e.result;
    std::printf("%-4s %-16s %-38s checked %5d  max rel err %.3e", r.ok() ? "ok" : "FAIL", e.module.c_str(),
                r.name.c_str(), r.checked, r.max_rel_err);
    if (r.refined > 0) std::printf("  (%d at reduced step)", r.refined);
    std::printf("\n");
    failed += r.ok() ? 0 : 1;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%zu checks, %d failed, tolerance %.0e, %.1f s\n", entries.size(), failed, kGradRelTol, secs);
  return failed == 0 ? kExitOk : kExitFailure;
}

int cmd_ablate(const fs::path& config, const std::vector<std::uint64_t>& seeds) {
  const auto cfg = pipeline::load_run_config(config);
  if (cfg.train_manifest.empty() || cfg.val_manifest.empty())
    throw ConfigError("ablate: pipeline.train_manifest and pipeline.val_manifest must both be set");
  const Index p = cfg.model.input_size, k = cfg.model.num_classes;
  const auto train_samples = pipeline::load_split<float>(cfg.train_manifest, p, k);
  const auto val = pipeline::load_split<float>(cfg.val_manifest, p, k);
  const auto rows = pipeline::run_ablation(cfg, train_samples, val, seeds,
                                           {net::kAllVariants.begin(), net::kAllVariants.end()}, &std::cout);
  std::cout << "\nComponent ablation (validation, median over " << seeds.size() << " seeds, no TTA)\n\n"
            << pipeline::format_ablation_table(rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PyramidMamba semantic segmentation: train, evaluate, infer and self-check"};
  app.require_subcommand(1);

  fs::path config, checkpoint, image, out, csv, save_masks;
  bool resume = false, tta = false;
  std::uint64_t seed = 0;
  Index n = 8, size = 64, classes = 4;
  std::string module = "all";
  std::vector<std::uint64_t> seeds{0, 1, 2};
  diag::BenchOptions bench;

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("config", config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  train->add_flag("--resume", resume, "Continue from <output_dir>/last.pymb");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured validation split");
  eval->add_option("config", config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_flag("--tta", tta, "Average flipped and rescaled predictions");
  eval->add_option("--save-masks", save_masks, "Directory for predicted P5 masks");

  auto* infer = app.add_subcommand("infer", "Predict a mask for one image");
  infer->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer->add_option("image", image, "Input image (P6)")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out, "Output mask (P5)")->required();
  infer->add_flag("--tta", tta, "Average flipped and rescaled predictions");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("out-dir", out, "Output directory")->required();
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image side in pixels (multiple of 16)")->check(CLI::PositiveNumber);
  synth->add_option("--classes", classes, "Number of classes (2 to 6)")->check(CLI::Range(2, 6));

  auto* bench_cmd = app.add_subcommand("bench-scan", "Time sequential and parallel selective scans");
  bench_cmd->add_option("--csv", csv, "Write the CSV here instead of stdout");
  bench_cmd->add_option("--lengths", bench.lengths, "Sequence lengths")->delimiter(',');
  bench_cmd->add_option("--channels", bench.channels, "Channel counts")->delimiter(',');
  bench_cmd->add_option("--states", bench.states, "State sizes")->delimiter(',');
  bench_cmd->add_option("--chunk", bench.chunk, "Parallel scan chunk length")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--workers", bench.workers, "Parallel scan worker threads")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks in double precision");
  std::vector<std::string> modules{"all"};
  for (auto m : diag::kGradcheckModules) modules.emplace_back(m);
  grad->add_option("--module", module, "Module to check")->check(CLI::IsMember(modules));

  auto* ablate = app.add_subcommand("ablate", "Train and compare Baseline, +DSPP, +DSPP+PFM and the full model");
  ablate->add_option("config", config, "Run configuration (INI)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--seeds", seeds, "Seeds, comma separated")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(config, resume);
    if (*eval) return cmd_eval(config, checkpoint, tta, save_masks);
    if (*infer) return cmd_infer(checkpoint, image, out, tta);
    if (*synth) return cmd_synth(out, seed, n, size, classes);
    if (*bench_cmd) return cmd_bench(csv, bench);
    if (*grad) return cmd_gradcheck(module);
    if (*ablate) return cmd_ablate(config, seeds);
  } catch (const std::exception& e) {
    std::cerr << "pmamba: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kExitUsage;
}
