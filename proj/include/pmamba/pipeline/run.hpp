// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pmamba/pipeline/augment.hpp"
#include "pmamba/pipeline/config.hpp"
#include "pmamba/pipeline/dataset.hpp"
#include "pmamba/pipeline/tta.hpp"
#include "pmamba/train/loop.hpp"

namespace pmamba::pipeline {

/// Loads a manifest split for a model with `num_classes` classes and cuts
/// every image into non-overlapping `patch` x `patch` windows (the last row
/// and column snapped inward). Images smaller than a patch are rejected.
template <class T>
std::vector<Sample<T>> load_split(const std::filesystem::path& manifest_path, Index patch, Index num_classes) {
  const auto manifest = load_manifest(manifest_path);
  if (manifest.num_classes != num_classes)
    throw DataError(manifest_path.string() + ": dataset has " + std::to_string(manifest.num_classes) +
                    " classes, the model expects " + std::to_string(num_classes));
  std::vector<Sample<T>> out;
  for (auto& s : load_samples<T>(manifest)) {
    const Index h = s.image.dim(1), w = s.image.dim(2);
    if (h == patch && w == patch) {
      out.push_back(std::move(s));
      continue;
    }
    if (h < patch || w < patch)
      throw DataError(manifest_path.string() + ": a " + std::to_string(h) + "x" + std::to_string(w) +
                      " image is smaller than the " + std::to_string(patch) + " px patch");
    for (const auto& win : crop_patches(h, w, patch, patch))
      out.push_back({crop_image(s.image, win), crop_mask(s.mask, win, static_cast<std::uint8_t>(manifest.ignore_label))});
  }
  if (out.empty()) throw DataError(manifest_path.string() + ": no samples");
  return out;
}

struct TrainRunResult {
  train::TrainReport report;
  std::filesystem::path log_path;
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
};

/// Trains `cfg.model` on the configured manifests. Writes train_log.csv,
/// best.pymb (when a validation split is configured) and last.pymb to
/// `cfg.output_dir`. With `resume`, continues from output_dir/last.pymb.
/// `progress` receives one line per epoch.
inline TrainRunResult train_run(const RunConfig& cfg, bool resume = false, std::ostream* progress = nullptr) {
  if (cfg.train_manifest.empty()) throw ConfigError("train: pipeline.train_manifest is not set");
  if (cfg.output_dir.empty()) throw ConfigError("train: run.output_dir is not set");
  const Index p = cfg.model.input_size, k = cfg.model.num_classes;
  const auto train_samples = load_split<float>(cfg.train_manifest, p, k);
  std::vector<Sample<float>> val;
  if (!cfg.val_manifest.empty()) val = load_split<float>(cfg.val_manifest, p, k);

  TrainRunResult res;
  std::filesystem::create_directories(cfg.output_dir);
  res.log_path = cfg.output_dir / "train_log.csv";
  res.best_checkpoint = cfg.output_dir / "best.pymb";
  res.last_checkpoint = cfg.output_dir / "last.pymb";

  auto model = net::model_init<float>(cfg.model, cfg.seed);
  auto data = cfg.augment ? augmented_data(train_samples, cfg.augmentation, cfg.seed) : train::fixed_data(train_samples);
  std::ofstream log(res.log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("train: cannot write " + res.log_path.string());
  auto opt = cfg.train_options();
  opt.checkpoint_dir = cfg.output_dir;
  opt.log = &log;
  train::Trainer<float> trainer(*model, std::move(data), std::move(val), opt);
  if (resume) {
    if (!std::filesystem::exists(res.last_checkpoint))
      throw DataError("train: --resume needs " + res.last_checkpoint.string());
    trainer.resume(net::checkpoint_load<float>(res.last_checkpoint));
  }
  while (trainer.next_epoch() < cfg.epochs) {
    res.report = trainer.run(1);
    if (progress != nullptr && !res.report.epochs.empty()) {
      const auto& e = res.report.epochs.back();
      *progress << "epoch " << e.epoch + 1 << '/' << cfg.epochs << "  loss " << std::fixed << std::setprecision(4)
                << e.mean_total;
      if (e.val_miou) *progress << "  val mIoU " << *e.val_miou;
      *progress << std::defaultfloat << '\n' << std::flush;
    }
    if (res.report.stopped_early || res.report.reached_target) break;
  }
  return res;
}

struct LoadedModel {
  RunConfig config;
  std::unique_ptr<net::Model<float>> model;
};

/// Rebuilds a model from a checkpoint; the architecture comes from the run
/// configuration stored inside it.
inline LoadedModel load_model(const std::filesystem::path& checkpoint) {
  const auto ck = net::checkpoint_load<float>(checkpoint);
  LoadedModel lm;
  lm.config = parse_run_config(ck.config_text);
  lm.model = net::model_init<float>(lm.config.model, lm.config.seed);
  net::restore(lm.model->params(), ck);
  return lm;
}

/// Batched eval predictor that accepts images of any size via window_forward.
template <class T>
train::Predictor<T> window_predictor(net::Model<T>& model) {
  return [&model](const Tensor<T>& images) {
    const Index b = images.dim(0);
    const Shape one{images.dim(1), images.dim(2), images.dim(3)};
    const Index n = numel_of(one);
    std::vector<T> all;
    Index k = 0;
    for (Index i = 0; i < b; ++i) {
      std::vector<T> v(images.data().begin() + i * n, images.data().begin() + (i + 1) * n);
      const auto logits = window_forward(model, Tensor<T>::from(one, v));
      k = logits.dim(0);
      all.insert(all.end(), logits.data().begin(), logits.data().end());
    }
    return Tensor<T>::from({b, k, images.dim(2), images.dim(3)}, all);
  };
}

namespace detail {

inline std::string pct(double v) {
  if (std::isnan(v)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << 100.0 * v;
  return os.str();
}

}  // namespace detail

/// Structured-text evaluation report: headline metrics, then one row per
/// class with IoU, precision and recall in percent.
inline std::string format_eval_report(const train::Metrics& m, const std::vector<std::string>& class_names) {
  std::ostringstream os;
  os << "OA    " << detail::pct(m.oa) << "\nmIoU  " << detail::pct(m.miou) << "\nF1    " << detail::pct(m.f1) << "\n\n";
  os << std::left << std::setw(14) << "class" << std::right << std::setw(8) << "IoU" << std::setw(8) << "P"
     << std::setw(8) << "R" << '\n';
  for (std::size_t c = 0; c < m.per_class_iou.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : "class" + std::to_string(c);
    os << std::left << std::setw(14) << name << std::right << std::setw(8) << detail::pct(m.per_class_iou[c])
       << std::setw(8) << detail::pct(m.per_class_precision[c]) << std::setw(8)
       << detail::pct(m.per_class_recall[c]) << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Component ablation

struct AblationRow {
  net::Variant variant = net::Variant::full;
  std::vector<train::Metrics> per_seed;  // metrics of the best-val checkpoint
  std::vector<std::int64_t> epochs_run;

  double median_miou() const { return median([](const train::Metrics& m) { return m.miou; }); }
  double median_f1() const { return median([](const train::Metrics& m) { return m.f1; }); }

 private:
  template <class F>
  double median(F f) const {
    std::vector<double> v;
    for (const auto& m : per_seed) v.push_back(f(m));
    if (v.empty()) return std::nan("");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

/// Trains every variant in `variants` once per seed on the same data, with
/// everything but the variant taken from `base`. No TTA. Each run's
/// checkpoints go to <base.output_dir>/ablation/<variant>/seed<s>; the
/// reported metrics are those of the checkpoint with the best validation
/// mIoU.
inline std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<Sample<float>>& train_samples,
                                             const std::vector<Sample<float>>& val,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::vector<net::Variant>& variants = {net::kAllVariants.begin(),
                                                                                          net::kAllVariants.end()},
                                             std::ostream* progress = nullptr) {
  if (val.empty()) throw ConfigError("ablate: a validation split is required");
  if (seeds.empty()) throw ConfigError("ablate: no seeds");
  std::vector<AblationRow> rows;
  for (auto v : variants) {
    AblationRow row;
    row.variant = v;
    for (auto seed : seeds) {
      auto model_cfg = base.model;
      model_cfg.variant = v;
      auto model = net::model_init<float>(model_cfg, seed);
      auto opt = base.train_options();
      opt.seed = seed;
      const auto dir = base.output_dir / "ablation" / std::string(net::variant_key(v)) / ("seed" + std::to_string(seed));
      opt.checkpoint_dir = dir;
      auto data = base.augment ? augmented_data(train_samples, base.augmentation, seed) : train::fixed_data(train_samples);
      const auto report = train::train_loop(*model, std::move(data), val, opt);
      net::restore(model->params(), net::checkpoint_load<float>(dir / "best.pymb"));
      const auto eval = train::evaluate(val, model_cfg.num_classes, train::plain_predictor(*model), base.eval_batch);
      row.per_seed.push_back(eval.metrics);
      row.epochs_run.push_back(report.epochs_run);
      if (progress != nullptr)
        *progress << net::variant_name(v) << " seed " << seed << ": val mIoU " << detail::pct(eval.metrics.miou)
                  << " (best epoch " << report.best_epoch + 1 << " of " << report.epochs_run << ")\n"
                  << std::flush;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Method | mIoU | F1 (medians over seeds, percent) followed by the per-seed
/// mIoU values.
inline std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(22) << "Method" << std::right << std::setw(8) << "mIoU" << std::setw(8) << "F1"
     << "   per-seed mIoU\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(22) << net::variant_name(r.variant) << std::right << std::setw(8)
       << detail::pct(r.median_miou()) << std::setw(8) << detail::pct(r.median_f1()) << "  ";
    for (const auto& m : r.per_seed) os << ' ' << detail::pct(m.miou);
    os << '\n';
  }
  return os.str();
}

}  // namespace pmamba::pipeline
