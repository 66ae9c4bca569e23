// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pmamba/net/checkpoint.hpp"
#include "pmamba/net/model.hpp"
#include "pmamba/train/loss.hpp"
#include "pmamba/train/metrics.hpp"
#include "pmamba/train/optim.hpp"

namespace pmamba::train {

template <class T>
struct Sample {
  Tensor<T> image;  // [3,H,W]
  LabelMap mask;    // [H,W]
};

/// Stacks [3,H,W] images and [H,W] masks into [B,3,H,W] / [B,H,W].
template <class T>
std::pair<Tensor<T>, LabelMap> stack_batch(const std::vector<Sample<T>>& samples) {
  if (samples.empty()) throw UsageError("stack_batch: empty batch");
  const Shape is = samples.front().image.shape();
  const Shape ms = samples.front().mask.shape;
  const auto b = static_cast<Index>(samples.size());
  std::vector<T> img;
  std::vector<std::uint8_t> lab;
  img.reserve(static_cast<std::size_t>(b * numel_of(is)));
  lab.reserve(static_cast<std::size_t>(b * numel_of(ms)));
  for (const auto& s : samples) {
    if (s.image.shape() != is || s.mask.shape != ms) throw ShapeError("stack_batch: samples differ in size");
    img.insert(img.end(), s.image.data().begin(), s.image.data().end());
    lab.insert(lab.end(), s.mask.values.begin(), s.mask.values.end());
  }
  Shape bis{b};
  bis.insert(bis.end(), is.begin(), is.end());
  Shape bms{b};
  bms.insert(bms.end(), ms.begin(), ms.end());
  return {Tensor<T>::from(bis, img), LabelMap(bms, std::move(lab))};
}

/// Produces training sample `index` for `epoch`. Implementations key any
/// randomness on (seed, index, epoch) so the result does not depend on call
/// order.
template <class T>
struct TrainData {
  Index size = 0;
  std::function<Sample<T>(Index index, std::int64_t epoch)> get;
};

/// Maps a batch [B,3,H,W] to logits [B,K,H,W] in eval mode.
template <class T>
using Predictor = std::function<Tensor<T>(const Tensor<T>&)>;

template <class T>
Predictor<T> plain_predictor(net::Model<T>& model) {
  return [&model](const Tensor<T>& images) {
    NoGradGuard ng;
    return model(images, ForwardCtx{StatsMode::eval, nullptr});
  };
}

struct EvalResult {
  ConfusionMatrix cm;
  Metrics metrics;
};

/// Accumulates one global confusion matrix over `samples`.
template <class T>
EvalResult evaluate(const std::vector<Sample<T>>& samples, Index num_classes, const Predictor<T>& predict,
                    Index batch = 1, int ignore_label = kIgnoreLabel, OaForm oa_form = OaForm::standard) {
  if (batch < 1) throw ConfigError("evaluate: batch must be >= 1");
  ConfusionMatrix cm(num_classes);
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch));
    std::vector<Sample<T>> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                 samples.begin() + static_cast<std::ptrdiff_t>(end));
    auto [images, labels] = stack_batch(chunk);
    cm.add(argmax_classes(predict(images)), labels.values, ignore_label);
  }
  return {cm, compute_metrics(cm, oa_form)};
}

struct StepLog {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double lr_encoder = 0.0;
  double lr_decoder = 0.0;
  LossBreakdown loss;
};

struct EpochLog {
  std::int64_t epoch = 0;
  double mean_total = 0.0;
  std::optional<double> val_miou;
};

struct TrainOptions {
  std::int64_t epochs = 1;
  Index batch = 2;
  std::int64_t warmup_epochs = 0;
  double lr_encoder = 6e-5;
  double lr_decoder = 6e-4;
  double power = 0.9;
  AdamWConfig adamw;
  LossOptions loss;
  std::int64_t patience = 10;          // epochs without val-mIoU improvement
  std::optional<double> stop_at_miou;  // stop as soon as val mIoU reaches this
  std::uint64_t seed = 0;
  Index eval_batch = 4;

  std::optional<std::filesystem::path> checkpoint_dir;  // writes last.pymb and best.pymb
  std::string config_text;                              // echoed into checkpoints
  std::ostream* log = nullptr;                          // CSV step log

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > epochs) throw ConfigError("train: warmup_epochs must be in [0, epochs]");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
  }
};

struct TrainReport {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  double best_miou = -1.0;
  std::int64_t best_epoch = -1;
  bool stopped_early = false;
  bool reached_target = false;
  std::int64_t epochs_run = 0;
};

inline constexpr std::string_view kStepLogHeader = "step,epoch,lr_encoder,lr_decoder,ce,dice,total";

inline std::string format_step(const StepLog& s) {
  std::ostringstream os;
  os << s.step << ',' << s.epoch << ',' << std::setprecision(9) << s.lr_encoder << ',' << s.lr_decoder << ','
     << s.loss.ce << ',' << s.loss.dice << ',' << s.loss.total;
  return os.str();
}

/// Index order of `epoch`, a pure function of (seed, epoch).
inline std::vector<Index> epoch_order(Index n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng r = Rng(seed, Rng::hash("shuffle")).split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[static_cast<std::size_t>(r.below(i))]);
  return idx;
}

/// Mini-batch AdamW training with per-epoch validation, early stopping and
/// resumable checkpoints.
template <class T>
class Trainer {
 public:
  Trainer(net::Model<T>& model, TrainData<T> data, std::vector<Sample<T>> val, TrainOptions opt)
      : model_(model), data_(std::move(data)), val_(std::move(val)), opt_(std::move(opt)), adam_(opt_.adamw) {
    opt_.validate();
    if (data_.size < 1 || !data_.get) throw DataError("train: empty training set");
    steps_per_epoch_ = (data_.size + opt_.batch - 1) / opt_.batch;
    schedule_.base_encoder = opt_.lr_encoder;
    schedule_.base_decoder = opt_.lr_decoder;
    schedule_.power = opt_.power;
    schedule_.warmup_steps = opt_.warmup_epochs * steps_per_epoch_;
    schedule_.total_steps = opt_.epochs * steps_per_epoch_;
    schedule_.validate();
    dropout_rng_ = Rng(opt_.seed, Rng::hash("dropout"));
  }

  const LrSchedule& schedule() const { return schedule_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  std::int64_t next_epoch() const { return epoch_; }
  std::int64_t global_step() const { return step_; }

  /// Restores model, optimizer, counters and RNG from a checkpoint written
  /// by this trainer.
  void resume(const net::Checkpoint<T>& ck) {
    net::restore(model_.params(), ck);
    adam_.restore(model_.params(), ck, static_cast<std::int64_t>(ck.meta.step));
    epoch_ = static_cast<std::int64_t>(ck.meta.epoch);
    step_ = static_cast<std::int64_t>(ck.meta.step);
    report_.best_miou = ck.meta.best_metric;
    report_.best_epoch = ck.meta.best_epoch == 0 ? -1 : static_cast<std::int64_t>(ck.meta.best_epoch) - 1;
    dropout_rng_ = Rng(ck.meta.rng_seed, ck.meta.rng_stream);
    dropout_rng_.set_counter(ck.meta.rng_counter);
  }

  /// Runs epochs until the budget, early stopping, the target mIoU, or
  /// `max_epochs_this_call` epochs have completed.
  TrainReport run(std::optional<std::int64_t> max_epochs_this_call = std::nullopt) {
    if (opt_.log != nullptr && step_ == 0) *opt_.log << kStepLogHeader << '\n';
    std::int64_t ran = 0;
    while (epoch_ < opt_.epochs) {
      if (max_epochs_this_call && ran >= *max_epochs_this_call) break;
      run_epoch();
      ++ran;
      ++report_.epochs_run;
      const auto& last = report_.epochs.back();
      if (last.val_miou) {
        if (*last.val_miou > report_.best_miou) {
          report_.best_miou = *last.val_miou;
          report_.best_epoch = last.epoch;
          save("best.pymb");
        }
        if (opt_.stop_at_miou && *last.val_miou >= *opt_.stop_at_miou) report_.reached_target = true;
      }
      ++epoch_;
      save("last.pymb");
      if (report_.reached_target) break;
      if (!val_.empty() && epoch_ - 1 - report_.best_epoch >= opt_.patience) {
        report_.stopped_early = true;
        break;
      }
    }
    return report_;
  }

  net::Checkpoint<T> checkpoint() const {
    net::Checkpoint<T> ck;
    ck.config_text = opt_.config_text;
    ck.meta.epoch = static_cast<std::uint64_t>(epoch_);
    ck.meta.step = static_cast<std::uint64_t>(step_);
    ck.meta.best_metric = report_.best_miou;
    ck.meta.best_epoch = static_cast<std::uint64_t>(report_.best_epoch + 1);
    ck.meta.rng_seed = dropout_rng_.seed();
    ck.meta.rng_stream = dropout_rng_.stream();
    ck.meta.rng_counter = dropout_rng_.counter();
    ck.records = net::snapshot(model_.params());
    auto moments = adam_.snapshot(model_.params());
    ck.records.insert(ck.records.end(), moments.begin(), moments.end());
    return ck;
  }

 private:
  void run_epoch() {
    const auto order = epoch_order(data_.size, opt_.seed, epoch_);
    double loss_sum = 0;
    Index batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt_.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opt_.batch));
      std::vector<Sample<T>> chunk;
      for (std::size_t i = start; i < end; ++i) chunk.push_back(data_.get(order[i], epoch_));
      auto [images, labels] = stack_batch(chunk);

      StepLog log;
      log.step = step_;
      log.epoch = epoch_;
      log.lr_encoder = schedule_.lr_at(step_, ParamGroup::encoder);
      log.lr_decoder = schedule_.lr_at(step_, ParamGroup::decoder);

      model_.params().zero_grad();
      const ForwardCtx ctx{StatsMode::train, &dropout_rng_};
      auto [total, parts] = joint_loss(model_(images, ctx), labels, opt_.loss);
      backward(total);
      adam_.step(model_.params(), log.lr_encoder, log.lr_decoder);

      log.loss = parts;
      report_.steps.push_back(log);
      if (opt_.log != nullptr) *opt_.log << format_step(log) << '\n';
      loss_sum += parts.total;
      ++batches;
      ++step_;
    }
    EpochLog el;
    el.epoch = epoch_;
    el.mean_total = loss_sum / static_cast<double>(batches);
    if (!val_.empty())
      el.val_miou = evaluate(val_, model_.config().num_classes, plain_predictor(model_), opt_.eval_batch,
                             opt_.loss.ignore_label)
                        .metrics.miou;
    report_.epochs.push_back(el);
  }

  void save(const char* name) const {
    if (!opt_.checkpoint_dir) return;
    std::filesystem::create_directories(*opt_.checkpoint_dir);
    net::checkpoint_save(*opt_.checkpoint_dir / name, checkpoint());
  }

  net::Model<T>& model_;
  TrainData<T> data_;
  std::vector<Sample<T>> val_;
  TrainOptions opt_;
  AdamW<T> adam_;
  LrSchedule schedule_;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t epoch_ = 0;
  std::int64_t step_ = 0;
  Rng dropout_rng_;
  TrainReport report_;
};

/// Convenience wrapper: fresh trainer, full run.
template <class T>
TrainReport train_loop(net::Model<T>& model, TrainData<T> data, std::vector<Sample<T>> val, TrainOptions opt) {
  Trainer<T> t(model, std::move(data), std::move(val), std::move(opt));
  return t.run();
}

/// Training data over a fixed sample list with no augmentation. `samples`
/// must outlive the returned object.
template <class T>
TrainData<T> fixed_data(const std::vector<Sample<T>>& samples) {
  return {static_cast<Index>(samples.size()),
          [&samples](Index i, std::int64_t) { return samples[static_cast<std::size_t>(i)]; }};
}

}  // namespace pmamba::train
