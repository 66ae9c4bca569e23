// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pmamba/train/loss.hpp"

namespace pmamba::train {

/// Raised when metrics are requested from a matrix that saw no labelled pixel.
class UndefinedMetricsError : public DataError {
 public:
  using DataError::DataError;
};

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(Index k) : k_(k), counts_(static_cast<std::size_t>(k * k), 0) {
    if (k < 1) throw ConfigError("confusion matrix: need at least one class");
  }

  Index classes() const { return k_; }
  std::uint64_t at(Index truth, Index pred) const { return counts_[static_cast<std::size_t>(truth * k_ + pred)]; }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  /// pred and truth are flat class maps of equal length; pixels whose truth
  /// equals `ignore_label` are only counted as ignored.
  void add(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& truth,
           int ignore_label = kIgnoreLabel) {
    if (pred.size() != truth.size()) throw ShapeError("confusion matrix: prediction and truth sizes differ");
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (truth[i] == ignore_label) {
        ++ignored_;
        continue;
      }
      if (truth[i] >= k_ || pred[i] >= k_) throw DataError("confusion matrix: class index out of range");
      ++counts_[static_cast<std::size_t>(truth[i]) * static_cast<std::size_t>(k_) + pred[i]];
    }
  }

  void merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("confusion matrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    ignored_ += other.ignored_;
  }

  bool operator==(const ConfusionMatrix& o) const {
    return k_ == o.k_ && counts_ == o.counts_ && ignored_ == o.ignored_;
  }

 private:
  Index k_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

enum class OaForm { standard, literal_one_vs_rest };

struct Metrics {
  double oa = 0.0;
  double miou = 0.0;
  double precision = 0.0;  // mean over present classes
  double recall = 0.0;     // mean over present classes
  double f1 = 0.0;         // from mean precision and mean recall
  std::vector<double> per_class_iou;  // NaN for classes with an empty union
  std::vector<double> per_class_precision;
  std::vector<double> per_class_recall;
};

/// Per class k: TP = cm[k,k], FP = column sum - TP, FN = row sum - TP.
/// Classes with TP + FP + FN = 0 are excluded from every mean. A present
/// class that is never predicted has precision 0.
inline Metrics compute_metrics(const ConfusionMatrix& cm, OaForm oa_form = OaForm::standard) {
  const Index k = cm.classes();
  const std::uint64_t n = cm.total();
  if (n == 0) throw UndefinedMetricsError("metrics: no labelled pixels were accumulated");
  Metrics m;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.per_class_iou.assign(static_cast<std::size_t>(k), nan);
  m.per_class_precision.assign(static_cast<std::size_t>(k), nan);
  m.per_class_recall.assign(static_cast<std::size_t>(k), nan);
  std::uint64_t correct = 0;
  // Extended precision so results round once, e.g. mean(1/2, 2/3) == 7/12.
  long double iou_sum = 0, p_sum = 0, r_sum = 0, literal_oa_sum = 0;
  int present = 0;
  for (Index c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (Index j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c), fp = col - tp, fn = row - tp, tn = n - tp - fp - fn;
    correct += tp;
    literal_oa_sum += static_cast<long double>(tp + tn) / static_cast<long double>(n);
    const std::uint64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    ++present;
    const auto i = static_cast<std::size_t>(c);
    const long double iou = static_cast<long double>(tp) / static_cast<long double>(uni);
    const long double prec = tp + fp == 0 ? 0.0L : static_cast<long double>(tp) / static_cast<long double>(tp + fp);
    const long double rec = tp + fn == 0 ? 0.0L : static_cast<long double>(tp) / static_cast<long double>(tp + fn);
    m.per_class_iou[i] = static_cast<double>(iou);
    m.per_class_precision[i] = static_cast<double>(prec);
    m.per_class_recall[i] = static_cast<double>(rec);
    iou_sum += iou;
    p_sum += prec;
    r_sum += rec;
  }
  m.oa = oa_form == OaForm::standard ? static_cast<double>(correct) / static_cast<double>(n)
                                     : static_cast<double>(literal_oa_sum / static_cast<long double>(k));
  const long double mp = p_sum / present, mr = r_sum / present;
  m.miou = static_cast<double>(iou_sum / present);
  m.precision = static_cast<double>(mp);
  m.recall = static_cast<double>(mr);
  m.f1 = mp + mr == 0 ? 0.0 : static_cast<double>(2 * mp * mr / (mp + mr));
  return m;
}

/// Argmax over the class axis of logits [K,H,W] or [B,K,H,W]; ties resolve to
/// the lower class index.
template <class T>
std::vector<std::uint8_t> argmax_classes(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError("argmax: logits must be [K,H,W] or [B,K,H,W]");
  const Index b = s.size() == 4 ? s[0] : 1;
  const Index k = s[s.size() - 3];
  const Index hw = s[s.size() - 2] * s.back();
  if (k > 255) throw ShapeError("argmax: more than 255 classes");
  const auto x = logits.data();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(b * hw));
  for (Index n = 0; n < b; ++n)
    for (Index p = 0; p < hw; ++p) {
      Index best = 0;
      for (Index c = 1; c < k; ++c)
        if (x[n * k * hw + c * hw + p] > x[n * k * hw + best * hw + p]) best = c;
      out[static_cast<std::size_t>(n * hw + p)] = static_cast<std::uint8_t>(best);
    }
  return out;
}

}  // namespace pmamba::train
