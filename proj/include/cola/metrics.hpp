#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cola {

/// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes = 0) : n_(n_classes), counts_(n_classes * n_classes, 0) {}

  std::size_t n_classes() const { return n_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;
  std::uint64_t total() const;

  /// Pairs whose ground truth equals ignore_id are skipped entirely.
  void add(std::span<const int> predictions, std::span<const int> ground_truth, int ignore_id);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

ConfusionMatrix accumulate(ConfusionMatrix cm, std::span<const int> predictions, std::span<const int> ground_truth,
                           int ignore_id);

struct ClassIoU {
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;

  /// Zero denominator: the class is absent from both truth and prediction.
  bool absent() const { return union_count == 0; }
  double value() const { return absent() ? 0.0 : static_cast<double>(intersection) / static_cast<double>(union_count); }
};

std::vector<ClassIoU> iou_per_class(const ConfusionMatrix& cm);

enum class IouAveraging {
  PresentOnly,  ///< absent classes are left out of the mean
  AllClasses,   ///< absent classes count as IoU 0
};

double miou(const ConfusionMatrix& cm, IouAveraging averaging = IouAveraging::PresentOnly);

/// Plain-text table and `class,name,intersection,union,iou` CSV rows.
std::string format_iou_table(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);
std::string format_iou_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

}  // namespace cola
