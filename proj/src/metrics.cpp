#include "cola/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "cola/error.hpp"

namespace cola {

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(c, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t g = 0; g < n_; ++g) s += at(g, c);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

void ConfusionMatrix::add(std::span<const int> predictions, std::span<const int> ground_truth, int ignore_id) {
  if (predictions.size() != ground_truth.size()) {
    throw Error(ErrorCode::LengthMismatch, "predictions and ground truth differ in length");
  }
  const auto n = static_cast<int>(n_);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int g = ground_truth[i];
    if (g == ignore_id) continue;
    const int p = predictions[i];
    if (g < 0 || g >= n || p < 0 || p >= n) {
      throw Error(ErrorCode::OutOfRangeClass,
                  "pair (" + std::to_string(g) + ", " + std::to_string(p) + ") outside " + std::to_string(n_) + " classes");
    }
    ++counts_[static_cast<std::size_t>(g) * n_ + static_cast<std::size_t>(p)];
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw Error(ErrorCode::ShapeMismatch, "confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

ConfusionMatrix accumulate(ConfusionMatrix cm, std::span<const int> predictions, std::span<const int> ground_truth,
                           int ignore_id) {
  cm.add(predictions, ground_truth, ignore_id);
  return cm;
}

std::vector<ClassIoU> iou_per_class(const ConfusionMatrix& cm) {
  std::vector<ClassIoU> out(cm.n_classes());
  for (std::size_t c = 0; c < cm.n_classes(); ++c) {
    const std::uint64_t tp = cm.at(c, c);
    out[c].intersection = tp;
    out[c].union_count = cm.row_sum(c) + cm.col_sum(c) - tp;
  }
  return out;
}

double miou(const ConfusionMatrix& cm, IouAveraging averaging) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& iou : iou_per_class(cm)) {
    if (iou.absent() && averaging == IouAveraging::PresentOnly) continue;
    sum += iou.value();
    ++count;
  }
  if (count == 0 || cm.total() == 0) throw Error(ErrorCode::NoEvaluableClass, "no class can be evaluated");
  return sum / static_cast<double>(count);
}

namespace {

std::string class_name(const std::vector<std::string>& names, std::size_t c) {
  return c < names.size() ? names[c] : "class_" + std::to_string(c);
}

}  // namespace

std::string format_iou_table(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-24s %12s %12s %8s\n", "class", "intersection", "union", "IoU");
  out << line;
  const auto ious = iou_per_class(cm);
  for (std::size_t c = 0; c < ious.size(); ++c) {
    const ClassIoU& iou = ious[c];
    if (iou.absent()) {
      std::snprintf(line, sizeof line, "%-24s %12s %12s %8s\n", class_name(class_names, c).c_str(), "-", "-", "absent");
    } else {
      std::snprintf(line, sizeof line, "%-24s %12llu %12llu %8.4f\n", class_name(class_names, c).c_str(),
                    static_cast<unsigned long long>(iou.intersection),
                    static_cast<unsigned long long>(iou.union_count), iou.value());
    }
    out << line;
  }
  std::snprintf(line, sizeof line, "%-24s %12s %12s %8.4f\n", "mIoU", "", "", miou(cm));
  out << line;
  return out.str();
}

std::string format_iou_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  std::ostringstream out;
  out.precision(17);
  out << "class,name,intersection,union,iou\n";
  const auto ious = iou_per_class(cm);
  for (std::size_t c = 0; c < ious.size(); ++c) {
    out << c << ',' << class_name(class_names, c) << ',' << ious[c].intersection << ',' << ious[c].union_count << ',';
    if (ious[c].absent()) {
      out << "absent";
    } else {
      out << ious[c].value();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cola
