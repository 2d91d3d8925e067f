#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "cola/error.hpp"
#include "cola/harness.hpp"

namespace cola {

const CellResult& ExperimentReport::cell(Arm arm, int fraction, std::uint64_t seed) const {
  for (const auto& c : cells) {
    if (c.arm == arm && c.fraction == fraction && c.seed == seed) return c;
  }
  throw Error(ErrorCode::InvalidConfig, "report has no cell " + std::string(arm_name(arm)) + " " +
                                            std::to_string(fraction) + "% seed " + std::to_string(seed));
}

double ExperimentReport::median_miou(Arm arm, int fraction) const {
  std::vector<double> values;
  for (auto seed : seeds) values.push_back(cell(arm, fraction, seed).test_miou);
  return median(values);
}

double ExperimentReport::median_delta(Arm arm, int fraction) const {
  std::vector<double> values;
  for (auto seed : seeds) values.push_back(cell(arm, fraction, seed).test_miou - cell(Arm::Scratch, fraction, seed).test_miou);
  return median(values);
}

namespace {

std::string pct(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << 100.0 * v;
  return out.str();
}

std::string signed_pct(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1) << std::showpos << 100.0 * v;
  return out.str();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_report_table(const ExperimentReport& report) {
  const bool has_scratch = std::find(report.arms.begin(), report.arms.end(), Arm::Scratch) != report.arms.end();
  std::ostringstream out;
  out << "# " << report.name << ": test mIoU (%)";
  if (has_scratch) out << ", difference to scratch in parentheses";
  out << '\n';
  for (int fraction : report.fractions) {
    out << "\ntarget data " << fraction << "%\n";
    std::vector<std::string> header{"arm"};
    for (auto seed : report.seeds) header.push_back("seed " + std::to_string(seed));
    header.push_back("median");
    std::vector<std::vector<std::string>> rows;
    for (Arm arm : report.arms) {
      std::vector<std::string> row{std::string(arm_name(arm))};
      auto entry = [&](double value, double delta) {
        std::string s = pct(value);
        if (has_scratch && arm != Arm::Scratch) s += " (" + signed_pct(delta) + ")";
        return s;
      };
      for (auto seed : report.seeds) {
        const double v = report.cell(arm, fraction, seed).test_miou;
        const double d = has_scratch ? v - report.cell(Arm::Scratch, fraction, seed).test_miou : 0.0;
        row.push_back(entry(v, d));
      }
      row.push_back(entry(report.median_miou(arm, fraction), has_scratch ? report.median_delta(arm, fraction) : 0.0));
      rows.push_back(std::move(row));
    }
    std::vector<std::size_t> widths(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) {
      widths[c] = header[c].size();
      for (const auto& r : rows) widths[c] = std::max(widths[c], r[c].size());
    }
    for (std::size_t c = 0; c < header.size(); ++c) out << pad(header[c], widths[c] + 2);
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c) out << pad(r[c], widths[c] + 2);
      out << '\n';
    }
  }
  return out.str();
}

std::string format_report_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "arm,fraction,seed,test_miou,delta_vs_scratch,pretrain_val_miou,pretrain_majority_miou,config_digest";
  for (const auto& name : report.class_names) out << ",iou_" << name;
  out << '\n';
  const bool has_scratch = std::find(report.arms.begin(), report.arms.end(), Arm::Scratch) != report.arms.end();
  for (const auto& c : report.cells) {
    out << arm_name(c.arm) << ',' << c.fraction << ',' << c.seed << ',' << c.test_miou << ',';
    if (has_scratch) out << c.test_miou - report.cell(Arm::Scratch, c.fraction, c.seed).test_miou;
    out << ',';
    if (c.pretrain_val_miou >= 0.0) out << c.pretrain_val_miou;
    out << ',';
    if (c.pretrain_majority >= 0.0) out << c.pretrain_majority;
    out << ',' << std::hex << c.config_digest << std::dec;
    for (double v : c.class_iou) {
      out << ',';
      if (!std::isnan(v)) out << v;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cola
