#pragma once

#include <span>
#include <string>
#include <vector>

namespace cvcrf {

/// Classification summary. Confusion rows are true classes, columns predictions.
/// A class never predicted has precision 0 (and F1 0 unless its recall is 0 too).
struct MetricsReport {
  std::size_t epoch = 0;
  std::string split;
  std::vector<std::vector<std::size_t>> confusion;
  double acc = 0.0;
  double m_pre = 0.0;
  double m_rec = 0.0;
  double m_f1 = 0.0;
  std::vector<double> per_class_acc;  // recall of each class
  std::vector<double> precision;
  std::vector<double> f1;

  std::size_t num_classes() const noexcept { return confusion.size(); }
  std::size_t total() const;
};

MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion, std::size_t epoch = 0,
                                     std::string split = {});
MetricsReport metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                       std::size_t num_classes, std::size_t epoch = 0, std::string split = {});

/// `epoch,split,acc,m_pre,m_rec,m_f1,acc_1,...,acc_K`
std::string metrics_csv_header(std::size_t num_classes);
/// One CSV line (no newline), fractions with 6 decimals.
std::string metrics_csv_row(const MetricsReport& report);

}  // namespace cvcrf
