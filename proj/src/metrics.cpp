#include "cvcrf/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace cvcrf {

std::size_t MetricsReport::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion)
    for (std::size_t c : row) n += c;
  return n;
}

MetricsReport metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion, std::size_t epoch,
                                     std::string split) {
  const std::size_t k = confusion.size();
  if (k == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  for (const auto& row : confusion)
    if (row.size() != k) throw std::invalid_argument("metrics: confusion matrix must be square");

  MetricsReport r;
  r.epoch = epoch;
  r.split = std::move(split);
  r.confusion = std::move(confusion);
  const std::size_t total = r.total();
  if (total == 0) throw std::invalid_argument("metrics: no samples");

  std::size_t trace = 0;
  r.per_class_acc.assign(k, 0.0);
  r.precision.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    trace += r.confusion[i][i];
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += r.confusion[i][j];
      col += r.confusion[j][i];
    }
    const double tp = static_cast<double>(r.confusion[i][i]);
    const double rec = row ? tp / static_cast<double>(row) : 0.0;
    const double pre = col ? tp / static_cast<double>(col) : 0.0;
    r.per_class_acc[i] = rec;
    r.precision[i] = pre;
    r.f1[i] = pre + rec > 0.0 ? 2.0 * pre * rec / (pre + rec) : 0.0;
    r.m_rec += rec;
    r.m_pre += pre;
    r.m_f1 += r.f1[i];
  }
  r.acc = static_cast<double>(trace) / static_cast<double>(total);
  r.m_rec /= static_cast<double>(k);
  r.m_pre /= static_cast<double>(k);
  r.m_f1 /= static_cast<double>(k);
  return r;
}

MetricsReport metrics_from_predictions(std::span<const int> labels, std::span<const int> predictions,
                                       std::size_t num_classes, std::size_t epoch, std::string split) {
  if (labels.size() != predictions.size()) throw std::invalid_argument("metrics: label/prediction count mismatch");
  std::vector<std::vector<std::size_t>> confusion(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    const auto p = static_cast<std::size_t>(predictions[i]);
    if (y >= num_classes || p >= num_classes) throw std::out_of_range("metrics: class id out of range");
    ++confusion[y][p];
  }
  return metrics_from_confusion(std::move(confusion), epoch, std::move(split));
}

std::string metrics_csv_header(std::size_t num_classes) {
  std::string h = "epoch,split,acc,m_pre,m_rec,m_f1";
  for (std::size_t k = 1; k <= num_classes; ++k) h += ",acc_" + std::to_string(k);
  return h;
}

std::string metrics_csv_row(const MetricsReport& r) {
  auto f = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  std::string row = std::to_string(r.epoch) + "," + r.split + "," + f(r.acc) + "," + f(r.m_pre) + "," + f(r.m_rec) +
                    "," + f(r.m_f1);
  for (double a : r.per_class_acc) row += "," + f(a);
  return row;
}

}  // namespace cvcrf
