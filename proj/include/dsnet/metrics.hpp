#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dsnet/common.hpp"

namespace dsnet {

/// Square count matrix, rows = true class, cols = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes)
      : classes_(classes),
        counts_(static_cast<std::size_t>(classes) * classes, 0) {
    if (classes < 1) throw DataError("confusion matrix needs >= 1 class");
  }

  void add(int true_class, int predicted_class, std::int64_t n = 1) {
    if (true_class < 1 || true_class > classes_ || predicted_class < 1 ||
        predicted_class > classes_) {
      throw DataError("confusion matrix: class ids must lie in 1.." +
                      std::to_string(classes_));
    }
    counts_[idx(true_class - 1, predicted_class - 1)] += n;
  }

  std::int64_t at(int true_class, int predicted_class) const {
    return counts_[idx(true_class - 1, predicted_class - 1)];
  }

  /// Shard merge: elementwise addition.
  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) {
      throw ShapeError("confusion matrix merge: class counts differ");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i)
      counts_[i] += other.counts_[i];
    return *this;
  }

  int classes() const { return classes_; }

  std::int64_t total() const {
    std::int64_t t = 0;
    for (auto v : counts_) t += v;
    return t;
  }

  std::int64_t row_total(int true_class) const {
    std::int64_t t = 0;
    for (int j = 0; j < classes_; ++j) t += counts_[idx(true_class - 1, j)];
    return t;
  }

  std::int64_t col_total(int predicted_class) const {
    std::int64_t t = 0;
    for (int i = 0; i < classes_; ++i)
      t += counts_[idx(i, predicted_class - 1)];
    return t;
  }

 private:
  std::size_t idx(int i, int j) const {
    return static_cast<std::size_t>(i) * classes_ + j;
  }
  int classes_;
  std::vector<std::int64_t> counts_;
};

struct Metrics {
  double oa = 0.0;     // trace / total
  double aa = 0.0;     // mean per-class recall
  double kappa = 0.0;  // chance-corrected agreement
  std::vector<double> recall;  // per class
};

inline Metrics metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw DataError("metrics: empty confusion matrix");
  Metrics m;
  std::int64_t trace = 0;
  std::int64_t chance = 0;
  for (int k = 1; k <= cm.classes(); ++k) {
    const std::int64_t row = cm.row_total(k);
    if (row == 0) {
      throw DataError("metrics: true class " + std::to_string(k) +
                      " has no samples, average accuracy undefined");
    }
    trace += cm.at(k, k);
    chance += row * cm.col_total(k);
    m.recall.push_back(static_cast<double>(cm.at(k, k)) /
                       static_cast<double>(row));
  }
  m.oa = static_cast<double>(trace) / static_cast<double>(total);
  double aa = 0.0;
  for (double r : m.recall) aa += r;
  m.aa = aa / static_cast<double>(cm.classes());
  const double pe = static_cast<double>(chance) /
                    (static_cast<double>(total) * static_cast<double>(total));
  m.kappa = (m.oa - pe) / (1.0 - pe);
  return m;
}

/// Human-readable per-class table with OA/AA/Kappa footer.
inline std::string metrics_report(const ConfusionMatrix& cm,
                                  const std::vector<std::int64_t>& train_counts,
                                  const std::vector<std::int64_t>& test_counts) {
  const Metrics m = metrics(cm);
  std::ostringstream os;
  os << std::fixed;
  os << std::setw(8) << "Class" << std::setw(10) << "Train" << std::setw(10)
     << "Test" << std::setw(12) << "Recall(%)" << "\n";
  for (int k = 1; k <= cm.classes(); ++k) {
    os << std::setw(8) << k << std::setw(10)
       << (k - 1 < static_cast<int>(train_counts.size())
               ? train_counts[static_cast<std::size_t>(k - 1)]
               : 0)
       << std::setw(10)
       << (k - 1 < static_cast<int>(test_counts.size())
               ? test_counts[static_cast<std::size_t>(k - 1)]
               : 0)
       << std::setw(12) << std::setprecision(2)
       << 100.0 * m.recall[static_cast<std::size_t>(k - 1)] << "\n";
  }
  os << std::string(40, '-') << "\n";
  os << std::setprecision(2);
  os << "OA (%)    " << 100.0 * m.oa << "\n";
  os << "AA (%)    " << 100.0 * m.aa << "\n";
  os << "Kappa (%) " << 100.0 * m.kappa << "\n";
  return os.str();
}

/// Machine-readable companion: per-class recall rows, then the summary.
inline std::string metrics_csv(const ConfusionMatrix& cm) {
  const Metrics m = metrics(cm);
  std::ostringstream os;
  os << std::setprecision(17);
  os << "key,value\n";
  for (int k = 1; k <= cm.classes(); ++k) {
    os << "recall_" << k << "," << m.recall[static_cast<std::size_t>(k - 1)]
       << "\n";
  }
  os << "oa," << m.oa << "\n";
  os << "aa," << m.aa << "\n";
  os << "kappa," << m.kappa << "\n";
  return os.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  for (int i = 1; i <= cm.classes(); ++i) {
    for (int j = 1; j <= cm.classes(); ++j) {
      if (j > 1) os << ",";
      os << cm.at(i, j);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace dsnet
