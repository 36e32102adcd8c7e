#include "nlskit/metrics.hpp"

#include <map>
#include <vector>

#include "nlskit/error.hpp"

namespace nlskit {

double f1_macro(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ArgumentError("f1_macro: truth and predictions differ in length");
  if (truth.empty()) throw ArgumentError("f1_macro: empty input");

  struct Tally {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<int, Tally> classes;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++classes[truth[i]].tp;
    } else {
      ++classes[truth[i]].fn;
      ++classes[predicted[i]].fp;
    }
  }
  double total = 0.0;
  for (const auto& [label, t] : classes) {
    // F1 = 2PR / (P + R) = 2tp / (2tp + fp + fn); zero when tp == 0.
    if (t.tp > 0) total += 2.0 * static_cast<double>(t.tp) / static_cast<double>(2 * t.tp + t.fp + t.fn);
  }
  return total / static_cast<double>(classes.size());
}

int majority_label(std::span<const int> train_labels) {
  if (train_labels.empty()) throw ArgumentError("majority baseline needs training labels");
  std::map<int, std::size_t> counts;
  for (int y : train_labels) ++counts[y];
  int best = counts.begin()->first;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    // Ascending label order, so strict > keeps the smaller label on ties.
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  return best;
}

double majority_baseline(std::span<const int> train_labels, std::span<const int> test_truth) {
  const int label = majority_label(train_labels);
  const std::vector<int> predicted(test_truth.size(), label);
  return f1_macro(test_truth, predicted);
}

}  // namespace nlskit
