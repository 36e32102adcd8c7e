#pragma once

#include <span>

namespace nlskit {

/// Macro-averaged F1 over the classes that occur in `truth` or `predicted`.
/// A participating class with P + R = 0 scores 0. Throws ArgumentError on a
/// length mismatch or empty input.
double f1_macro(std::span<const int> truth, std::span<const int> predicted);

/// Most frequent training label; ties go to label 0.
int majority_label(std::span<const int> train_labels);

/// F1-macro of predicting majority_label(train_labels) for every test item.
double majority_baseline(std::span<const int> train_labels, std::span<const int> test_truth);

}  // namespace nlskit
