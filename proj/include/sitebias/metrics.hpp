#pragma once

#include <span>

#include <Eigen/Dense>

namespace sitebias {

/// Fraction of exact matches.
double accuracy(std::span<const int> pred, std::span<const int> truth);

/// Unweighted mean over the K classes of per-class F1. A class with
/// precision + recall = 0 (including one absent from both inputs) scores 0.
double macro_f1(std::span<const int> pred, std::span<const int> truth, int num_classes);

/// Mann-Whitney AUC of `scores` for samples with truth == positive_class
/// against the rest, ties counted one half.
double rank_auc(std::span<const double> scores, std::span<const int> truth, int positive_class);

/// Macro one-vs-rest AUC over the columns of a row-stochastic score matrix.
/// Classes lacking a positive or a negative are skipped; with two columns it
/// is the AUC of column 1 for class 1. Throws UndefinedMetricError when no
/// class can be scored.
double macro_ovr_auc(const Eigen::MatrixXd& scores, std::span<const int> truth);

}  // namespace sitebias
