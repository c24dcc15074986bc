#include "sitebias/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sitebias/errors.hpp"

namespace sitebias {

namespace {

void check_lengths(std::span<const int> pred, std::span<const int> truth) {
    if (pred.size() != truth.size()) throw ArgumentError("prediction and truth lengths differ");
    if (truth.empty()) throw ArgumentError("metric needs at least one sample");
}

}  // namespace

double accuracy(std::span<const int> pred, std::span<const int> truth) {
    check_lengths(pred, truth);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double macro_f1(std::span<const int> pred, std::span<const int> truth, int num_classes) {
    check_lengths(pred, truth);
    if (num_classes < 1) throw ArgumentError("macro_f1: need at least one class");
    const auto k = static_cast<std::size_t>(num_classes);
    std::vector<std::size_t> tp(k), fp(k), fn(k);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= num_classes || truth[i] < 0 || truth[i] >= num_classes)
            throw ArgumentError("macro_f1: label out of range");
        const auto p = static_cast<std::size_t>(pred[i]);
        const auto t = static_cast<std::size_t>(truth[i]);
        if (p == t) {
            ++tp[p];
        } else {
            ++fp[p];
            ++fn[t];
        }
    }
    double sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
        // 2PR/(P+R) == 2TP/(2TP+FP+FN); zero when TP == 0.
        const auto denom = 2 * tp[c] + fp[c] + fn[c];
        if (tp[c] > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    }
    return sum / static_cast<double>(k);
}

double rank_auc(std::span<const double> scores, std::span<const int> truth, int positive_class) {
    if (scores.size() != truth.size()) throw ArgumentError("rank_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::uint64_t n_pos = 0, n_neg = 0, wins = 0, ties = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos_here = 0, neg_here = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (truth[order[j]] == positive_class)
                ++pos_here;
            else
                ++neg_here;
            ++j;
        }
        wins += pos_here * neg_below;
        ties += pos_here * neg_here;
        neg_below += neg_here;
        n_pos += pos_here;
        n_neg += neg_here;
        i = j;
    }
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUC needs at least one positive and one negative");
    return (static_cast<double>(wins) + 0.5 * static_cast<double>(ties)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double macro_ovr_auc(const Eigen::MatrixXd& scores, std::span<const int> truth) {
    const auto n = scores.rows();
    const auto k = scores.cols();
    if (static_cast<std::size_t>(n) != truth.size()) throw ArgumentError("macro_ovr_auc: length mismatch");
    if (k < 2) throw ArgumentError("macro_ovr_auc: need at least two score columns");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (std::abs(scores.row(i).sum() - 1.0) > 1e-6)
            throw ArgumentError("macro_ovr_auc: score rows must sum to 1");
        if (truth[static_cast<std::size_t>(i)] < 0 || truth[static_cast<std::size_t>(i)] >= k)
            throw ArgumentError("macro_ovr_auc: label out of range");
    }

    std::vector<double> column(static_cast<std::size_t>(n));
    auto class_auc = [&](Eigen::Index c, double& out) {
        std::size_t pos = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            column[static_cast<std::size_t>(i)] = scores(i, c);
            pos += truth[static_cast<std::size_t>(i)] == c;
        }
        if (pos == 0 || pos == static_cast<std::size_t>(n)) return false;
        out = rank_auc(column, truth, static_cast<int>(c));
        return true;
    };

    if (k == 2) {
        double auc = 0;
        if (!class_auc(1, auc)) throw UndefinedMetricError("AUC undefined: only one class present");
        return auc;
    }
    double sum = 0;
    int used = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
        double auc = 0;
        if (class_auc(c, auc)) {
            sum += auc;
            ++used;
        }
    }
    if (used == 0) throw UndefinedMetricError("AUC undefined: no class has both positives and negatives");
    return sum / used;
}

}  // namespace sitebias
