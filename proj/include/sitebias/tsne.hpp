#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sitebias/feature_store.hpp"

namespace sitebias {

enum class TsneInit { pca, random };

struct TsneConfig {
    double perplexity = 30;
    int iterations = 1000;
    double exaggeration = 12;
    int exaggeration_iters = 250;
    double learning_rate = 200;
    double momentum = 0.5;
    double final_momentum = 0.8;
    int momentum_switch = 250;
    TsneInit init = TsneInit::pca;
    std::uint64_t seed = 0;
    int kl_every = 50;

    static constexpr int kMaxPoints = 5000;

    void validate(Eigen::Index n) const;
};

struct Embedding2D {
    Eigen::MatrixXd coords;                       // N x 2
    std::vector<std::pair<int, double>> kl_history;  // (iteration, KL)
};

struct RowCalibration {
    double beta = 1;          // 1 / (2 sigma^2)
    double sigma = 1;
    double entropy_bits = 0;  // achieved Shannon entropy of the row
    int iterations = 0;
    Eigen::VectorXd p;        // conditional distribution, sums to 1
};

/// Bisection on the Gaussian precision so the conditional row has
/// entropy log2(perplexity) bits (<= 64 steps, tolerance 1e-5 bits).
RowCalibration perplexity_calibration(const Eigen::VectorXd& sq_distances, double perplexity);

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x);

/// Symmetrized joint affinities (p_{j|i} + p_{i|j}) / 2N.
Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& x, double perplexity);

/// KL(P || Q(Y)) with Q floored at 1e-12; terms with P = 0 contribute 0.
double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y);

/// dKL/dY for the Student-t kernel, with P scaled by `exaggeration`.
Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, double exaggeration = 1.0);

/// Top-2 principal component scores via power iteration, scaled so the
/// first column has standard deviation 1e-4.
Eigen::MatrixXd pca_init(const Eigen::MatrixXd& x);

/// Exact O(N^2) t-SNE to two dimensions.
Embedding2D tsne(const Eigen::MatrixXd& x, const TsneConfig& cfg);

/// Mean silhouette coefficient of `labels` under Euclidean distance.
double silhouette(const Eigen::MatrixXd& coords, std::span<const int> labels);

struct EmbedReport {
    std::vector<std::size_t> indices;  // cohort rows embedded
    Embedding2D embedding;
};

/// Embeds `representation` (one row per cohort record), subsampling to
/// `sample_cap` rows with a seeded draw when the cohort is larger.
EmbedReport embed_report(const Cohort& cohort, const Eigen::MatrixXd& representation, const TsneConfig& cfg,
                         std::size_t sample_cap);

void save_embedding_csv(const Cohort& cohort, const EmbedReport& report, const std::filesystem::path& path);
void save_kl_csv(const Embedding2D& embedding, const std::filesystem::path& path);

}  // namespace sitebias
