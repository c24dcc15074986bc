#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sitebias/feature_store.hpp"

namespace sitebias {

/// Canonical directions for two row-paired views.
struct CcaFit {
    Eigen::MatrixXd wx;            // Dx x k
    Eigen::MatrixXd wy;            // Dy x k
    Eigen::VectorXd correlations;  // k, descending
    Eigen::VectorXd mean_x;
    Eigen::VectorXd mean_y;
};

/// Ridge added to each covariance diagonal: 1e-6 * trace(cov) / D.
double default_ridge(const Eigen::MatrixXd& cov);

/// Top-k canonical pairs via the SVD of Sxx^{-1/2} Sxy Syy^{-1/2}, with
/// covariances computed on centered data (divided by N) plus a ridge.
/// `ridge` unset uses default_ridge per view; an explicit 0 disables it and
/// a singular covariance then raises NumericalError.
CcaFit fit_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k, std::optional<double> ridge = {});

/// Per-hospital CCA against a reference hospital.
struct CcaProjection {
    int reference = 0;
    int k = 0;
    std::optional<double> ridge;
    std::vector<Eigen::VectorXd> means;         // per hospital, length D
    std::vector<Eigen::MatrixXd> weights;       // per hospital, D x k
    std::vector<Eigen::VectorXd> correlations;  // per hospital, length k (reference: its self-fit or average)

    Eigen::Index in_dim() const { return weights.empty() ? 0 : weights.front().rows(); }
};

/// Fits the alignment on `x` (rows paired with `disease`/`hospital` labels).
/// Each non-reference hospital is row-paired with reference samples of the
/// same disease, drawn without replacement when the reference class is large
/// enough and with replacement otherwise.
CcaProjection fit_alignment(const Eigen::MatrixXd& x, std::span<const int> disease, std::span<const int> hospital,
                            int num_hospitals, int reference, int k, std::optional<double> ridge,
                            std::uint64_t seed);

/// Centers each row by its hospital's fitted mean and maps it with that
/// hospital's weights; the reference uses the average of its paired Wy.
Eigen::MatrixXd apply_alignment(const CcaProjection& projection, const Eigen::MatrixXd& x,
                                std::span<const int> hospital);

/// Fit on the whole cohort and return a cohort of width k with all labels kept.
Cohort align_domains(const Cohort& cohort, int reference, int k, std::optional<double> ridge, std::uint64_t seed,
                     CcaProjection* fitted = nullptr);

void save_cca(const CcaProjection& projection, const std::filesystem::path& path);
CcaProjection load_cca(const std::filesystem::path& path);

}  // namespace sitebias
