#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sitebias {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labels and grouping key of one patch. The feature vector lives in row `i`
/// of the owning Cohort's feature matrix.
struct PatchRecord {
    std::string patch_id;
    std::string wsi_id;
    int hospital = 0;
    int disease = 0;

    bool operator==(const PatchRecord&) const = default;
};

/// A set of patches sharing one feature width. Features are stored as 32-bit
/// reals (N x D, row-major); all arithmetic on them happens in 64-bit.
struct Cohort {
    std::vector<PatchRecord> records;
    FeatureMatrix features;
    std::vector<std::string> hospital_names;
    std::vector<std::string> disease_names;

    std::size_t size() const { return records.size(); }
    int dim() const { return static_cast<int>(features.cols()); }
    int num_hospitals() const { return static_cast<int>(hospital_names.size()); }
    int num_diseases() const { return static_cast<int>(disease_names.size()); }

    /// Rows `indices` widened to double.
    Eigen::MatrixXd matrix(std::span<const std::size_t> indices) const;
    Eigen::MatrixXd matrix() const;

    std::vector<int> hospitals(std::span<const std::size_t> indices) const;
    std::vector<int> diseases(std::span<const std::size_t> indices) const;

    /// Index of the hospital called `name`; throws ArgumentError listing valid names.
    int hospital_index(const std::string& name) const;

    /// Throws ValidationError on any broken invariant.
    void validate() const;

    bool operator==(const Cohort& other) const;
};

Cohort load_csv(const std::filesystem::path& path);
void save_csv(const Cohort& cohort, const std::filesystem::path& path);

void save_binary(const Cohort& cohort, const std::filesystem::path& path);
Cohort load_binary(const std::filesystem::path& path);

/// Picks the reader from the extension (".csv" is text, anything else binary).
Cohort load_cohort(const std::filesystem::path& path);

/// Per-dimension z-scoring fitted on a subset of records.
struct Standardizer {
    static constexpr double kMinStd = 1e-8;

    Eigen::VectorXd mean;
    Eigen::VectorXd std;

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
};

Standardizer fit_standardizer(const Cohort& cohort, std::span<const std::size_t> include);
Standardizer fit_standardizer(const Eigen::MatrixXd& x);

/// Slide-grouped k-fold assignment.
struct FoldPlan {
    int k = 0;
    std::map<std::string, int> assignment;  // wsi_id -> fold

    int fold_of(const std::string& wsi_id) const;

    /// Record indices of `cohort` in fold `fold` (test) or outside it (train).
    std::vector<std::size_t> test_indices(const Cohort& cohort, int fold) const;
    std::vector<std::size_t> train_indices(const Cohort& cohort, int fold) const;
};

FoldPlan grouped_kfold(const Cohort& cohort, int k, std::uint64_t seed);

void save_fold_plan(const FoldPlan& plan, const std::filesystem::path& path);
FoldPlan load_fold_plan(const std::filesystem::path& path);

/// Parametric multi-site cohort generator.
///
/// Each (hospital, disease) cell gets `wsis_per_cell` slides of
/// `patches_per_wsi` patches drawn from N(mu, noise_sigma^2 I). The mean
/// carries `disease_signal * (+-1)` on dims [0, 8): dim j is positive for
/// class (j mod C) and negative otherwise, so the binary case is a pure sign
/// flip. It carries `hospital_signal * (+-1)` on dims [8, 8+H): positive on
/// dim 8+h for hospital h, negative on the rest of the block. With
/// probability `confound` a slide's disease is overridden by (h mod C).
/// `overlap` additionally shifts hospital h along the disease pattern of
/// class (h mod C) by `overlap * hospital_signal`, which puts site and
/// disease information in a shared subspace.
struct SynthSpec {
    int dims = 16;
    int hospitals = 4;
    int diseases = 2;
    int wsis_per_cell = 5;
    int patches_per_wsi = 100;
    double disease_signal = 1.0;
    double hospital_signal = 1.0;
    double confound = 0.0;
    double overlap = 0.0;
    double noise_sigma = 1.0;
    std::uint64_t seed = 0;

    static constexpr int kDiseaseDims = 8;

    void validate() const;
};

Cohort synth_generate(const SynthSpec& spec);

}  // namespace sitebias
