#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sitebias/adversarial.hpp"
#include "sitebias/cca.hpp"
#include "sitebias/feature_store.hpp"
#include "sitebias/nn.hpp"

namespace sitebias {

struct ProbeConfig {
    int hidden = 256;  // 0 gives a linear probe
    int epochs = 30;
    int batch_size = 64;
    nn::AdamConfig adam;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Softmax-CE classifier on a frozen representation.
nn::Head train_probe(const nn::Matrix& z, std::span<const int> labels, int num_classes, const ProbeConfig& cfg);

enum class Target { hospital, disease };
enum class Method { raw_probe, adversarial, cca };

std::string_view to_string(Target t);
std::string_view to_string(Method m);
Target parse_target(std::string_view s);
Method parse_method(std::string_view s);

struct FoldMetrics {
    double accuracy = 0;
    double auc = 0;
    double f1 = 0;
};

struct MetricsReport {
    Target task = Target::hospital;
    Method method = Method::raw_probe;
    std::optional<double> lambda;
    std::vector<FoldMetrics> folds;
    FoldMetrics mean;
    FoldMetrics std;  // population std over folds

    /// Fills mean/std from the fold entries.
    void summarize();
};

/// How the representation stage of the pipeline maps standardized features.
struct Representation {
    Method method = Method::raw_probe;
    TrainConfig train;  // adversarial
    int cca_reference = 0;
    int cca_k = 8;
    std::optional<double> cca_ridge;
    std::uint64_t cca_seed = 0;
};

/// Called with every index set a fold fits anything on (stage is
/// "standardizer", "debias", "cca" or "probe").
using FitObserver = std::function<void(int fold, std::string_view stage, std::span<const std::size_t> indices)>;

struct PipelineOptions {
    bool standardize = true;
    int workers = 1;
    FitObserver observer;
};

struct FoldArtifacts {
    std::optional<Checkpoint> checkpoint;
    std::optional<TrainHistory> history;
    std::optional<CcaProjection> cca;
};

struct PipelineResult {
    std::vector<MetricsReport> reports;  // one per requested target, same order
    std::vector<FoldArtifacts> folds;
};

/// Per fold: standardize on the training folds, map both splits through the
/// representation (fitted on the training folds only), train one probe per
/// target on the training representation and score it on the held-out fold.
PipelineResult evaluate_representation(const Cohort& cohort, const FoldPlan& folds,
                                       const Representation& representation, std::span<const Target> targets,
                                       const ProbeConfig& probe, const PipelineOptions& options = {});

MetricsReport bias_pipeline(const Cohort& cohort, const FoldPlan& folds, const Representation& representation,
                            Target target, const ProbeConfig& probe, const PipelineOptions& options = {});

struct SweepPoint {
    double lambda = 0;
    MetricsReport disease;
    MetricsReport hospital;
};

struct SweepResult {
    std::vector<SweepPoint> points;  // strictly increasing lambda

    void save_csv(const std::filesystem::path& path) const;
};

/// Adversarial pipeline for both targets at every lambda in `lambdas`
/// (non-negative, distinct; reported in increasing order).
SweepResult lambda_sweep(const Cohort& cohort, const FoldPlan& folds, std::span<const double> lambdas,
                         const TrainConfig& train, const ProbeConfig& probe, const PipelineOptions& options = {});

}  // namespace sitebias
