#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "sitebias/feature_store.hpp"
#include "sitebias/nn.hpp"

namespace sitebias {

/// Projection head A, disease head C_y and domain head C_d. The domain head
/// reads the projection through a gradient reversal layer of strength `lambda`.
struct DebiasModel {
    nn::Head projection;    // D -> hidden -> D'
    nn::Head disease_head;  // D' -> C
    nn::Head domain_head;   // D' -> H
    double lambda = 1.0;

    Eigen::Index in_dim() const { return projection.in_dim(); }
    Eigen::Index out_dim() const { return projection.out_dim(); }
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 64;
    double lambda = 1.0;
    int proj_hidden = 512;
    int proj_out = 256;
    nn::AdamConfig adam;
    std::uint64_t seed = 0;
    bool shuffle = true;
    /// Ramp lambda from 0 with 2/(1+exp(-10p))-1 over training progress p.
    bool lambda_warmup = false;

    void validate() const;
};

/// Features plus both label kinds for a subset of a cohort.
struct LabeledView {
    Eigen::MatrixXd x;
    std::vector<int> disease;
    std::vector<int> hospital;
    int num_diseases = 0;
    int num_hospitals = 0;
};

/// Rows `indices` of `cohort`, z-scored with `standardizer` when given.
LabeledView make_view(const Cohort& cohort, std::span<const std::size_t> indices,
                      const Standardizer* standardizer = nullptr);

DebiasModel init_debias_model(Eigen::Index in_dim, int num_diseases, int num_hospitals, const TrainConfig& config);

struct LossTerms {
    double loss_d = 0;
    double loss_h = 0;
    double loss_total = 0;
    nn::Grads projection;
    nn::Grads disease_head;
    nn::Grads domain_head;
    nn::Matrix disease_logits;
    nn::Matrix domain_logits;
};

/// Which gradients compute_losses returns.
///   adversarial: the training signal. The projection receives
///                dL_D - lambda * dL_H (reversed by the GRL), the domain head
///                the plain dL_H so it keeps learning to predict the site,
///                the disease head dL_D.
///   exact:       the true gradient of L_total with the GRL treated as a plain
///                identity, for finite-difference verification.
enum class GradientFlow { adversarial, exact };

/// L_total = L_D + lambda * L_H and the gradients selected by `flow`.
LossTerms compute_losses(const DebiasModel& model, const nn::Matrix& x, std::span<const int> disease,
                         std::span<const int> hospital, double lambda,
                         GradientFlow flow = GradientFlow::adversarial);
LossTerms compute_losses(const DebiasModel& model, const nn::Matrix& x, std::span<const int> disease,
                         std::span<const int> hospital);

struct EpochStats {
    double loss_d = 0;
    double loss_h = 0;
    double loss_total = 0;
    double acc_d = 0;
    double acc_h = 0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;

    void save_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    DebiasModel model;
    TrainHistory history;
};

/// Mini-batch training of all three heads with a single optimizer. Throws
/// NumericalError naming the epoch and batch on a non-finite loss.
TrainResult train_adversarial(const LabeledView& train, const TrainConfig& config);

/// z = A(x); the inference-time representation.
nn::Matrix transform(const DebiasModel& model, const nn::Matrix& x);

struct Prediction {
    std::vector<int> labels;
    nn::Matrix probabilities;
};

/// Argmax of softmax rows, ties broken toward the lower index.
std::vector<int> argmax_rows(const nn::Matrix& scores);

Prediction predict_disease(const DebiasModel& model, const nn::Matrix& x);

struct Checkpoint {
    DebiasModel model;
    std::optional<Standardizer> standardizer;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace sitebias
