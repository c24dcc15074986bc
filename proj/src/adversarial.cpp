#include "sitebias/adversarial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "sitebias/errors.hpp"
#include "sitebias/parallel.hpp"

namespace sitebias {

void TrainConfig::validate() const {
    if (epochs < 1) throw ArgumentError("epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
    if (!(lambda >= 0.0)) throw ArgumentError("lambda must be >= 0");
    if (proj_hidden < 1 || proj_out < 1) throw ArgumentError("projection widths must be >= 1");
    if (!(adam.lr > 0.0)) throw ArgumentError("learning rate must be > 0");
}

LabeledView make_view(const Cohort& cohort, std::span<const std::size_t> indices, const Standardizer* standardizer) {
    LabeledView v;
    v.x = cohort.matrix(indices);
    if (standardizer) v.x = standardizer->apply(v.x);
    v.disease = cohort.diseases(indices);
    v.hospital = cohort.hospitals(indices);
    v.num_diseases = cohort.num_diseases();
    v.num_hospitals = cohort.num_hospitals();
    return v;
}

DebiasModel init_debias_model(Eigen::Index in_dim, int num_diseases, int num_hospitals, const TrainConfig& config) {
    DebiasModel m;
    m.projection = nn::init_mlp({in_dim, config.proj_hidden, config.proj_out}, nn::Activation::relu,
                                derive_seed(config.seed, 1));
    m.disease_head = nn::init_mlp({config.proj_out, num_diseases}, nn::Activation::identity,
                                  derive_seed(config.seed, 2));
    m.domain_head = nn::init_mlp({config.proj_out, num_hospitals}, nn::Activation::identity,
                                 derive_seed(config.seed, 3));
    m.lambda = config.lambda;
    return m;
}

LossTerms compute_losses(const DebiasModel& model, const nn::Matrix& x, std::span<const int> disease,
                         std::span<const int> hospital, double lambda, GradientFlow flow) {
    auto [z, proj_cache] = nn::forward(model.projection, x);

    auto [disease_logits, disease_cache] = nn::forward(model.disease_head, z);
    auto disease_ce = nn::softmax_ce<double>(disease_logits, disease);
    auto [disease_grads, dz_disease] = nn::backward(model.disease_head, disease_cache, disease_ce.dlogits);

    const nn::Matrix z_rev = nn::grl_forward(z);
    auto [domain_logits, domain_cache] = nn::forward(model.domain_head, z_rev);
    auto domain_ce = nn::softmax_ce<double>(domain_logits, hospital);
    auto [domain_grads, dz_rev] = nn::backward(model.domain_head, domain_cache, domain_ce.dlogits);

    nn::Matrix dz;
    if (flow == GradientFlow::adversarial) {
        dz = dz_disease + nn::grl_backward(dz_rev, lambda);
    } else {
        if (!(lambda >= 0.0)) throw ArgumentError("lambda must be >= 0");
        dz = dz_disease + lambda * dz_rev;
        for (auto& l : domain_grads.layers) {
            l.dW *= lambda;
            l.db *= lambda;
        }
    }
    auto [proj_grads, dx] = nn::backward(model.projection, proj_cache, dz);

    LossTerms out;
    out.loss_d = disease_ce.loss;
    out.loss_h = domain_ce.loss;
    out.loss_total = out.loss_d + lambda * out.loss_h;
    out.projection = std::move(proj_grads);
    out.disease_head = std::move(disease_grads);
    out.domain_head = std::move(domain_grads);
    out.disease_logits = std::move(disease_logits);
    out.domain_logits = std::move(domain_logits);
    return out;
}

LossTerms compute_losses(const DebiasModel& model, const nn::Matrix& x, std::span<const int> disease,
                         std::span<const int> hospital) {
    return compute_losses(model, x, disease, hospital, model.lambda);
}

std::vector<int> argmax_rows(const nn::Matrix& scores) {
    std::vector<int> out(static_cast<std::size_t>(scores.rows()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < scores.cols(); ++j)
            if (scores(i, j) > scores(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

namespace {

int count_correct(const nn::Matrix& logits, std::span<const int> labels) {
    const auto pred = argmax_rows(logits);
    int n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == labels[i];
    return n;
}

void require_two_classes(std::span<const int> labels, const char* what) {
    std::set<int> seen(labels.begin(), labels.end());
    if (seen.size() < 2) throw ArgumentError(std::string("training needs at least two ") + what + " classes");
}

}  // namespace

TrainResult train_adversarial(const LabeledView& train, const TrainConfig& config) {
    config.validate();
    const auto n = static_cast<std::size_t>(train.x.rows());
    if (n == 0 || train.disease.size() != n || train.hospital.size() != n)
        throw ArgumentError("train_adversarial: empty or inconsistent training view");
    require_two_classes(train.disease, "disease");
    require_two_classes(train.hospital, "hospital");

    TrainResult result;
    auto& model = result.model;
    model = init_debias_model(train.x.cols(), train.num_diseases, train.num_hospitals, config);

    const std::array<const nn::Head*, 3> const_heads{&model.projection, &model.disease_head, &model.domain_head};
    const std::array<nn::Head*, 3> heads{&model.projection, &model.disease_head, &model.domain_head};
    auto adam = nn::make_adam_state<double>(const_heads, config.adam);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const std::size_t batches_per_epoch = (n + batch - 1) / batch;

    nn::Matrix xb;
    std::vector<int> yb, db;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (config.shuffle) {
            std::mt19937_64 rng(derive_seed(config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
        }
        EpochStats stats;
        int correct_d = 0, correct_h = 0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * batch;
            const std::size_t hi = std::min(n, lo + batch);
            xb.resize(static_cast<Eigen::Index>(hi - lo), train.x.cols());
            yb.assign(hi - lo, 0);
            db.assign(hi - lo, 0);
            for (std::size_t i = lo; i < hi; ++i) {
                xb.row(static_cast<Eigen::Index>(i - lo)) = train.x.row(static_cast<Eigen::Index>(order[i]));
                yb[i - lo] = train.disease[order[i]];
                db[i - lo] = train.hospital[order[i]];
            }

            double lambda = config.lambda;
            if (config.lambda_warmup) {
                const double p = static_cast<double>(epoch * batches_per_epoch + b) /
                                 static_cast<double>(config.epochs * batches_per_epoch);
                lambda *= 2.0 / (1.0 + std::exp(-10.0 * p)) - 1.0;
            }
            auto terms = compute_losses(model, xb, yb, db, lambda);
            if (!std::isfinite(terms.loss_total))
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(b));

            const double w = static_cast<double>(hi - lo);
            stats.loss_d += terms.loss_d * w;
            stats.loss_h += terms.loss_h * w;
            stats.loss_total += terms.loss_total * w;
            correct_d += count_correct(terms.disease_logits, yb);
            correct_h += count_correct(terms.domain_logits, db);

            const std::array<nn::Grads, 3> grads{std::move(terms.projection), std::move(terms.disease_head),
                                                 std::move(terms.domain_head)};
            try {
                nn::adam_step<double>(heads, grads, adam);
            } catch (const NumericalError&) {
                throw NumericalError("non-finite gradient at epoch " + std::to_string(epoch) + " batch " +
                                     std::to_string(b));
            }
        }
        const double nd = static_cast<double>(n);
        stats.loss_d /= nd;
        stats.loss_h /= nd;
        stats.loss_total /= nd;
        stats.acc_d = correct_d / nd;
        stats.acc_h = correct_h / nd;
        result.history.epochs.push_back(stats);
    }
    return result;
}

void TrainHistory::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "epoch,loss_d,loss_h,loss_total,acc_d,acc_h\n";
    out.precision(17);
    for (std::size_t e = 0; e < epochs.size(); ++e) {
        const auto& s = epochs[e];
        out << e << ',' << s.loss_d << ',' << s.loss_h << ',' << s.loss_total << ',' << s.acc_d << ',' << s.acc_h
            << '\n';
    }
}

nn::Matrix transform(const DebiasModel& model, const nn::Matrix& x) {
    if (x.cols() != model.in_dim())
        throw ArgumentError("transform: feature width " + std::to_string(x.cols()) + " != model input " +
                            std::to_string(model.in_dim()));
    return nn::predict(model.projection, x);
}

Prediction predict_disease(const DebiasModel& model, const nn::Matrix& x) {
    Prediction p;
    const nn::Matrix logits = nn::predict(model.disease_head, transform(model, x));
    p.labels = argmax_rows(logits);
    p.probabilities = nn::softmax_rows(logits);
    return p;
}

}  // namespace sitebias
