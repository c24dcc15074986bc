#include "sitebias/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "sitebias/errors.hpp"
#include "sitebias/metrics.hpp"
#include "sitebias/parallel.hpp"

namespace sitebias {

void ProbeConfig::validate() const {
    if (hidden < 0) throw ArgumentError("probe hidden width must be >= 0");
    if (epochs < 1) throw ArgumentError("probe epochs must be >= 1");
    if (batch_size < 1) throw ArgumentError("probe batch_size must be >= 1");
    if (!(adam.lr > 0.0)) throw ArgumentError("probe learning rate must be > 0");
}

nn::Head train_probe(const nn::Matrix& z, std::span<const int> labels, int num_classes, const ProbeConfig& cfg) {
    cfg.validate();
    const auto n = static_cast<std::size_t>(z.rows());
    if (labels.size() != n || n == 0) throw ArgumentError("train_probe: empty or mismatched training set");
    if (num_classes < 2) throw ArgumentError("train_probe: need at least two classes");
    if (std::set<int>(labels.begin(), labels.end()).size() < 2)
        throw ArgumentError("train_probe: training labels contain a single class");

    nn::Head head = cfg.hidden > 0
                        ? nn::init_mlp({z.cols(), cfg.hidden, num_classes}, nn::Activation::relu, cfg.seed)
                        : nn::init_mlp({z.cols(), num_classes}, nn::Activation::identity, cfg.seed);
    const std::array<const nn::Head*, 1> const_heads{&head};
    const std::array<nn::Head*, 1> heads{&head};
    auto adam = nn::make_adam_state<double>(const_heads, cfg.adam);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    const auto batch = static_cast<std::size_t>(cfg.batch_size);
    nn::Matrix xb;
    std::vector<int> yb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t lo = 0; lo < n; lo += batch) {
            const std::size_t hi = std::min(n, lo + batch);
            xb.resize(static_cast<Eigen::Index>(hi - lo), z.cols());
            yb.resize(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                xb.row(static_cast<Eigen::Index>(i - lo)) = z.row(static_cast<Eigen::Index>(order[i]));
                yb[i - lo] = labels[order[i]];
            }
            auto [logits, cache] = nn::forward(head, xb);
            auto ce = nn::softmax_ce<double>(logits, yb);
            if (!std::isfinite(ce.loss))
                throw NumericalError("probe: non-finite loss at epoch " + std::to_string(epoch));
            const std::array<nn::Grads, 1> grads{nn::backward(head, cache, ce.dlogits).first};
            nn::adam_step<double>(heads, grads, adam);
        }
    }
    return head;
}

std::string_view to_string(Target t) { return t == Target::hospital ? "hospital" : "disease"; }

std::string_view to_string(Method m) {
    switch (m) {
        case Method::raw_probe: return "raw-probe";
        case Method::adversarial: return "adversarial";
        case Method::cca: return "cca";
    }
    return "?";
}

Target parse_target(std::string_view s) {
    if (s == "hospital") return Target::hospital;
    if (s == "disease") return Target::disease;
    throw ArgumentError("unknown task '" + std::string(s) + "'");
}

Method parse_method(std::string_view s) {
    if (s == "raw-probe") return Method::raw_probe;
    if (s == "adversarial") return Method::adversarial;
    if (s == "cca") return Method::cca;
    throw ArgumentError("unknown method '" + std::string(s) + "'");
}

void MetricsReport::summarize() {
    if (folds.empty()) throw ArgumentError("metrics report has no folds");
    const double k = static_cast<double>(folds.size());
    mean = {};
    for (const auto& f : folds) {
        mean.accuracy += f.accuracy;
        mean.auc += f.auc;
        mean.f1 += f.f1;
    }
    mean.accuracy /= k;
    mean.auc /= k;
    mean.f1 /= k;
    FoldMetrics var{};
    for (const auto& f : folds) {
        var.accuracy += (f.accuracy - mean.accuracy) * (f.accuracy - mean.accuracy);
        var.auc += (f.auc - mean.auc) * (f.auc - mean.auc);
        var.f1 += (f.f1 - mean.f1) * (f.f1 - mean.f1);
    }
    std = {std::sqrt(var.accuracy / k), std::sqrt(var.auc / k), std::sqrt(var.f1 / k)};
}

namespace {

std::uint64_t target_stream(Target t) { return t == Target::hospital ? 1 : 2; }

}  // namespace

PipelineResult evaluate_representation(const Cohort& cohort, const FoldPlan& folds,
                                       const Representation& representation, std::span<const Target> targets,
                                       const ProbeConfig& probe, const PipelineOptions& options) {
    if (folds.k < 2) throw ArgumentError("fold plan needs k >= 2");
    if (targets.empty()) throw ArgumentError("no targets requested");
    probe.validate();
    if (representation.method == Method::adversarial) representation.train.validate();

    const auto k = static_cast<std::size_t>(folds.k);
    std::vector<std::vector<FoldMetrics>> fold_metrics(k, std::vector<FoldMetrics>(targets.size()));
    PipelineResult result;
    result.folds.resize(k);

    // Validate coverage up front so workers never see an unknown slide.
    for (const auto& r : cohort.records) folds.fold_of(r.wsi_id);

    parallel_for(k, options.workers, [&](std::size_t f) {
        const int fold = static_cast<int>(f);
        const auto train_idx = folds.train_indices(cohort, fold);
        const auto test_idx = folds.test_indices(cohort, fold);
        if (test_idx.empty()) throw ValidationError("fold " + std::to_string(fold) + " is empty");
        if (train_idx.empty()) throw ValidationError("fold " + std::to_string(fold) + " leaves no training data");

        std::optional<Standardizer> standardizer;
        if (options.standardize) {
            if (options.observer) options.observer(fold, "standardizer", train_idx);
            standardizer = fit_standardizer(cohort, train_idx);
        }
        const Standardizer* s = standardizer ? &*standardizer : nullptr;
        LabeledView train = make_view(cohort, train_idx, s);
        LabeledView test = make_view(cohort, test_idx, s);

        nn::Matrix z_train, z_test;
        switch (representation.method) {
            case Method::raw_probe:
                z_train = train.x;
                z_test = test.x;
                break;
            case Method::adversarial: {
                if (options.observer) options.observer(fold, "debias", train_idx);
                TrainConfig cfg = representation.train;
                cfg.seed = derive_seed(representation.train.seed, 100 + f);
                auto trained = train_adversarial(train, cfg);
                z_train = transform(trained.model, train.x);
                z_test = transform(trained.model, test.x);
                result.folds[f].checkpoint = Checkpoint{std::move(trained.model), standardizer};
                result.folds[f].history = std::move(trained.history);
                break;
            }
            case Method::cca: {
                if (options.observer) options.observer(fold, "cca", train_idx);
                auto proj = fit_alignment(train.x, train.disease, train.hospital, cohort.num_hospitals(),
                                          representation.cca_reference, representation.cca_k,
                                          representation.cca_ridge, derive_seed(representation.cca_seed, f));
                z_train = apply_alignment(proj, train.x, train.hospital);
                z_test = apply_alignment(proj, test.x, test.hospital);
                result.folds[f].cca = std::move(proj);
                break;
            }
        }

        for (std::size_t t = 0; t < targets.size(); ++t) {
            const bool hosp = targets[t] == Target::hospital;
            const auto& y_train = hosp ? train.hospital : train.disease;
            const auto& y_test = hosp ? test.hospital : test.disease;
            const int classes = hosp ? cohort.num_hospitals() : cohort.num_diseases();

            ProbeConfig cfg = probe;
            cfg.seed = derive_seed(probe.seed, f * 8 + target_stream(targets[t]));
            if (options.observer) options.observer(fold, "probe", train_idx);
            const nn::Head head = train_probe(z_train, y_train, classes, cfg);
            const nn::Matrix logits = nn::predict(head, z_test);
            const nn::Matrix scores = nn::softmax_rows(logits);
            const auto pred = argmax_rows(logits);
            fold_metrics[f][t] = {accuracy(pred, y_test), macro_ovr_auc(scores, y_test),
                                  macro_f1(pred, y_test, classes)};
        }
    });

    for (std::size_t t = 0; t < targets.size(); ++t) {
        MetricsReport r;
        r.task = targets[t];
        r.method = representation.method;
        if (representation.method == Method::adversarial) r.lambda = representation.train.lambda;
        for (std::size_t f = 0; f < k; ++f) r.folds.push_back(fold_metrics[f][t]);
        r.summarize();
        result.reports.push_back(std::move(r));
    }
    return result;
}

MetricsReport bias_pipeline(const Cohort& cohort, const FoldPlan& folds, const Representation& representation,
                            Target target, const ProbeConfig& probe, const PipelineOptions& options) {
    const std::array<Target, 1> targets{target};
    return std::move(evaluate_representation(cohort, folds, representation, targets, probe, options).reports.front());
}

SweepResult lambda_sweep(const Cohort& cohort, const FoldPlan& folds, std::span<const double> lambdas,
                         const TrainConfig& train, const ProbeConfig& probe, const PipelineOptions& options) {
    if (lambdas.empty()) throw ArgumentError("lambda sweep needs at least one value");
    std::vector<double> grid(lambdas.begin(), lambdas.end());
    for (double l : grid)
        if (!(l >= 0.0)) throw ArgumentError("lambda values must be >= 0");
    std::sort(grid.begin(), grid.end());
    if (std::adjacent_find(grid.begin(), grid.end()) != grid.end())
        throw ArgumentError("lambda values must be distinct");

    SweepResult out;
    const std::array<Target, 2> targets{Target::disease, Target::hospital};
    for (double l : grid) {
        Representation rep;
        rep.method = Method::adversarial;
        rep.train = train;
        rep.train.lambda = l;
        auto res = evaluate_representation(cohort, folds, rep, targets, probe, options);
        out.points.push_back({l, std::move(res.reports[0]), std::move(res.reports[1])});
    }
    return out;
}

void SweepResult::save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "lambda,task,metric,mean,std\n";
    for (const auto& p : points) {
        for (const auto* r : {&p.disease, &p.hospital}) {
            out << p.lambda << ',' << to_string(r->task) << ",accuracy," << r->mean.accuracy << ',' << r->std.accuracy
                << '\n';
            out << p.lambda << ',' << to_string(r->task) << ",auc," << r->mean.auc << ',' << r->std.auc << '\n';
            out << p.lambda << ',' << to_string(r->task) << ",f1," << r->mean.f1 << ',' << r->std.f1 << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace sitebias
