#include "sitebias/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "sitebias/errors.hpp"
#include "sitebias/parallel.hpp"

namespace sitebias {

namespace {

constexpr double kFloor = 1e-12;

}  // namespace

void TsneConfig::validate(Eigen::Index n) const {
    if (n < 10) throw ArgumentError("tsne: need at least 10 points");
    if (!(perplexity > 1.0) || !(perplexity < static_cast<double>(n) / 3.0))
        throw ArgumentError("tsne: perplexity must lie in (1, N/3)");
    if (iterations < 250) throw ArgumentError("tsne: iterations must be >= 250");
    if (!(learning_rate > 0)) throw ArgumentError("tsne: learning rate must be > 0");
    if (kl_every < 1) throw ArgumentError("tsne: kl_every must be >= 1");
}

RowCalibration perplexity_calibration(const Eigen::VectorXd& sq_distances, double perplexity) {
    if (sq_distances.size() == 0) throw ArgumentError("perplexity calibration: empty row");
    if (!(perplexity >= 1.0)) throw ArgumentError("perplexity calibration: perplexity must be >= 1");
    if (!sq_distances.allFinite() || sq_distances.minCoeff() < 0)
        throw ArgumentError("perplexity calibration: distances must be finite and non-negative");
    const double d_min = sq_distances.minCoeff();
    const double d_max = sq_distances.maxCoeff();
    if (!(d_max > 0)) throw NumericalError("perplexity calibration: all distances are zero");

    // Shifting by the minimum leaves the normalized row unchanged.
    const Eigen::VectorXd d = sq_distances.array() - d_min;
    const double target = std::log2(perplexity);

    RowCalibration r;
    if (d.maxCoeff() == 0) {
        // Every neighbour is equally far: the row is uniform for any sigma.
        r.beta = 0;
        r.sigma = std::numeric_limits<double>::infinity();
        r.p = Eigen::VectorXd::Constant(d.size(), 1.0 / static_cast<double>(d.size()));
        r.entropy_bits = std::log2(static_cast<double>(d.size()));
        return r;
    }
    auto evaluate = [&](double beta) {
        r.p = (-beta * d.array()).exp();
        const double sum = r.p.sum();
        const double h_nats = std::log(sum) + beta * d.dot(r.p) / sum;
        r.p /= sum;
        return h_nats / std::log(2.0);
    };

    double beta = 1.0 / std::max(d.mean(), std::numeric_limits<double>::min());
    double lo = 0, hi = std::numeric_limits<double>::infinity();
    double h = evaluate(beta);
    for (r.iterations = 1; r.iterations < 64 && std::abs(h - target) > 1e-5; ++r.iterations) {
        if (h > target) {
            lo = beta;
            const double next = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
            if (!std::isfinite(next)) break;  // entropy floor set by tied nearest neighbours
            beta = next;
        } else {
            hi = beta;
            beta = (beta + lo) / 2;
        }
        h = evaluate(beta);
    }
    r.beta = beta;
    r.sigma = std::sqrt(1.0 / (2.0 * beta));
    r.entropy_bits = h;
    return r;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

Eigen::MatrixXd joint_probabilities(const Eigen::MatrixXd& x, double perplexity) {
    const auto n = x.rows();
    const Eigen::MatrixXd d = squared_distances(x);
    Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd row(n - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        row.head(i) = d.row(i).head(i).transpose();
        row.tail(n - 1 - i) = d.row(i).tail(n - 1 - i).transpose();
        const auto cal = perplexity_calibration(row, perplexity);
        cond.row(i).head(i) = cal.p.head(i).transpose();
        cond.row(i).tail(n - 1 - i) = cal.p.tail(n - 1 - i).transpose();
    }
    return (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
}

namespace {

// Student-t kernel 1 / (1 + |yi - yj|^2) with a zero diagonal. Computed
// entry by entry so that identical rows of y get bit-identical rows here.
Eigen::MatrixXd student_kernel(const Eigen::MatrixXd& y) {
    const auto n = y.rows();
    Eigen::MatrixXd num(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) {
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + dx * dx + dy * dy);
        }
    return num;
}

}  // namespace

double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd num = student_kernel(y);
    const double z = num.sum();
    double kl = 0;
    for (Eigen::Index j = 0; j < p.cols(); ++j)
        for (Eigen::Index i = 0; i < p.rows(); ++i)
            if (i != j && p(i, j) > 0) kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, kFloor));
    return kl;
}

Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y, double exaggeration) {
    const Eigen::MatrixXd num = student_kernel(y);
    const Eigen::MatrixXd q = num / num.sum();
    const Eigen::MatrixXd m = ((exaggeration * p - q).array() * num.array()).matrix();
    // Same summation order for every row keeps duplicate points together.
    const auto n = y.rows();
    Eigen::MatrixXd grad(n, y.cols());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index c = 0; c < y.cols(); ++c) {
            double g = 0;
            for (Eigen::Index k = 0; k < n; ++k) g += m(k, i) * (y(i, c) - y(k, c));
            grad(i, c) = 4.0 * g;
        }
    return grad;
}

Eigen::MatrixXd pca_init(const Eigen::MatrixXd& x) {
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    Eigen::MatrixXd cov = xc.transpose() * xc / static_cast<double>(std::max<Eigen::Index>(1, x.rows() - 1));
    Eigen::MatrixXd scores(x.rows(), 2);
    for (int c = 0; c < 2; ++c) {
        Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(cov.rows(), 1.0, 2.0).normalized();
        double eig = 0;
        for (int it = 0; it < 1000; ++it) {
            Eigen::VectorXd w = cov * v;
            const double norm = w.norm();
            if (!(norm > 0)) break;
            w /= norm;
            const double delta = (w - v).norm();
            v = w;
            eig = norm;
            if (delta < 1e-12) break;
        }
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0) v = -v;
        scores.col(c) = xc * v;
        cov -= eig * v * v.transpose();
    }
    double sd = std::sqrt((scores.col(0).array() - scores.col(0).mean()).square().mean());
    if (!(sd > 0)) sd = 1;
    return scores * (1e-4 / sd);
}

Embedding2D tsne(const Eigen::MatrixXd& x, const TsneConfig& cfg) {
    cfg.validate(x.rows());
    if (!x.allFinite()) throw ArgumentError("tsne: non-finite input");
    const auto n = x.rows();
    const Eigen::MatrixXd p = joint_probabilities(x, cfg.perplexity);

    Embedding2D out;
    Eigen::MatrixXd& y = out.coords;
    if (cfg.init == TsneInit::pca) {
        y = pca_init(x);
    } else {
        std::mt19937_64 rng(cfg.seed);
        std::normal_distribution<double> g(0.0, 1e-4);
        y.resize(n, 2);
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) y(i, c) = g(rng);
    }

    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
    for (int it = 0; it < cfg.iterations; ++it) {
        const double exag = it < cfg.exaggeration_iters ? cfg.exaggeration : 1.0;
        const double mom = it < cfg.momentum_switch ? cfg.momentum : cfg.final_momentum;
        const Eigen::MatrixXd grad = tsne_gradient(p, y, exag);
        if (!grad.allFinite()) throw NumericalError("tsne: non-finite gradient at iteration " + std::to_string(it));

        // Delta-bar-delta gains.
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < 2; ++c) {
                const bool flip = (grad(i, c) > 0) != (update(i, c) > 0);
                gains(i, c) = std::max(flip ? gains(i, c) + 0.2 : gains(i, c) * 0.8, 0.01);
            }
        update = mom * update - cfg.learning_rate * gains.cwiseProduct(grad);
        y += update;
        y.rowwise() -= y.colwise().mean();
        if (!y.allFinite()) throw NumericalError("tsne: non-finite coordinates at iteration " + std::to_string(it));

        if ((it + 1) % cfg.kl_every == 0 || it + 1 == cfg.iterations)
            out.kl_history.emplace_back(it + 1, tsne_kl(p, y));
    }
    return out;
}

double silhouette(const Eigen::MatrixXd& coords, std::span<const int> labels) {
    const auto n = coords.rows();
    if (static_cast<std::size_t>(n) != labels.size()) throw ArgumentError("silhouette: length mismatch");
    const int k = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k));
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    if (std::count_if(sizes.begin(), sizes.end(), [](auto s) { return s > 0; }) < 2)
        throw ArgumentError("silhouette: need at least two clusters");

    const Eigen::MatrixXd d = squared_distances(coords).cwiseSqrt();
    double total = 0;
    std::vector<double> sums(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::fill(sums.begin(), sums.end(), 0.0);
        for (Eigen::Index j = 0; j < n; ++j) sums[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])] += d(i, j);
        const auto own = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
        if (sizes[own] < 2) continue;  // singleton scores 0
        const double a = sums[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < sums.size(); ++c)
            if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
        const double denom = std::max(a, b);
        if (denom > 0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

EmbedReport embed_report(const Cohort& cohort, const Eigen::MatrixXd& representation, const TsneConfig& cfg,
                         std::size_t sample_cap) {
    if (sample_cap > static_cast<std::size_t>(TsneConfig::kMaxPoints))
        throw ArgumentError("tsne: sample cap above " + std::to_string(TsneConfig::kMaxPoints) +
                            " refused (exact t-SNE is quadratic)");
    if (static_cast<std::size_t>(representation.rows()) != cohort.size())
        throw ArgumentError("tsne: representation rows do not match cohort");

    EmbedReport report;
    report.indices.resize(cohort.size());
    std::iota(report.indices.begin(), report.indices.end(), std::size_t{0});
    if (cohort.size() > sample_cap) {
        std::mt19937_64 rng(derive_seed(cfg.seed, 7));
        std::shuffle(report.indices.begin(), report.indices.end(), rng);
        report.indices.resize(sample_cap);
        std::sort(report.indices.begin(), report.indices.end());
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(report.indices.size()), representation.cols());
    for (std::size_t r = 0; r < report.indices.size(); ++r)
        x.row(static_cast<Eigen::Index>(r)) = representation.row(static_cast<Eigen::Index>(report.indices[r]));
    report.embedding = tsne(x, cfg);
    return report;
}

void save_embedding_csv(const Cohort& cohort, const EmbedReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "patch_id,wsi_id,hospital,disease,x,y\n";
    for (std::size_t r = 0; r < report.indices.size(); ++r) {
        const auto& rec = cohort.records[report.indices[r]];
        const auto row = static_cast<Eigen::Index>(r);
        out << rec.patch_id << ',' << rec.wsi_id << ',' << cohort.hospital_names[static_cast<std::size_t>(rec.hospital)]
            << ',' << cohort.disease_names[static_cast<std::size_t>(rec.disease)] << ','
            << report.embedding.coords(row, 0) << ',' << report.embedding.coords(row, 1) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void save_kl_csv(const Embedding2D& embedding, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "iteration,kl\n";
    for (const auto& [it, kl] : embedding.kl_history) out << it << ',' << kl << '\n';
}

}  // namespace sitebias
