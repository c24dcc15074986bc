#include <fstream>
#include <random>

#include "doctest.h"
#include "sitebias/errors.hpp"
#include "sitebias/tsne.hpp"
#include "support.hpp"

using namespace sitebias;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double entropy_bits(const VectorXd& p) {
    double h = 0;
    for (double v : p)
        if (v > 0) h -= v * std::log2(v);
    return h;
}

// Two Gaussian blobs, `n` points each, centres 10 apart on the first axis.
MatrixXd two_blobs(int n, int dims, std::mt19937_64& rng, std::vector<int>* labels) {
    MatrixXd x = testing::random_matrix(2 * n, dims, rng);
    labels->assign(2 * n, 0);
    for (int i = n; i < 2 * n; ++i) {
        x(i, 0) += 10.0;
        (*labels)[static_cast<std::size_t>(i)] = 1;
    }
    return x;
}

TsneConfig small_config() {
    TsneConfig cfg;
    cfg.perplexity = 10;
    // The default rate suits N in the thousands; ~N/12 with a floor of 50 for small N.
    cfg.learning_rate = 50;
    cfg.seed = 3;
    return cfg;
}

}  // namespace

TEST_CASE("perplexity calibration") {
    std::mt19937_64 rng(1);
    SUBCASE("hits the target entropy") {
        for (int trial = 0; trial < 50; ++trial) {
            const int n = 20 + static_cast<int>(rng() % 200);
            const VectorXd d = testing::random_matrix(n, 1, rng, 3.0).cwiseAbs2();
            const double perp = 2.0 + static_cast<double>(rng() % 15);
            const auto r = perplexity_calibration(d, perp);
            CHECK(r.iterations <= 64);
            CHECK(std::abs(entropy_bits(r.p) - std::log2(perp)) <= 1e-3);
            CHECK(std::abs(r.entropy_bits - entropy_bits(r.p)) <= 1e-9);
            CHECK(std::abs(r.p.sum() - 1.0) <= 1e-12);
            CHECK(r.beta == doctest::Approx(1.0 / (2 * r.sigma * r.sigma)));
        }
    }
    SUBCASE("equal distances give a uniform row") {
        const auto r = perplexity_calibration(VectorXd::Constant(8, 2.5), 3);
        for (double v : r.p) CHECK(v == doctest::Approx(0.125).epsilon(1e-12));
    }
    SUBCASE("bad rows") {
        CHECK_THROWS_AS(perplexity_calibration(VectorXd::Zero(5), 3), NumericalError);
        CHECK_THROWS_AS(perplexity_calibration(VectorXd(), 3), ArgumentError);
        CHECK_THROWS_AS(perplexity_calibration(VectorXd::Constant(3, -1.0), 3), ArgumentError);
    }
}

TEST_CASE("joint probabilities") {
    std::mt19937_64 rng(2);
    const MatrixXd x = testing::random_matrix(40, 5, rng);
    const MatrixXd p = joint_probabilities(x, 8);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(p.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.minCoeff() >= 0.0);
}

TEST_CASE("gradient matches finite differences") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const MatrixXd x = testing::random_matrix(12, 4, rng);
        const MatrixXd p = joint_probabilities(x, 3);
        MatrixXd y = testing::random_matrix(12, 2, rng);
        const MatrixXd g = tsne_gradient(p, y);
        const double h = 1e-6;
        double worst = 0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double keep = y.data()[i];
            y.data()[i] = keep + h;
            const double up = tsne_kl(p, y);
            y.data()[i] = keep - h;
            const double down = tsne_kl(p, y);
            y.data()[i] = keep;
            const double fd = (up - down) / (2 * h);
            worst = std::max(worst, std::abs(fd - g.data()[i]) / std::max(1.0, std::abs(fd)));
        }
        CHECK(worst <= 1e-4);
        // Exaggeration only scales the attractive part.
        const MatrixXd g4 = tsne_gradient(p, y, 4.0);
        const MatrixXd attract = (g4 - g) / 3.0;
        CHECK((g - attract - (g4 - 4.0 * attract)).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("embedding behaviour") {
    std::mt19937_64 rng(4);
    std::vector<int> labels;
    const MatrixXd x = two_blobs(60, 6, rng, &labels);

    SUBCASE("blobs stay apart") {
        const auto e = tsne(x, small_config());
        CHECK(e.coords.rows() == 120);
        CHECK(silhouette(e.coords, labels) >= 0.5);
    }
    SUBCASE("duplicates coincide") {
        MatrixXd dup = x;
        dup.row(1) = dup.row(0);
        const auto e = tsne(dup, small_config());
        CHECK((e.coords.row(0) - e.coords.row(1)).norm() <= 1e-3);
    }
    SUBCASE("deterministic for both inits") {
        auto cfg = small_config();
        CHECK(tsne(x, cfg).coords == tsne(x, cfg).coords);
        cfg.init = TsneInit::random;
        CHECK(tsne(x, cfg).coords == tsne(x, cfg).coords);
    }
    SUBCASE("KL mostly decreases after exaggeration") {
        int runs = 0, good = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            auto cfg = small_config();
            cfg.init = TsneInit::random;
            cfg.seed = seed;
            const auto e = tsne(x, cfg);
            bool monotone = true;
            for (std::size_t i = 1; i < e.kl_history.size(); ++i)
                if (e.kl_history[i].first > cfg.exaggeration_iters + cfg.kl_every &&
                    e.kl_history[i].second > e.kl_history[i - 1].second + 1e-9)
                    monotone = false;
            ++runs;
            good += monotone ? 1 : 0;
        }
        CHECK(good >= 9);
        CHECK(runs == 10);
    }
    SUBCASE("config validation") {
        auto cfg = small_config();
        cfg.iterations = 100;
        CHECK_THROWS_AS(tsne(x, cfg), ArgumentError);
        cfg = small_config();
        cfg.perplexity = 50;
        CHECK_THROWS_AS(tsne(x, cfg), ArgumentError);
        CHECK_THROWS_AS(tsne(x.topRows(5), small_config()), ArgumentError);
    }
}

TEST_CASE("silhouette") {
    MatrixXd c(4, 2);
    c << 0, 0, 0, 1, 10, 0, 10, 1;
    const std::vector<int> l{0, 0, 1, 1};
    // a = 1, b = mean(10, sqrt(101)) for every point.
    const double b = (10.0 + std::sqrt(101.0)) / 2;
    CHECK(silhouette(c, l) == doctest::Approx((b - 1) / b).epsilon(1e-12));
    CHECK_THROWS_AS(silhouette(c, std::vector<int>{1, 1, 1, 1}), ArgumentError);
}

TEST_CASE("embed_report") {
    auto spec = testing::small_spec();
    const Cohort cohort = synth_generate(spec);  // 240 records
    const MatrixXd rep = cohort.matrix();
    auto cfg = small_config();
    cfg.iterations = 250;

    const auto capped = embed_report(cohort, rep, cfg, 100);
    CHECK(capped.indices.size() == 100);
    CHECK(std::is_sorted(capped.indices.begin(), capped.indices.end()));
    CHECK(capped.embedding.coords.rows() == 100);
    CHECK(embed_report(cohort, rep, cfg, 100).indices == capped.indices);

    CHECK_THROWS_AS(embed_report(cohort, rep, cfg, 5001), ArgumentError);
    CHECK_THROWS_AS(embed_report(cohort, rep.topRows(10), cfg, 100), ArgumentError);

    testing::TempDir dir;
    save_embedding_csv(cohort, capped, dir / "e.csv");
    save_kl_csv(capped.embedding, dir / "kl.csv");
    std::ifstream e(dir / "e.csv"), k(dir / "kl.csv");
    std::string line;
    std::getline(e, line);
    CHECK(line == "patch_id,wsi_id,hospital,disease,x,y");
    int rows = 0;
    while (std::getline(e, line)) ++rows;
    CHECK(rows == 100);
    std::getline(k, line);
    CHECK(line == "iteration,kl");
}

TEST_CASE("raw strong-signal cohort clusters by hospital") {
    SynthSpec spec;
    spec.hospital_signal = 3.0;
    spec.wsis_per_cell = 3;
    spec.patches_per_wsi = 20;  // 480 records
    const Cohort cohort = synth_generate(spec);
    auto cfg = small_config();
    cfg.perplexity = 30;
    const auto r = embed_report(cohort, cohort.matrix(), cfg, 5000);
    CHECK(r.indices.size() == cohort.size());
    CHECK(silhouette(r.embedding.coords, cohort.hospitals(r.indices)) > 0.2);
}
