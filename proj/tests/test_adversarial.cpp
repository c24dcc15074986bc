#include <cmath>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sitebias/adversarial.hpp"
#include "sitebias/errors.hpp"
#include "support.hpp"

using namespace sitebias;
using nn::Matrix;

namespace {

struct Instance {
    DebiasModel model;
    Matrix x;
    std::vector<int> disease, hospital;
};

Instance random_instance(std::mt19937_64& rng, double lambda) {
    std::uniform_int_distribution<int> dim(2, 6), classes(2, 4), batch(2, 8);
    TrainConfig cfg;
    cfg.proj_hidden = dim(rng);
    cfg.proj_out = dim(rng);
    cfg.lambda = lambda;
    cfg.seed = rng();
    const int d = dim(rng), c = classes(rng), h = classes(rng), n = batch(rng);
    Instance inst{init_debias_model(d, c, h, cfg), testing::random_matrix(n, d, rng), {}, {}};
    for (int i = 0; i < n; ++i) {
        inst.disease.push_back(static_cast<int>(rng() % c));
        inst.hospital.push_back(static_cast<int>(rng() % h));
    }
    return inst;
}

TrainConfig small_train(double lambda, int epochs = 20) {
    TrainConfig t;
    t.epochs = epochs;
    t.lambda = lambda;
    t.proj_hidden = 32;
    t.proj_out = 16;
    t.adam.lr = 1e-2;
    t.seed = 3;
    return t;
}

LabeledView synth_view(const SynthSpec& spec) {
    const Cohort c = synth_generate(spec);
    std::vector<std::size_t> all(c.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Standardizer s = fit_standardizer(c, all);
    return make_view(c, all, &s);
}

}  // namespace

TEST_CASE("compute_losses bookkeeping") {
    std::mt19937_64 rng(1);
    for (double lambda : {0.0, 0.5, 1.0, 5.0}) {
        const auto inst = random_instance(rng, lambda);
        const auto t = compute_losses(inst.model, inst.x, inst.disease, inst.hospital);
        CHECK(t.loss_total - (t.loss_d + lambda * t.loss_h) == 0.0);
    }
    SUBCASE("lambda zero cuts the domain branch off the projection") {
        auto inst = random_instance(rng, 0.0);
        const auto t = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, 0.0);
        const auto [z, pc] = nn::forward(inst.model.projection, inst.x);
        const auto [dl, dc] = nn::forward(inst.model.disease_head, z);
        const auto ce = nn::softmax_ce<double>(dl, inst.disease);
        const auto [dg, dz] = nn::backward(inst.model.disease_head, dc, ce.dlogits);
        const auto [pg, dx] = nn::backward(inst.model.projection, pc, dz);
        CHECK((nn::flatten(t.projection) - nn::flatten(pg)).cwiseAbs().maxCoeff() <= 1e-15);
        CHECK(t.loss_total == t.loss_d);
    }
    SUBCASE("forward values do not depend on lambda") {
        const auto inst = random_instance(rng, 1.0);
        const auto a = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, 0.0);
        const auto b = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, 1000.0);
        CHECK(a.disease_logits == b.disease_logits);
        CHECK(a.domain_logits == b.domain_logits);
        CHECK(a.loss_d == b.loss_d);
        CHECK(a.loss_h == b.loss_h);
    }
    SUBCASE("label out of range") {
        auto inst = random_instance(rng, 1.0);
        inst.hospital[0] = 99;
        CHECK_THROWS_AS(compute_losses(inst.model, inst.x, inst.disease, inst.hospital), ArgumentError);
    }
}

TEST_CASE("exact gradients match finite differences") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const double lambda = std::array{0.0, 0.5, 1.0, 5.0}[trial % 4];
        const auto inst = random_instance(rng, lambda);
        for (int which = 0; which < 3; ++which) {
            auto closure = [&](const Eigen::VectorXd& theta) {
                DebiasModel m = inst.model;
                nn::Head* heads[] = {&m.projection, &m.disease_head, &m.domain_head};
                nn::unflatten(theta, *heads[which]);
                const auto t = compute_losses(m, inst.x, inst.disease, inst.hospital, lambda, GradientFlow::exact);
                const nn::Grads* g[] = {&t.projection, &t.disease_head, &t.domain_head};
                return std::make_pair(t.loss_total, Eigen::VectorXd(nn::flatten(*g[which])));
            };
            const nn::Head* heads[] = {&inst.model.projection, &inst.model.disease_head, &inst.model.domain_head};
            const auto r = nn::grad_check(closure, nn::flatten(*heads[which]), 1e-4);
            CHECK_MESSAGE(r.passed, "trial " << trial << " head " << which << " err " << r.max_rel_error);
        }
    }
}

TEST_CASE("gradient reversal decomposition") {
    std::mt19937_64 rng(3);
    for (double lambda : {0.0, 0.5, 1.0, 5.0}) {
        for (int trial = 0; trial < 5; ++trial) {
            const auto inst = random_instance(rng, lambda);
            const auto t = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, lambda);

            // Two separate passes without any reversal.
            const auto [z, pc] = nn::forward(inst.model.projection, inst.x);
            const auto [dl, dc] = nn::forward(inst.model.disease_head, z);
            const auto [hl, hc] = nn::forward(inst.model.domain_head, z);
            const auto dce = nn::softmax_ce<double>(dl, inst.disease);
            const auto hce = nn::softmax_ce<double>(hl, inst.hospital);
            const auto [dg, dz_d] = nn::backward(inst.model.disease_head, dc, dce.dlogits);
            const auto [hg, dz_h] = nn::backward(inst.model.domain_head, hc, hce.dlogits);
            const auto [pg_d, dx_d] = nn::backward(inst.model.projection, pc, dz_d);
            const auto [pg_h, dx_h] = nn::backward(inst.model.projection, pc, dz_h);

            const Eigen::VectorXd expected = nn::flatten(pg_d) - lambda * nn::flatten(pg_h);
            const Eigen::VectorXd got = nn::flatten(t.projection);
            const double scale = std::max(expected.cwiseAbs().maxCoeff(), 1e-300);
            CHECK((got - expected).cwiseAbs().maxCoeff() / scale <= 1e-10);
            // The domain head itself is never reversed.
            CHECK(nn::flatten(t.domain_head) == nn::flatten(hg));
            CHECK(nn::flatten(t.disease_head) == nn::flatten(dg));
        }
    }
}

TEST_CASE("adversarial tension to first order") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const double lambda = 1.0;
        const auto inst = random_instance(rng, lambda);
        const auto base = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, lambda);
        const auto cut = compute_losses(inst.model, inst.x, inst.disease, inst.hospital, 0.0);
        const double eps = 1e-6;

        DebiasModel head_step = inst.model;
        nn::unflatten(Eigen::VectorXd(nn::flatten(head_step.domain_head) - eps * nn::flatten(base.domain_head)),
                      head_step.domain_head);
        CHECK(compute_losses(head_step, inst.x, inst.disease, inst.hospital, lambda).loss_h <= base.loss_h);

        // The projection step's reversed component, -(G(lambda) - G(0)), raises L_H.
        DebiasModel proj_step = inst.model;
        const Eigen::VectorXd reversed = nn::flatten(base.projection) - nn::flatten(cut.projection);
        nn::unflatten(Eigen::VectorXd(nn::flatten(proj_step.projection) - eps * reversed), proj_step.projection);
        CHECK(compute_losses(proj_step, inst.x, inst.disease, inst.hospital, lambda).loss_h >= base.loss_h);
    }
}

TEST_CASE("untrained model with near-zero logits") {
    TrainConfig cfg;
    cfg.proj_hidden = 16;
    cfg.proj_out = 8;
    DebiasModel m = init_debias_model(12, 2, 4, cfg);
    m.disease_head.layers[0].W *= 1e-3;
    m.domain_head.layers[0].W *= 1e-3;
    std::mt19937_64 rng(5);
    const Matrix x = testing::random_matrix(64, 12, rng);
    std::vector<int> d(64), h(64);
    for (int i = 0; i < 64; ++i) {
        d[i] = i % 2;
        h[i] = i % 4;
    }
    const auto t = compute_losses(m, x, d, h);
    CHECK(std::abs(t.loss_d - std::log(2.0)) < 0.05);
    CHECK(std::abs(t.loss_h - std::log(4.0)) < 0.05);
}

TEST_CASE("train_adversarial") {
    auto spec = testing::small_spec();
    spec.hospital_signal = 2.0;
    spec.patches_per_wsi = 30;
    const LabeledView view = synth_view(spec);

    SUBCASE("lambda zero leaves the domain head free to learn the site") {
        // Wider projection so the unpenalized features keep the site dims.
        auto cfg = small_train(0.0, 30);
        cfg.proj_hidden = 128;
        cfg.proj_out = 64;
        const auto r = train_adversarial(view, cfg);
        CHECK(r.history.epochs.size() == 30);
        CHECK(r.history.epochs.back().acc_h >= 0.9);
        CHECK(r.history.epochs.back().acc_d >= 0.9);
        for (const auto& e : r.history.epochs) {
            CHECK(std::isfinite(e.loss_total));
            CHECK(e.loss_total == doctest::Approx(e.loss_d));
        }
    }
    SUBCASE("deterministic and leaves its input untouched") {
        const Matrix before = view.x;
        const auto a = train_adversarial(view, small_train(1.0, 3));
        const auto b = train_adversarial(view, small_train(1.0, 3));
        CHECK(view.x == before);
        CHECK(nn::flatten(a.model.projection) == nn::flatten(b.model.projection));
        CHECK(nn::flatten(a.model.domain_head) == nn::flatten(b.model.domain_head));
        CHECK(nn::flatten(a.model.disease_head) == nn::flatten(b.model.disease_head));
    }
    SUBCASE("config validation") {
        CHECK_THROWS_AS(train_adversarial(view, small_train(1.0, 0)), ArgumentError);
        auto t = small_train(1.0);
        t.batch_size = 0;
        CHECK_THROWS_AS(train_adversarial(view, t), ArgumentError);
        t = small_train(-1.0);
        CHECK_THROWS_AS(train_adversarial(view, t), ArgumentError);
    }
    SUBCASE("one hospital is rejected") {
        LabeledView single = view;
        std::fill(single.hospital.begin(), single.hospital.end(), 0);
        CHECK_THROWS_AS(train_adversarial(single, small_train(1.0)), ArgumentError);
    }
    SUBCASE("non-finite input surfaces as a numerical error") {
        LabeledView broken = view;
        broken.x(3, 2) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(train_adversarial(broken, small_train(1.0, 1)), NumericalError);
    }
}

TEST_CASE("transform and predict_disease") {
    TrainConfig cfg;
    cfg.proj_hidden = 8;
    cfg.proj_out = 5;
    const DebiasModel m = init_debias_model(4, 3, 2, cfg);
    std::mt19937_64 rng(6);
    const Matrix x = testing::random_matrix(7, 4, rng);
    CHECK(transform(m, x) == transform(m, x));
    CHECK(transform(m, x).cols() == 5);
    CHECK_THROWS_AS(transform(m, testing::random_matrix(2, 3, rng)), ArgumentError);
    const auto p = predict_disease(m, x);
    CHECK(p.labels.size() == 7);
    for (Eigen::Index i = 0; i < 7; ++i) CHECK(std::abs(p.probabilities.row(i).sum() - 1.0) <= 1e-9);
    CHECK(argmax_rows(Matrix{{0.2, 0.2}}) == std::vector<int>{0});
    CHECK(argmax_rows(Matrix{{0.1, 0.3, 0.3}}) == std::vector<int>{1});
}

TEST_CASE("checkpoint round trip") {
    testing::TempDir dir;
    TrainConfig cfg;
    cfg.proj_hidden = 8;
    cfg.proj_out = 5;
    cfg.lambda = 0.37;
    Checkpoint ck{init_debias_model(4, 3, 2, cfg), std::nullopt};
    save_checkpoint(ck, dir / "m.gdm");
    auto back = load_checkpoint(dir / "m.gdm");
    CHECK(back.model.lambda == 0.37);
    CHECK(nn::flatten(back.model.projection) == nn::flatten(ck.model.projection));
    CHECK(nn::flatten(back.model.domain_head) == nn::flatten(ck.model.domain_head));
    CHECK(back.model.projection.activation == nn::Activation::relu);
    CHECK(!back.standardizer);

    std::mt19937_64 rng(1);
    ck.standardizer = fit_standardizer(Eigen::MatrixXd(testing::random_matrix(10, 4, rng)));
    save_checkpoint(ck, dir / "s.gdm");
    back = load_checkpoint(dir / "s.gdm");
    REQUIRE(back.standardizer);
    CHECK(back.standardizer->mean == ck.standardizer->mean);
    CHECK(back.standardizer->std == ck.standardizer->std);

    {
        std::fstream f(dir / "s.gdm", std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "s.gdm"), FormatError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.gdm"), IoError);
    std::filesystem::resize_file(dir / "m.gdm", 40);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.gdm"), FormatError);
}

TEST_CASE("history csv") {
    testing::TempDir dir;
    TrainHistory h;
    h.epochs.push_back({0.5, 1.0, 1.5, 0.8, 0.3});
    h.save_csv(dir / "h.csv");
    std::ifstream f(dir / "h.csv");
    std::string header, row;
    std::getline(f, header);
    std::getline(f, row);
    CHECK(header == "epoch,loss_d,loss_h,loss_total,acc_d,acc_h");
    CHECK(row.rfind("0,0.5,1,1.5,0.8", 0) == 0);
}
