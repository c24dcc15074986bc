#include <cstdio>
#include <random>

#include "sitebias/errors.hpp"
#include "sitebias/feature_store.hpp"

namespace sitebias {

void SynthSpec::validate() const {
    if (hospitals < 1) throw ArgumentError("synth: hospitals must be >= 1");
    if (diseases < 1 || diseases > kDiseaseDims) throw ArgumentError("synth: diseases must be in [1, 8]");
    if (dims < kDiseaseDims + hospitals) throw ArgumentError("synth: dims must be >= 8 + hospitals");
    if (wsis_per_cell < 1 || patches_per_wsi < 1) throw ArgumentError("synth: slide and patch counts must be >= 1");
    if (!(confound >= 0.0 && confound <= 1.0)) throw ArgumentError("synth: confound must lie in [0, 1]");
    if (!(disease_signal >= 0.0) || !(hospital_signal >= 0.0) || !(noise_sigma >= 0.0) || !(overlap >= 0.0))
        throw ArgumentError("synth: magnitudes must be >= 0");
}

Cohort synth_generate(const SynthSpec& spec) {
    spec.validate();
    const int C = spec.diseases;
    const int H = spec.hospitals;
    const int kd = SynthSpec::kDiseaseDims;

    auto disease_pattern = [&](int c) {
        Eigen::VectorXd p = Eigen::VectorXd::Zero(spec.dims);
        for (int j = 0; j < kd; ++j) p[j] = (j % C == c) ? 1.0 : -1.0;
        return p;
    };

    Cohort cohort;
    for (int h = 0; h < H; ++h) cohort.hospital_names.push_back("H" + std::to_string(h));
    for (int c = 0; c < C; ++c) cohort.disease_names.push_back("D" + std::to_string(c));

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    const auto n = static_cast<Eigen::Index>(H) * C * spec.wsis_per_cell * spec.patches_per_wsi;
    cohort.features.resize(n, spec.dims);
    cohort.records.reserve(static_cast<std::size_t>(n));

    Eigen::Index row = 0;
    int slide = 0;
    char id[48];
    for (int h = 0; h < H; ++h) {
        Eigen::VectorXd site = Eigen::VectorXd::Zero(spec.dims);
        for (int j = 0; j < H; ++j) site[kd + j] = (j == h) ? spec.hospital_signal : -spec.hospital_signal;
        site += spec.overlap * spec.hospital_signal * disease_pattern(h % C);

        for (int c = 0; c < C; ++c) {
            for (int w = 0; w < spec.wsis_per_cell; ++w, ++slide) {
                int disease = c;
                if (unit(rng) < spec.confound) disease = h % C;
                const Eigen::VectorXd mu = site + spec.disease_signal * disease_pattern(disease);

                std::snprintf(id, sizeof id, "wsi%05d", slide);
                const std::string wsi_id = id;
                for (int p = 0; p < spec.patches_per_wsi; ++p, ++row) {
                    for (int j = 0; j < spec.dims; ++j)
                        cohort.features(row, j) = static_cast<float>(mu[j] + spec.noise_sigma * noise(rng));
                    std::snprintf(id, sizeof id, "wsi%05d_p%04d", slide, p);
                    cohort.records.push_back({id, wsi_id, h, disease});
                }
            }
        }
    }
    return cohort;
}

}  // namespace sitebias
