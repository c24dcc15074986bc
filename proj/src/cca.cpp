#include "sitebias/cca.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>

#include "sitebias/binary_io.hpp"
#include "sitebias/errors.hpp"

namespace sitebias {

namespace {

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& cov, const char* view) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericalError(std::string("cca: eigendecomposition failed for ") + view);
    const auto& vals = eig.eigenvalues();
    const double floor = 1e-12 * std::max(1.0, vals.cwiseAbs().maxCoeff());
    if (vals.minCoeff() <= floor)
        throw NumericalError(std::string("cca: singular covariance for ") + view + " (add a ridge)");
    return eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double default_ridge(const Eigen::MatrixXd& cov) { return 1e-6 * cov.trace() / static_cast<double>(cov.rows()); }

CcaFit fit_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k, std::optional<double> ridge) {
    if (x.rows() != y.rows()) throw ArgumentError("cca: views must be row-paired");
    if (x.rows() < 2) throw ArgumentError("cca: need at least two paired rows");
    if (k < 1 || k > x.cols() || k > y.cols()) throw ArgumentError("cca: k must lie in [1, min(Dx, Dy)]");
    if (ridge && *ridge < 0) throw ArgumentError("cca: ridge must be >= 0");

    CcaFit fit;
    fit.mean_x = x.colwise().mean().transpose();
    fit.mean_y = y.colwise().mean().transpose();
    const Eigen::MatrixXd xc = x.rowwise() - fit.mean_x.transpose();
    const Eigen::MatrixXd yc = y.rowwise() - fit.mean_y.transpose();
    const double n = static_cast<double>(x.rows());

    Eigen::MatrixXd sxx = xc.transpose() * xc / n;
    Eigen::MatrixXd syy = yc.transpose() * yc / n;
    const Eigen::MatrixXd sxy = xc.transpose() * yc / n;
    sxx.diagonal().array() += ridge ? *ridge : default_ridge(sxx);
    syy.diagonal().array() += ridge ? *ridge : default_ridge(syy);

    const Eigen::MatrixXd kx = inverse_sqrt(sxx, "x");
    const Eigen::MatrixXd ky = inverse_sqrt(syy, "y");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(kx * sxy * ky, Eigen::ComputeThinU | Eigen::ComputeThinV);

    fit.wx = kx * svd.matrixU().leftCols(k);
    fit.wy = ky * svd.matrixV().leftCols(k);
    fit.correlations = svd.singularValues().head(k);

    // Sign convention: the largest-magnitude entry of each wy column is positive.
    for (int j = 0; j < k; ++j) {
        Eigen::Index arg = 0;
        fit.wy.col(j).cwiseAbs().maxCoeff(&arg);
        if (fit.wy(arg, j) < 0) {
            fit.wy.col(j) *= -1;
            fit.wx.col(j) *= -1;
        }
    }
    return fit;
}

CcaProjection fit_alignment(const Eigen::MatrixXd& x, std::span<const int> disease, std::span<const int> hospital,
                            int num_hospitals, int reference, int k, std::optional<double> ridge,
                            std::uint64_t seed) {
    const auto n = static_cast<std::size_t>(x.rows());
    if (disease.size() != n || hospital.size() != n) throw ArgumentError("cca: label/feature length mismatch");
    if (reference < 0 || reference >= num_hospitals) throw ArgumentError("cca: reference hospital out of range");

    // hospital -> disease -> row indices
    std::vector<std::map<int, std::vector<Eigen::Index>>> rows(static_cast<std::size_t>(num_hospitals));
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_hospitals));
    for (std::size_t i = 0; i < n; ++i) {
        rows[static_cast<std::size_t>(hospital[i])][disease[i]].push_back(static_cast<Eigen::Index>(i));
        ++counts[static_cast<std::size_t>(hospital[i])];
    }
    const auto& ref_rows = rows[static_cast<std::size_t>(reference)];
    if (counts[static_cast<std::size_t>(reference)] == 0) throw ArgumentError("cca: reference hospital has no samples");
    for (int h = 0; h < num_hospitals; ++h)
        if (counts[static_cast<std::size_t>(h)] < static_cast<std::size_t>(k) + 1)
            throw ArgumentError("cca: hospital " + std::to_string(h) + " needs at least k+1 samples");

    auto gather = [&](const std::vector<Eigen::Index>& idx) {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
        for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(idx[r]);
        return out;
    };

    CcaProjection proj;
    proj.reference = reference;
    proj.k = k;
    proj.ridge = ridge;
    proj.means.resize(static_cast<std::size_t>(num_hospitals));
    proj.weights.resize(static_cast<std::size_t>(num_hospitals));
    proj.correlations.resize(static_cast<std::size_t>(num_hospitals));

    std::vector<Eigen::Index> all_ref;
    for (const auto& [c, idx] : ref_rows) all_ref.insert(all_ref.end(), idx.begin(), idx.end());
    std::sort(all_ref.begin(), all_ref.end());
    const Eigen::MatrixXd ref_x = gather(all_ref);
    proj.means[static_cast<std::size_t>(reference)] = ref_x.colwise().mean().transpose();

    std::mt19937_64 rng(seed);
    Eigen::MatrixXd wy_sum = Eigen::MatrixXd::Zero(x.cols(), k);
    Eigen::VectorXd corr_sum = Eigen::VectorXd::Zero(k);
    int partners = 0;
    for (int h = 0; h < num_hospitals; ++h) {
        if (h == reference) continue;
        const auto& mine = rows[static_cast<std::size_t>(h)];
        for (const auto& [c, idx] : ref_rows)
            if (!mine.contains(c))
                throw ValidationError("cca: hospital " + std::to_string(h) + " has no samples of disease class " +
                                      std::to_string(c) + " present in the reference");
        std::vector<Eigen::Index> left, right;
        for (const auto& [c, idx] : mine) {
            auto it = ref_rows.find(c);
            if (it == ref_rows.end())
                throw ValidationError("cca: reference has no samples of disease class " + std::to_string(c));
            std::vector<Eigen::Index> pool = it->second;
            if (pool.size() >= idx.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                pool.resize(idx.size());
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
                pool.resize(idx.size());
                for (auto& p : pool) p = it->second[pick(rng)];
            }
            left.insert(left.end(), idx.begin(), idx.end());
            right.insert(right.end(), pool.begin(), pool.end());
        }
        const auto fit = fit_cca(gather(left), gather(right), k, ridge);
        std::vector<Eigen::Index> all_mine;
        for (const auto& [c, idx] : mine) all_mine.insert(all_mine.end(), idx.begin(), idx.end());
        proj.means[static_cast<std::size_t>(h)] = gather(all_mine).colwise().mean().transpose();
        proj.weights[static_cast<std::size_t>(h)] = fit.wx;
        proj.correlations[static_cast<std::size_t>(h)] = fit.correlations;
        wy_sum += fit.wy;
        corr_sum += fit.correlations;
        ++partners;
    }

    if (partners == 0) {
        const auto self = fit_cca(ref_x, ref_x, k, ridge);
        proj.weights[static_cast<std::size_t>(reference)] = self.wx;
        proj.correlations[static_cast<std::size_t>(reference)] = self.correlations;
    } else {
        proj.weights[static_cast<std::size_t>(reference)] = wy_sum / partners;
        proj.correlations[static_cast<std::size_t>(reference)] = corr_sum / partners;
    }
    return proj;
}

Eigen::MatrixXd apply_alignment(const CcaProjection& projection, const Eigen::MatrixXd& x,
                                std::span<const int> hospital) {
    if (static_cast<std::size_t>(x.rows()) != hospital.size()) throw ArgumentError("cca: label/feature length mismatch");
    if (x.cols() != projection.in_dim()) throw ArgumentError("cca: feature width does not match projection");
    Eigen::MatrixXd out(x.rows(), projection.k);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto h = static_cast<std::size_t>(hospital[static_cast<std::size_t>(i)]);
        if (h >= projection.weights.size() || projection.weights[h].size() == 0)
            throw ArgumentError("cca: no projection fitted for hospital " + std::to_string(h));
        out.row(i) = (x.row(i) - projection.means[h].transpose()) * projection.weights[h];
    }
    return out;
}

Cohort align_domains(const Cohort& cohort, int reference, int k, std::optional<double> ridge, std::uint64_t seed,
                     CcaProjection* fitted) {
    const Eigen::MatrixXd x = cohort.matrix();
    std::vector<int> hospital, disease;
    for (const auto& r : cohort.records) {
        hospital.push_back(r.hospital);
        disease.push_back(r.disease);
    }
    auto proj = fit_alignment(x, disease, hospital, cohort.num_hospitals(), reference, k, ridge, seed);
    Cohort out;
    out.records = cohort.records;
    out.hospital_names = cohort.hospital_names;
    out.disease_names = cohort.disease_names;
    out.features = apply_alignment(proj, x, hospital).cast<float>();
    if (fitted) *fitted = std::move(proj);
    return out;
}

// Format, magic "GCC1":
//   u32 D, u32 k, u32 H, u32 reference, u8 ridge flag, f64 ridge
//   per hospital: D x f64 mean, D x k f64 weights (row-major), k x f64 correlations
void save_cca(const CcaProjection& p, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    io::write_magic(out, "GCC1");
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.in_dim()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.k));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.weights.size()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.reference));
    io::write_le<std::uint8_t>(out, p.ridge ? 1 : 0);
    io::write_le<double>(out, p.ridge.value_or(0.0));
    for (std::size_t h = 0; h < p.weights.size(); ++h) {
        for (Eigen::Index i = 0; i < p.means[h].size(); ++i) io::write_le<double>(out, p.means[h][i]);
        for (Eigen::Index r = 0; r < p.weights[h].rows(); ++r)
            for (Eigen::Index c = 0; c < p.weights[h].cols(); ++c) io::write_le<double>(out, p.weights[h](r, c));
        for (Eigen::Index i = 0; i < p.correlations[h].size(); ++i) io::write_le<double>(out, p.correlations[h][i]);
    }
    if (!out) throw IoError("write failed: " + path.string());
}

CcaProjection load_cca(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    io::expect_magic(in, "GCC1");
    const auto d = io::read_le<std::uint32_t>(in);
    const auto k = io::read_le<std::uint32_t>(in);
    const auto h = io::read_le<std::uint32_t>(in);
    CcaProjection p;
    p.reference = static_cast<int>(io::read_le<std::uint32_t>(in));
    p.k = static_cast<int>(k);
    const bool has_ridge = io::read_le<std::uint8_t>(in) != 0;
    const double ridge = io::read_le<double>(in);
    if (has_ridge) p.ridge = ridge;
    for (std::uint32_t j = 0; j < h; ++j) {
        Eigen::VectorXd mean(d);
        Eigen::MatrixXd w(d, k);
        Eigen::VectorXd corr(k);
        for (std::uint32_t i = 0; i < d; ++i) mean[i] = io::read_le<double>(in);
        for (std::uint32_t r = 0; r < d; ++r)
            for (std::uint32_t c = 0; c < k; ++c) w(r, c) = io::read_le<double>(in);
        for (std::uint32_t i = 0; i < k; ++i) corr[i] = io::read_le<double>(in);
        p.means.push_back(std::move(mean));
        p.weights.push_back(std::move(w));
        p.correlations.push_back(std::move(corr));
    }
    return p;
}

}  // namespace sitebias
