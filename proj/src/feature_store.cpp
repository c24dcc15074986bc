#include "sitebias/feature_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "sitebias/binary_io.hpp"
#include "sitebias/errors.hpp"

namespace sitebias {

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

int intern(std::vector<std::string>& names, std::unordered_map<std::string, int>& index,
           std::string_view name) {
    auto [it, inserted] = index.try_emplace(std::string(name), static_cast<int>(names.size()));
    if (inserted) names.emplace_back(name);
    return it->second;
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = std::ios::in) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot read " + path.string());
    return in;
}

}  // namespace

Eigen::MatrixXd Cohort::matrix(std::span<const std::size_t> indices) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(indices.size()), features.cols());
    for (std::size_t r = 0; r < indices.size(); ++r)
        out.row(static_cast<Eigen::Index>(r)) =
            features.row(static_cast<Eigen::Index>(indices[r])).cast<double>();
    return out;
}

Eigen::MatrixXd Cohort::matrix() const { return features.cast<double>(); }

std::vector<int> Cohort::hospitals(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records[i].hospital);
    return out;
}

std::vector<int> Cohort::diseases(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(records[i].disease);
    return out;
}

int Cohort::hospital_index(const std::string& name) const {
    for (int h = 0; h < num_hospitals(); ++h)
        if (hospital_names[static_cast<std::size_t>(h)] == name) return h;
    std::string valid;
    for (const auto& n : hospital_names) valid += (valid.empty() ? "" : ", ") + n;
    throw ArgumentError("unknown hospital '" + name + "'; valid names: " + valid);
}

void Cohort::validate() const {
    if (records.empty()) throw ValidationError("cohort has no records");
    if (features.cols() < 1) throw ValidationError("feature width must be positive");
    if (static_cast<std::size_t>(features.rows()) != records.size())
        throw ValidationError("feature rows do not match record count");
    if (!features.allFinite()) throw ValidationError("non-finite feature value");

    auto check_names = [](const std::vector<std::string>& names, const char* what) {
        std::unordered_set<std::string> seen(names.begin(), names.end());
        if (seen.size() != names.size())
            throw ValidationError(std::string("duplicate ") + what + " name");
    };
    check_names(hospital_names, "hospital");
    check_names(disease_names, "disease");

    std::unordered_set<std::string> ids;
    std::unordered_map<std::string, std::pair<int, int>> slide_labels;
    for (const auto& r : records) {
        if (r.hospital < 0 || r.hospital >= num_hospitals())
            throw ValidationError("hospital index out of range for " + r.patch_id);
        if (r.disease < 0 || r.disease >= num_diseases())
            throw ValidationError("disease index out of range for " + r.patch_id);
        if (!ids.insert(r.patch_id).second)
            throw ValidationError("duplicate patch_id " + r.patch_id);
        auto [it, inserted] = slide_labels.try_emplace(r.wsi_id, r.hospital, r.disease);
        if (!inserted && it->second != std::pair{r.hospital, r.disease})
            throw ValidationError("slide " + r.wsi_id + " has more than one hospital or disease");
    }
}

bool Cohort::operator==(const Cohort& other) const {
    return records == other.records && hospital_names == other.hospital_names &&
           disease_names == other.disease_names && features.rows() == other.features.rows() &&
           features.cols() == other.features.cols() &&
           std::equal(features.data(), features.data() + features.size(), other.features.data(),
                      [](float a, float b) {
                          return std::memcmp(&a, &b, sizeof(float)) == 0;
                      });
}

Cohort load_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = split_commas(line);
    static constexpr std::string_view kFixed[] = {"patch_id", "wsi_id", "hospital", "disease"};
    if (header.size() < 5) throw ParseError(1, "header needs at least one feature column");
    for (std::size_t i = 0; i < 4; ++i)
        if (header[i] != kFixed[i])
            throw ParseError(1, "expected column '" + std::string(kFixed[i]) + "'");
    const auto dims = header.size() - 4;
    for (std::size_t j = 0; j < dims; ++j)
        if (header[4 + j] != "f" + std::to_string(j))
            throw ParseError(1, "expected column 'f" + std::to_string(j) + "'");

    Cohort cohort;
    std::unordered_map<std::string, int> hosp_index, dis_index;
    std::vector<float> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size())
            throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                          std::to_string(cells.size()));
        PatchRecord rec;
        rec.patch_id = cells[0];
        rec.wsi_id = cells[1];
        rec.hospital = intern(cohort.hospital_names, hosp_index, cells[2]);
        rec.disease = intern(cohort.disease_names, dis_index, cells[3]);
        for (std::size_t j = 0; j < dims; ++j) {
            const auto cell = cells[4 + j];
            float v = 0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc() || ptr != cell.data() + cell.size()) {
                // from_chars rejects "nan"/"inf" spellings on some inputs; fall back to strtod.
                std::string s(cell);
                char* end = nullptr;
                const double d = std::strtod(s.c_str(), &end);
                if (s.empty() || end != s.c_str() + s.size())
                    throw ParseError(line_no, "bad number '" + s + "' in column f" + std::to_string(j));
                v = static_cast<float>(d);
            }
            if (!std::isfinite(v))
                throw ValidationError("line " + std::to_string(line_no) + ": non-finite feature f" +
                                      std::to_string(j));
            values.push_back(v);
        }
        cohort.records.push_back(std::move(rec));
    }
    cohort.features = Eigen::Map<FeatureMatrix>(values.data(), static_cast<Eigen::Index>(cohort.records.size()),
                                                static_cast<Eigen::Index>(dims));
    cohort.validate();
    return cohort;
}

void save_csv(const Cohort& cohort, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "patch_id,wsi_id,hospital,disease";
    for (int j = 0; j < cohort.dim(); ++j) out << ",f" << j;
    out << '\n';
    char buf[64];
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& r = cohort.records[i];
        out << r.patch_id << ',' << r.wsi_id << ',' << cohort.hospital_names[static_cast<std::size_t>(r.hospital)]
            << ',' << cohort.disease_names[static_cast<std::size_t>(r.disease)];
        for (int j = 0; j < cohort.dim(); ++j) {
            // Shortest representation that round-trips the float exactly.
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, cohort.features(static_cast<Eigen::Index>(i), j));
            out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
        }
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

void save_binary(const Cohort& cohort, const std::filesystem::path& path) {
    cohort.validate();
    auto out = open_out(path, std::ios::binary);
    io::write_magic(out, "GDB1");
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cohort.size()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cohort.dim()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cohort.num_hospitals()));
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cohort.num_diseases()));
    for (const auto& n : cohort.hospital_names) io::write_string(out, n);
    for (const auto& n : cohort.disease_names) io::write_string(out, n);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& r = cohort.records[i];
        io::write_string(out, r.patch_id);
        io::write_string(out, r.wsi_id);
        io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.hospital));
        io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(r.disease));
        for (int j = 0; j < cohort.dim(); ++j)
            io::write_le<float>(out, cohort.features(static_cast<Eigen::Index>(i), j));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Cohort load_binary(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    io::expect_magic(in, "GDB1");
    const auto n = io::read_le<std::uint32_t>(in);
    const auto d = io::read_le<std::uint32_t>(in);
    const auto h = io::read_le<std::uint32_t>(in);
    const auto c = io::read_le<std::uint32_t>(in);
    if (n == 0) throw FormatError("cohort file has no records");
    if (d == 0) throw FormatError("cohort file has zero feature width");

    Cohort cohort;
    for (std::uint32_t i = 0; i < h; ++i) cohort.hospital_names.push_back(io::read_string(in));
    for (std::uint32_t i = 0; i < c; ++i) cohort.disease_names.push_back(io::read_string(in));
    cohort.records.reserve(n);
    cohort.features.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i) {
        PatchRecord r;
        r.patch_id = io::read_string(in);
        r.wsi_id = io::read_string(in);
        r.hospital = io::read_le<std::uint16_t>(in);
        r.disease = io::read_le<std::uint16_t>(in);
        for (std::uint32_t j = 0; j < d; ++j) cohort.features(i, j) = io::read_le<float>(in);
        cohort.records.push_back(std::move(r));
    }
    cohort.validate();
    return cohort;
}

Cohort load_cohort(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? load_csv(path) : load_binary(path);
}

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) throw ArgumentError("standardizer width mismatch");
    return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

Standardizer fit_standardizer(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw ArgumentError("cannot fit a standardizer on zero records");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
    s.std = (centered.array().square().colwise().sum() / static_cast<double>(x.rows()))
                .sqrt()
                .max(Standardizer::kMinStd)
                .transpose();
    return s;
}

Standardizer fit_standardizer(const Cohort& cohort, std::span<const std::size_t> include) {
    if (include.empty()) throw ArgumentError("cannot fit a standardizer on an empty index set");
    return fit_standardizer(cohort.matrix(include));
}

int FoldPlan::fold_of(const std::string& wsi_id) const {
    auto it = assignment.find(wsi_id);
    if (it == assignment.end()) throw ArgumentError("slide " + wsi_id + " is not in the fold plan");
    return it->second;
}

std::vector<std::size_t> FoldPlan::test_indices(const Cohort& cohort, int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (fold_of(cohort.records[i].wsi_id) == fold) out.push_back(i);
    return out;
}

std::vector<std::size_t> FoldPlan::train_indices(const Cohort& cohort, int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (fold_of(cohort.records[i].wsi_id) != fold) out.push_back(i);
    return out;
}

FoldPlan grouped_kfold(const Cohort& cohort, int k, std::uint64_t seed) {
    if (k < 2) throw ArgumentError("k must be at least 2");

    // (hospital, disease) cell -> sorted distinct slides
    std::map<std::pair<int, int>, std::set<std::string>> cells;
    for (const auto& r : cohort.records) cells[{r.hospital, r.disease}].insert(r.wsi_id);
    std::size_t n_slides = 0;
    for (const auto& [cell, slides] : cells) n_slides += slides.size();
    if (n_slides < static_cast<std::size_t>(k))
        throw ArgumentError("need at least k=" + std::to_string(k) + " slides, have " + std::to_string(n_slides));

    std::mt19937_64 rng(seed);
    FoldPlan plan;
    plan.k = k;
    // The deal position carries over between cells so fold sizes stay within one slide.
    std::size_t next = 0;
    for (const auto& [cell, slides] : cells) {
        std::vector<std::string> order(slides.begin(), slides.end());
        std::shuffle(order.begin(), order.end(), rng);
        for (auto& id : order) plan.assignment[std::move(id)] = static_cast<int>(next++ % static_cast<std::size_t>(k));
    }
    return plan;
}

void save_fold_plan(const FoldPlan& plan, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "wsi_id,fold\n";
    for (const auto& [id, fold] : plan.assignment) out << id << ',' << fold << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

FoldPlan load_fold_plan(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("wsi_id,fold", 0) != 0) throw ParseError(1, "expected header wsi_id,fold");
    FoldPlan plan;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        int fold = -1;
        if (cells.size() != 2 ||
            std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), fold).ec != std::errc() || fold < 0)
            throw ParseError(line_no, "expected wsi_id,fold");
        plan.assignment[std::string(cells[0])] = fold;
        plan.k = std::max(plan.k, fold + 1);
    }
    return plan;
}

}  // namespace sitebias
