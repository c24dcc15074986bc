// Model checkpoint, magic "GDM1":
//   u32 head count (3: projection, disease, domain)
//   per head: u32 layer count L, u8 activation tag, (L+1) x u32 layer dims
//   f64 lambda
//   per head, per layer: W row-major f64, then b f64
//   u8 standardizer flag; if 1: u32 D, D x f64 mean, D x f64 std

#include <fstream>

#include "sitebias/adversarial.hpp"
#include "sitebias/binary_io.hpp"
#include "sitebias/errors.hpp"

namespace sitebias {

namespace {

void write_descriptor(std::ostream& out, const nn::Head& head) {
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(head.layers.size()));
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(head.activation));
    for (auto d : head.dims()) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
}

nn::Head read_descriptor(std::istream& in) {
    const auto n_layers = io::read_le<std::uint32_t>(in);
    const auto tag = io::read_le<std::uint8_t>(in);
    if (n_layers == 0 || n_layers > 64) throw FormatError("implausible layer count");
    if (tag > 1) throw FormatError("unknown activation tag");
    std::vector<std::uint32_t> dims(n_layers + 1);
    for (auto& d : dims) {
        d = io::read_le<std::uint32_t>(in);
        if (d == 0) throw FormatError("zero layer width");
    }
    nn::Head head;
    head.activation = static_cast<nn::Activation>(tag);
    for (std::uint32_t l = 0; l < n_layers; ++l)
        head.layers.push_back({nn::Matrix(dims[l + 1], dims[l]), Eigen::VectorXd(dims[l + 1])});
    return head;
}

void write_params(std::ostream& out, const nn::Head& head) {
    for (const auto& l : head.layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) io::write_le<double>(out, l.W(r, c));
        for (Eigen::Index i = 0; i < l.b.size(); ++i) io::write_le<double>(out, l.b[i]);
    }
}

void read_params(std::istream& in, nn::Head& head) {
    for (auto& l : head.layers) {
        for (Eigen::Index r = 0; r < l.W.rows(); ++r)
            for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = io::read_le<double>(in);
        for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = io::read_le<double>(in);
    }
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const auto& m = checkpoint.model;
    const nn::Head* heads[] = {&m.projection, &m.disease_head, &m.domain_head};
    io::write_magic(out, "GDM1");
    io::write_le<std::uint32_t>(out, 3);
    for (const auto* h : heads) write_descriptor(out, *h);
    io::write_le<double>(out, m.lambda);
    for (const auto* h : heads) write_params(out, *h);
    io::write_le<std::uint8_t>(out, checkpoint.standardizer ? 1 : 0);
    if (const auto& s = checkpoint.standardizer) {
        io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s->mean.size()));
        for (Eigen::Index i = 0; i < s->mean.size(); ++i) io::write_le<double>(out, s->mean[i]);
        for (Eigen::Index i = 0; i < s->std.size(); ++i) io::write_le<double>(out, s->std[i]);
    }
    if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    io::expect_magic(in, "GDM1");
    if (io::read_le<std::uint32_t>(in) != 3) throw FormatError("expected three heads");

    Checkpoint cp;
    auto& m = cp.model;
    m.projection = read_descriptor(in);
    m.disease_head = read_descriptor(in);
    m.domain_head = read_descriptor(in);
    if (m.disease_head.in_dim() != m.projection.out_dim() || m.domain_head.in_dim() != m.projection.out_dim())
        throw FormatError("head dimensions do not chain");
    m.lambda = io::read_le<double>(in);
    read_params(in, m.projection);
    read_params(in, m.disease_head);
    read_params(in, m.domain_head);
    if (io::read_le<std::uint8_t>(in) == 1) {
        const auto d = io::read_le<std::uint32_t>(in);
        if (d != m.projection.in_dim()) throw FormatError("standardizer width does not match model input");
        Standardizer s;
        s.mean.resize(d);
        s.std.resize(d);
        for (std::uint32_t i = 0; i < d; ++i) s.mean[i] = io::read_le<double>(in);
        for (std::uint32_t i = 0; i < d; ++i) s.std[i] = io::read_le<double>(in);
        cp.standardizer = std::move(s);
    }
    return cp;
}

}  // namespace sitebias
