#include "sitebias/run_config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sitebias/errors.hpp"
#include "sitebias/parallel.hpp"

namespace sitebias::cli {

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"input", "", "cohort file (.csv or binary)"},
        {"out", "out", "output directory"},
        {"checkpoint", "", "model checkpoint for tsne"},
        {"seed", "0", "base seed for every random stream"},
        {"folds", "5", "cross-validation folds"},
        {"standardize", "true", "z-score features on the training folds"},
        {"workers", "0", "parallel fold workers (0: TOOL_THREADS or all cores)"},
        {"epochs", "30", "adversarial training epochs"},
        {"batch_size", "64", "adversarial mini-batch size"},
        {"lambda", "1.0", "adversarial strength"},
        {"lambda_warmup", "false", "ramp lambda up during training"},
        {"proj_hidden", "512", "projection hidden width"},
        {"proj_out", "256", "projection output width"},
        {"lr", "0.001", "adversarial learning rate"},
        {"probe_hidden", "256", "probe hidden width (0: linear)"},
        {"probe_epochs", "30", "probe epochs"},
        {"probe_batch_size", "64", "probe mini-batch size"},
        {"probe_lr", "0.001", "probe learning rate"},
        {"lambdas", "0,0.1,0.5,1,2,5", "lambda grid for sweep"},
        {"reference", "", "CCA reference hospital name (default: first)"},
        {"cca_k", "8", "CCA components"},
        {"cca_ridge", "auto", "CCA ridge ('auto' = 1e-6 trace/D)"},
        {"tsne_perplexity", "30", "t-SNE perplexity"},
        {"tsne_iterations", "1000", "t-SNE iterations"},
        {"tsne_learning_rate", "200", "t-SNE learning rate"},
        {"tsne_init", "pca", "t-SNE initialization (pca|random)"},
        {"tsne_cap", "2000", "max points embedded (<= 5000)"},
        {"synth_dims", "16", "synthetic feature width"},
        {"synth_hospitals", "4", "synthetic hospitals"},
        {"synth_diseases", "2", "synthetic diseases"},
        {"synth_wsis_per_cell", "5", "slides per (hospital, disease)"},
        {"synth_patches_per_wsi", "100", "patches per slide"},
        {"synth_disease_signal", "1.0", "disease mean offset"},
        {"synth_hospital_signal", "1.0", "hospital mean offset"},
        {"synth_confound", "0.0", "slide-level site/disease confound probability"},
        {"synth_overlap", "0.0", "site shift along the disease pattern"},
        {"synth_noise_sigma", "1.0", "isotropic noise"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ArgumentError("unknown config key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ArgumentError("unknown config key '" + key + "'");
    return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    const auto& s = get(key);
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ArgumentError("config '" + key + "': expected an integer, got '" + s + "'");
    return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const auto& s = get(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ArgumentError("config '" + key + "': expected a non-negative integer, got '" + s + "'");
    return v;
}

namespace {

double parse_double(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
        throw ArgumentError("config '" + key + "': expected a number, got '" + s + "'");
    return v;
}

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

double RunConfig::get_double(const std::string& key) const { return parse_double(key, get(key)); }

bool RunConfig::get_bool(const std::string& key) const {
    const auto& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ArgumentError("config '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_double(key, item));
    }
    return out;
}

void RunConfig::load_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("no such config file: " + path.string());
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();

    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
        const json j = json::parse(text, nullptr, false);
        if (j.is_discarded()) throw ValidationError("config file " + path.string() + " is not valid JSON");
        const json& cfg = j.contains("config") ? j.at("config") : j;
        for (const auto& [k, v] : cfg.items()) set(k, v.is_string() ? v.get<std::string>() : v.dump());
        return;
    }

    std::stringstream lines(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (!values_.contains(key)) throw ParseError(line_no, "unknown config key '" + key + "'");
        set(key, trim(line.substr(eq + 1)));
    }
}

json RunConfig::to_json() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig c;
    for (const auto& [k, v] : j.items()) c.set(k, v.is_string() ? v.get<std::string>() : v.dump());
    return c;
}

SynthSpec RunConfig::synth_spec() const {
    SynthSpec s;
    s.dims = static_cast<int>(get_int("synth_dims"));
    s.hospitals = static_cast<int>(get_int("synth_hospitals"));
    s.diseases = static_cast<int>(get_int("synth_diseases"));
    s.wsis_per_cell = static_cast<int>(get_int("synth_wsis_per_cell"));
    s.patches_per_wsi = static_cast<int>(get_int("synth_patches_per_wsi"));
    s.disease_signal = get_double("synth_disease_signal");
    s.hospital_signal = get_double("synth_hospital_signal");
    s.confound = get_double("synth_confound");
    s.overlap = get_double("synth_overlap");
    s.noise_sigma = get_double("synth_noise_sigma");
    s.seed = get_u64("seed");
    s.validate();
    return s;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = static_cast<int>(get_int("epochs"));
    t.batch_size = static_cast<int>(get_int("batch_size"));
    t.lambda = get_double("lambda");
    t.lambda_warmup = get_bool("lambda_warmup");
    t.proj_hidden = static_cast<int>(get_int("proj_hidden"));
    t.proj_out = static_cast<int>(get_int("proj_out"));
    t.adam.lr = get_double("lr");
    t.seed = derive_seed(get_u64("seed"), 11);
    t.validate();
    return t;
}

ProbeConfig RunConfig::probe_config() const {
    ProbeConfig p;
    p.hidden = static_cast<int>(get_int("probe_hidden"));
    p.epochs = static_cast<int>(get_int("probe_epochs"));
    p.batch_size = static_cast<int>(get_int("probe_batch_size"));
    p.adam.lr = get_double("probe_lr");
    p.seed = derive_seed(get_u64("seed"), 12);
    p.validate();
    return p;
}

TsneConfig RunConfig::tsne_config() const {
    TsneConfig t;
    t.perplexity = get_double("tsne_perplexity");
    t.iterations = static_cast<int>(get_int("tsne_iterations"));
    t.learning_rate = get_double("tsne_learning_rate");
    const auto& init = get("tsne_init");
    if (init == "pca")
        t.init = TsneInit::pca;
    else if (init == "random")
        t.init = TsneInit::random;
    else
        throw ArgumentError("config 'tsne_init': expected pca or random");
    t.seed = derive_seed(get_u64("seed"), 13);
    return t;
}

PipelineOptions RunConfig::pipeline_options() const {
    PipelineOptions o;
    o.standardize = get_bool("standardize");
    const auto w = get_int("workers");
    if (w < 0) throw ArgumentError("config 'workers' must be >= 0");
    o.workers = w == 0 ? default_workers() : static_cast<int>(w);
    return o;
}

}  // namespace sitebias::cli
