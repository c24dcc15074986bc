#include "sitebias/commands.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>

#include "CLI11.hpp"
#include "sitebias/errors.hpp"
#include "sitebias/parallel.hpp"

namespace sitebias::cli {

namespace fs = std::filesystem;

namespace {

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

fs::path output_dir(const RunConfig& config) {
    const fs::path out = config.get("out");
    if (out.empty()) throw ArgumentError("--out must not be empty");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

json fragment(const std::string& command, const RunConfig& config) {
    return {{"tool", kToolName},
            {"version", kToolVersion},
            {"command", command},
            {"config", config.to_json()},
            {"timings", json::object()}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
    if (!fs::exists(path)) throw IoError("no such file: " + path.string());
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path.string());
    json j = json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ValidationError(path.string() + " is not valid JSON");
    return j;
}

Cohort input_cohort(const RunConfig& config) {
    if (!config.is_set("input")) throw ArgumentError("--input is required");
    return load_cohort(config.get("input"));
}

FoldPlan fold_plan(const Cohort& cohort, const RunConfig& config) {
    const auto k = config.get_int("folds");
    if (k < 2) throw ArgumentError("--folds must be >= 2");
    return grouped_kfold(cohort, static_cast<int>(k), derive_seed(config.get_u64("seed"), 10));
}

std::optional<double> cca_ridge(const RunConfig& config) {
    if (config.get("cca_ridge") == "auto") return std::nullopt;
    const double r = config.get_double("cca_ridge");
    if (r < 0) throw ArgumentError("--cca-ridge must be >= 0 or 'auto'");
    return r;
}

int cca_reference(const Cohort& cohort, const RunConfig& config) {
    return config.is_set("reference") ? cohort.hospital_index(config.get("reference")) : 0;
}

constexpr Target kBothTargets[] = {Target::hospital, Target::disease};

json reports_json(const std::vector<MetricsReport>& reports, int folds) {
    json arr = json::array();
    for (const auto& r : reports) {
        check_consistency(r, folds);
        arr.push_back(to_json(r));
    }
    return arr;
}

void log_summary(std::ostream& log, const std::vector<MetricsReport>& reports) {
    for (const auto& r : reports)
        log << to_string(r.method) << ' ' << to_string(r.task) << ": accuracy " << std::fixed << std::setprecision(4)
            << r.mean.accuracy << " auc " << r.mean.auc << " f1 " << r.mean.f1 << std::defaultfloat << '\n';
}

json evaluate_command(const std::string& name, const RunConfig& config, const Representation& rep, std::ostream& log,
                      PipelineResult* result_out = nullptr) {
    Stopwatch clock;
    const fs::path out = output_dir(config);
    json frag = fragment(name, config);
    const Cohort cohort = input_cohort(config);
    const FoldPlan folds = fold_plan(cohort, config);
    frag["timings"]["load"] = clock.lap();

    auto result = evaluate_representation(cohort, folds, rep, kBothTargets, config.probe_config(),
                                          config.pipeline_options());
    frag["timings"]["evaluate"] = clock.lap();

    save_fold_plan(folds, out / "folds.csv");
    frag["reports"] = reports_json(result.reports, folds.k);
    log_summary(log, result.reports);
    if (result_out) *result_out = std::move(result);
    return frag;
}

}  // namespace

json strip_timings(json fragment) {
    fragment.erase("timings");
    return fragment;
}

json cmd_synth(const RunConfig& config, std::ostream& log) {
    Stopwatch clock;
    const fs::path out = output_dir(config);
    json frag = fragment("synth", config);
    const Cohort cohort = synth_generate(config.synth_spec());
    save_csv(cohort, out / "cohort.csv");
    save_binary(cohort, out / "cohort.bin");
    frag["records"] = cohort.records.size();
    frag["dims"] = cohort.features.cols();
    frag["timings"]["generate"] = clock.lap();
    write_json(out / "synth.json", frag);
    log << "wrote " << cohort.records.size() << " records x " << cohort.features.cols() << " features to "
        << (out / "cohort.csv").string() << " and " << (out / "cohort.bin").string() << '\n';
    return frag;
}

json cmd_audit(const RunConfig& config, std::ostream& log) {
    json frag = evaluate_command("audit", config, Representation{}, log);
    write_json(fs::path(config.get("out")) / "audit.json", frag);
    return frag;
}

json cmd_debias(const RunConfig& config, std::ostream& log) {
    Representation rep;
    rep.method = Method::adversarial;
    rep.train = config.train_config();
    PipelineResult result;
    json frag = evaluate_command("debias", config, rep, log, &result);

    const fs::path out = config.get("out");
    const fs::path dir = out / "checkpoints";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        const auto& a = result.folds[f];
        if (a.checkpoint) save_checkpoint(*a.checkpoint, dir / ("fold" + std::to_string(f) + ".gdm"));
        if (a.history) a.history->save_csv(dir / ("fold" + std::to_string(f) + "_history.csv"));
    }
    write_json(out / "debias.json", frag);
    return frag;
}

json cmd_sweep(const RunConfig& config, std::ostream& log) {
    Stopwatch clock;
    const fs::path out = output_dir(config);
    json frag = fragment("sweep", config);
    const auto lambdas = config.get_doubles("lambdas");
    if (lambdas.empty()) throw ArgumentError("--lambdas must list at least one value");
    const Cohort cohort = input_cohort(config);
    const FoldPlan folds = fold_plan(cohort, config);
    frag["timings"]["load"] = clock.lap();

    const SweepResult sweep =
        lambda_sweep(cohort, folds, lambdas, config.train_config(), config.probe_config(), config.pipeline_options());
    frag["timings"]["sweep"] = clock.lap();
    for (const auto& p : sweep.points) {
        check_consistency(p.disease, folds.k);
        check_consistency(p.hospital, folds.k);
        log << "lambda " << p.lambda << ": hospital auc " << std::fixed << std::setprecision(4) << p.hospital.mean.auc
            << " disease accuracy " << p.disease.mean.accuracy << std::defaultfloat << '\n';
    }
    frag["sweep"] = to_json(sweep);
    sweep.save_csv(out / "sweep.csv");
    save_fold_plan(folds, out / "folds.csv");
    write_json(out / "sweep.json", frag);
    return frag;
}

json cmd_cca(const RunConfig& config, std::ostream& log) {
    Representation rep;
    rep.method = Method::cca;
    {
        // Resolve the reference name before any work so a bad name fails fast.
        const Cohort cohort = input_cohort(config);
        rep.cca_reference = cca_reference(cohort, config);
    }
    rep.cca_k = static_cast<int>(config.get_int("cca_k"));
    rep.cca_ridge = cca_ridge(config);
    rep.cca_seed = derive_seed(config.get_u64("seed"), 14);
    PipelineResult result;
    json frag = evaluate_command("cca", config, rep, log, &result);

    const fs::path out = config.get("out");
    const fs::path dir = out / "cca";
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    json corr = json::array();
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        const auto& p = result.folds[f].cca;
        if (!p) continue;
        save_cca(*p, dir / ("fold" + std::to_string(f) + ".gcc"));
        json per_hospital = json::array();
        for (std::size_t h = 0; h < p->correlations.size(); ++h) {
            const auto& c = p->correlations[h];
            per_hospital.push_back(std::vector<double>(c.data(), c.data() + c.size()));
            log << "fold " << f << " hospital " << h << " canonical correlations:";
            for (Eigen::Index i = 0; i < c.size(); ++i) log << ' ' << std::setprecision(4) << c[i];
            log << std::defaultfloat << '\n';
        }
        corr.push_back(per_hospital);
    }
    frag["canonical_correlations"] = corr;
    write_json(out / "cca.json", frag);
    return frag;
}

json cmd_tsne(const RunConfig& config, std::ostream& log) {
    Stopwatch clock;
    const fs::path out = output_dir(config);
    json frag = fragment("tsne", config);
    const Cohort cohort = input_cohort(config);
    const auto cap = config.get_int("tsne_cap");
    if (cap < 1 || cap > TsneConfig::kMaxPoints)
        throw ArgumentError("--tsne-cap must be in [1, " + std::to_string(TsneConfig::kMaxPoints) + "]");

    std::vector<std::size_t> all(cohort.records.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    Eigen::MatrixXd rep = cohort.matrix(all);
    std::string source = "raw";
    if (config.is_set("checkpoint")) {
        const Checkpoint ck = load_checkpoint(config.get("checkpoint"));
        if (ck.model.in_dim() != rep.cols())
            throw ValidationError("checkpoint expects " + std::to_string(ck.model.in_dim()) + " features, cohort has " +
                                  std::to_string(rep.cols()));
        if (ck.standardizer) rep = ck.standardizer->apply(rep);
        rep = transform(ck.model, rep);
        source = "checkpoint";
    }
    frag["timings"]["represent"] = clock.lap();

    const TsneConfig tcfg = config.tsne_config();
    const EmbedReport embedded = embed_report(cohort, rep, tcfg, static_cast<std::size_t>(cap));
    frag["timings"]["embed"] = clock.lap();

    std::vector<int> hospital;
    for (auto i : embedded.indices) hospital.push_back(cohort.records[i].hospital);
    const double sil = silhouette(embedded.embedding.coords, hospital);

    save_embedding_csv(cohort, embedded, out / "embedding.csv");
    save_kl_csv(embedded.embedding, out / "kl.csv");
    frag["embedding"] = {{"source", source},
                         {"points", embedded.indices.size()},
                         {"perplexity", tcfg.perplexity},
                         {"iterations", tcfg.iterations},
                         {"seed", tcfg.seed},
                         {"final_kl", embedded.embedding.kl_history.empty()
                                          ? 0.0
                                          : embedded.embedding.kl_history.back().second},
                         {"hospital_silhouette", sil}};
    write_json(out / "tsne.json", frag);
    log << "embedded " << embedded.indices.size() << " points (" << source << "), hospital silhouette " << sil << '\n';
    return frag;
}

json cmd_report(std::span<const fs::path> fragments, const fs::path& out, std::ostream& log) {
    if (fragments.empty()) throw ArgumentError("report needs at least one fragment");
    const std::vector<std::string> ignored = {"out", "checkpoint"};
    auto comparable = [&](json cfg) {
        for (const auto& k : ignored) cfg.erase(k);
        return cfg;
    };

    json merged = {{"tool", kToolName}, {"version", kToolVersion}, {"reports", json::array()},
                   {"timings", json::object()}};
    std::optional<json> config;
    std::vector<MetricsReport> reports;
    for (const auto& path : fragments) {
        const json frag = read_json(path);
        if (!frag.is_object() || !frag.contains("config") || !frag.contains("command"))
            throw ValidationError(path.string() + " is not a report fragment");
        const json cfg = comparable(frag["config"]);
        if (!config) {
            config = cfg;
            merged["config"] = frag["config"];
        } else if (cfg != *config) {
            std::string keys;
            for (const auto& [k, v] : cfg.items())
                if (!config->contains(k) || (*config)[k] != v) keys += (keys.empty() ? "" : ", ") + k;
            throw ValidationError("config of " + path.string() + " conflicts with earlier fragments (" + keys + ")");
        }
        const int folds = static_cast<int>(RunConfig::from_json(frag["config"]).get_int("folds"));
        const std::string command = frag["command"].get<std::string>();
        if (frag.contains("reports")) {
            for (const auto& r : frag["reports"]) {
                MetricsReport m = metrics_report_from_json(r);
                check_consistency(m, folds);
                reports.push_back(m);
                merged["reports"].push_back(r);
            }
        }
        if (frag.contains("sweep")) {
            if (merged.contains("sweep")) throw ValidationError("more than one sweep fragment");
            for (const auto& p : sweep_from_json(frag["sweep"]).points) {
                check_consistency(p.disease, folds);
                check_consistency(p.hospital, folds);
            }
            merged["sweep"] = frag["sweep"];
        }
        if (frag.contains("embedding")) merged["embedding"] = frag["embedding"];
        if (frag.contains("timings")) merged["timings"][command] = frag["timings"];
    }

    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory " + out.string());

    std::string text = format_table(reports);
    if (merged.contains("sweep")) {
        const SweepResult sweep = sweep_from_json(merged["sweep"]);
        std::vector<MetricsReport> rows;
        for (const auto& p : sweep.points) {
            rows.push_back(p.hospital);
            rows.push_back(p.disease);
        }
        text += "Lambda sweep\n" + format_table(rows);
    }
    write_json(out / "report.json", merged);
    write_text(out / "report.txt", text);
    log << text;
    return merged;
}

namespace {

std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return "--" + key;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hospital-source bias audit and removal for patch features"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_options;
    std::vector<std::string> fragment_paths;

    struct Command {
        const char* name;
        const char* help;
        json (*fn)(const RunConfig&, std::ostream&);
    };
    const Command commands[] = {
        {"synth", "generate a synthetic cohort", cmd_synth},
        {"audit", "probe raw features for hospital and disease", cmd_audit},
        {"debias", "train the adversarial projection and probe it", cmd_debias},
        {"sweep", "adversarial pipeline over a lambda grid", cmd_sweep},
        {"cca", "CCA alignment baseline", cmd_cca},
        {"tsne", "2-D embedding of raw or projected features", cmd_tsne},
    };

    std::map<std::string, CLI::App*> subs;
    for (const auto& c : commands) subs[c.name] = app.add_subcommand(c.name, c.help);
    CLI::App* report = app.add_subcommand("report", "merge fragments into report.json and report.txt");
    report->add_option("fragments", fragment_paths, "fragment JSON files")->required();

    for (auto* sub : [&] {
             std::vector<CLI::App*> v;
             for (auto& [_, s] : subs) v.push_back(s);
             v.push_back(report);
             return v;
         }()) {
        sub->add_option("--config", config_path, "key = value file or a report JSON to re-run from");
    }
    for (const auto& key : config_keys()) {
        for (auto& [name, sub] : subs) {
            auto* opt = sub->add_option(flag_name(key.name), flag_values[key.name],
                                        std::string(key.help) + " [" + key.default_value + "]");
            flag_options[std::string(name) + "/" + key.name] = opt;
        }
        if (std::string_view(key.name) == "out") report->add_option("--out", flag_values["out"], "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        if (report->parsed()) {
            std::vector<fs::path> paths(fragment_paths.begin(), fragment_paths.end());
            const std::string dir = flag_values["out"].empty() ? "out" : flag_values["out"];
            cmd_report(paths, dir, out);
            return 0;
        }
        for (const auto& c : commands) {
            CLI::App* sub = subs[c.name];
            if (!sub->parsed()) continue;
            RunConfig config;
            if (!config_path.empty()) config.load_file(config_path);
            for (const auto& key : config_keys())
                if (flag_options[std::string(c.name) + "/" + key.name]->count() > 0)
                    config.set(key.name, flag_values[key.name]);
            c.fn(config, out);
            return 0;
        }
        return 1;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        err << "error: malformed report: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace sitebias::cli
