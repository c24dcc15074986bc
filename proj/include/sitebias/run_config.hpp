#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sitebias/report.hpp"
#include "sitebias/tsne.hpp"

namespace sitebias::cli {

/// One documented setting of the flat key-value configuration.
struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

/// Every accepted key, in documentation order.
const std::vector<ConfigKey>& config_keys();

/// Flat key-value run configuration. Unknown keys are rejected; values are
/// type-checked when read.
class RunConfig {
public:
    RunConfig();

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    bool is_set(const std::string& key) const { return !get(key).empty(); }

    std::int64_t get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key) const;

    /// `key = value` lines with `#` comments, or a JSON report/fragment whose
    /// "config" object is re-applied.
    void load_file(const std::filesystem::path& path);

    json to_json() const;
    static RunConfig from_json(const json& j);

    SynthSpec synth_spec() const;
    TrainConfig train_config() const;
    ProbeConfig probe_config() const;
    TsneConfig tsne_config() const;
    PipelineOptions pipeline_options() const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace sitebias::cli
