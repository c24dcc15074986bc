#include "sitebias/report.hpp"

#include <algorithm>
#include <cstdio>

#include "sitebias/errors.hpp"

namespace sitebias {

namespace {

json metrics_json(const FoldMetrics& m) { return {{"accuracy", m.accuracy}, {"auc", m.auc}, {"f1", m.f1}}; }

FoldMetrics metrics_from(const json& j) {
    return {j.at("accuracy").get<double>(), j.at("auc").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

json to_json(const MetricsReport& report) {
    json j;
    j["task"] = std::string(to_string(report.task));
    j["method"] = std::string(to_string(report.method));
    if (report.lambda) j["lambda"] = *report.lambda;
    j["folds"] = json::array();
    for (const auto& f : report.folds) j["folds"].push_back(metrics_json(f));
    j["mean"] = metrics_json(report.mean);
    j["std"] = metrics_json(report.std);
    return j;
}

MetricsReport metrics_report_from_json(const json& j) {
    validate_metrics_report_json(j);
    MetricsReport r;
    r.task = parse_target(j.at("task").get<std::string>());
    r.method = parse_method(j.at("method").get<std::string>());
    if (j.contains("lambda")) r.lambda = j.at("lambda").get<double>();
    for (const auto& f : j.at("folds")) r.folds.push_back(metrics_from(f));
    r.mean = metrics_from(j.at("mean"));
    r.std = metrics_from(j.at("std"));
    return r;
}

void check_consistency(const MetricsReport& report, int expected_folds) {
    if (report.folds.empty()) throw ValidationError("report has no folds");
    if (expected_folds > 0 && static_cast<int>(report.folds.size()) != expected_folds)
        throw ValidationError("report has " + std::to_string(report.folds.size()) + " folds, expected " +
                              std::to_string(expected_folds));
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    for (const auto& f : report.folds)
        if (!in_unit(f.accuracy) || !in_unit(f.auc) || !in_unit(f.f1))
            throw ValidationError("fold metric outside [0, 1]");
    auto check = [&](double FoldMetrics::*field, const char* name) {
        double lo = 1, hi = 0;
        for (const auto& f : report.folds) {
            lo = std::min(lo, f.*field);
            hi = std::max(hi, f.*field);
        }
        const double mean = report.mean.*field;
        const double tol = 1e-12;
        if (mean < lo - tol || mean > hi + tol) throw ValidationError(std::string("mean ") + name + " outside fold range");
        if (!(report.std.*field >= 0.0)) throw ValidationError(std::string("negative std for ") + name);
    };
    check(&FoldMetrics::accuracy, "accuracy");
    check(&FoldMetrics::auc, "auc");
    check(&FoldMetrics::f1, "f1");
}

void validate_metrics_report_json(const json& j) {
    auto fail = [](const std::string& what) { throw ValidationError("metrics report: " + what); };
    if (!j.is_object()) fail("not an object");
    for (const char* key : {"task", "method", "folds", "mean", "std"})
        if (!j.contains(key)) fail(std::string("missing key '") + key + "'");
    if (!j["task"].is_string()) fail("task must be a string");
    if (!j["method"].is_string()) fail("method must be a string");
    try {
        parse_target(j["task"].get<std::string>());
        parse_method(j["method"].get<std::string>());
    } catch (const ArgumentError& e) {
        fail(e.what());
    }
    if (j.contains("lambda") && !j["lambda"].is_number()) fail("lambda must be a number");
    auto check_metrics = [&](const json& m, const std::string& where) {
        if (!m.is_object()) fail(where + " must be an object");
        for (const char* key : {"accuracy", "auc", "f1"})
            if (!m.contains(key) || !m[key].is_number()) fail(where + "." + key + " must be a number");
    };
    if (!j["folds"].is_array() || j["folds"].empty()) fail("folds must be a non-empty array");
    for (std::size_t i = 0; i < j["folds"].size(); ++i) check_metrics(j["folds"][i], "folds[" + std::to_string(i) + "]");
    check_metrics(j["mean"], "mean");
    check_metrics(j["std"], "std");
    for (const auto& [key, value] : j.items())
        if (key != "task" && key != "method" && key != "lambda" && key != "folds" && key != "mean" && key != "std")
            fail("unexpected key '" + key + "'");
}

json to_json(const SweepResult& sweep) {
    json j = json::array();
    for (const auto& p : sweep.points)
        j.push_back({{"lambda", p.lambda}, {"disease", to_json(p.disease)}, {"hospital", to_json(p.hospital)}});
    return j;
}

SweepResult sweep_from_json(const json& j) {
    SweepResult s;
    for (const auto& p : j)
        s.points.push_back({p.at("lambda").get<double>(), metrics_report_from_json(p.at("disease")),
                            metrics_report_from_json(p.at("hospital"))});
    return s;
}

std::string method_label(Method m) {
    switch (m) {
        case Method::raw_probe: return "MLP";
        case Method::adversarial: return "Adversarial";
        case Method::cca: return "CCA";
    }
    return "?";
}

std::string format_table(const std::vector<MetricsReport>& reports) {
    std::string out;
    char line[160];
    for (Target task : {Target::hospital, Target::disease}) {
        std::vector<const MetricsReport*> rows;
        for (const auto& r : reports)
            if (r.task == task) rows.push_back(&r);
        if (rows.empty()) continue;
        std::stable_sort(rows.begin(), rows.end(),
                         [](const auto* a, const auto* b) { return static_cast<int>(a->method) < static_cast<int>(b->method); });
        out += "Task: " + std::string(to_string(task)) + "\n";
        std::snprintf(line, sizeof line, "%-18s | %-15s | %-15s | %-15s\n", "Method", "Accuracy±std", "AUC±std",
                      "F1±std");
        out += line;
        out += std::string(18, '-') + "-+-" + std::string(15, '-') + "-+-" + std::string(15, '-') + "-+-" +
               std::string(15, '-') + "\n";
        for (const auto* r : rows) {
            std::string label = method_label(r->method);
            if (r->lambda && r->method == Method::adversarial) {
                char buf[32];
                std::snprintf(buf, sizeof buf, " (λ=%g)", *r->lambda);
                label += buf;
            }
            char acc[32], auc[32], f1[32];
            std::snprintf(acc, sizeof acc, "%.4f±%.4f", r->mean.accuracy, r->std.accuracy);
            std::snprintf(auc, sizeof auc, "%.4f±%.4f", r->mean.auc, r->std.auc);
            std::snprintf(f1, sizeof f1, "%.4f±%.4f", r->mean.f1, r->std.f1);
            std::snprintf(line, sizeof line, "%-18s | %-15s | %-15s | %-15s\n", label.c_str(), acc, auc, f1);
            out += line;
        }
        out += "\n";
    }
    return out;
}

}  // namespace sitebias
