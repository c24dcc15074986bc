#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "sitebias/probe.hpp"

namespace sitebias {

using json = nlohmann::json;

/// {task, method, lambda?, folds:[{accuracy,auc,f1}], mean:{...}, std:{...}}
json to_json(const MetricsReport& report);
MetricsReport metrics_report_from_json(const json& j);

/// Throws ValidationError unless every metric lies in [0, 1], each mean lies
/// within the fold range, std >= 0, and (when expected_folds > 0) the fold
/// count matches.
void check_consistency(const MetricsReport& report, int expected_folds = 0);

/// Structural check of a serialized MetricsReport (keys, types, enum values)
/// mirroring docs/metrics_report.schema.json.
void validate_metrics_report_json(const json& j);

json to_json(const SweepResult& sweep);
SweepResult sweep_from_json(const json& j);

/// Method | Accuracy±std | AUC±std | F1±std, one block per task.
std::string format_table(const std::vector<MetricsReport>& reports);

std::string method_label(Method m);

}  // namespace sitebias
