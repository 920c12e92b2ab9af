#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "steerlab/run_config.hpp"

namespace steerlab {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;   // the residual or margin the check looked at
    double threshold = 0.0;
    std::string note;
};

// Runs every module invariant against the configured instance (or an
// externally loaded dataset, for diagnosing tampered files). Pure; no
// filesystem output.
std::vector<CheckResult> verify_all(const RunConfig& config,
                                    const std::optional<DatasetSpec>& dataset_override = std::nullopt);

nlohmann::json report_to_json(const std::vector<CheckResult>& checks);
int count_failures(const std::vector<CheckResult>& checks);

}  // namespace steerlab
