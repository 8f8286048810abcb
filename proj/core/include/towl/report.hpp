#pragma once

#include <span>
#include <string>

#include "towl/train.hpp"

namespace towl {

/// Line-oriented key=value block: accuracy, counts, per-class recall
/// (recall.<label>), unknown recall, and the agent statistics.
std::string metrics_text(const EvaluationMetrics& metrics);

/// The same fields as JSON, plus the loss trace when one is given.
std::string metrics_json(const EvaluationMetrics& metrics, std::span<const EpochRecord> trace = {});

}  // namespace towl
