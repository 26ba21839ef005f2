#pragma once

#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "descore/errors.hpp"

namespace descore::train {

/// Append-only line-delimited metric log; rows are kept in memory and, when a
/// path is given, flushed to disk per row.
class MetricSink {
public:
    MetricSink() = default;
    explicit MetricSink(const std::filesystem::path& file);

    void log(const nlohmann::json& row);
    const std::vector<nlohmann::json>& rows() const { return rows_; }

private:
    std::vector<nlohmann::json> rows_;
    std::ofstream out_;
};

std::vector<nlohmann::json> load_metrics(const std::filesystem::path& file);

/// Step-to-step fluctuation of the eval-accuracy trace: standard deviation of
/// consecutive acc_without_tie differences over the final `window` eval rows.
double trace_fluctuation(const std::vector<nlohmann::json>& rows, int window);

}  // namespace descore::train
