#include "descore/train/metrics.hpp"

#include <cmath>

namespace descore::train {

MetricSink::MetricSink(const std::filesystem::path& file) {
    std::filesystem::create_directories(file.parent_path());
    out_.open(file, std::ios::app);
    if (!out_.good()) throw IoError("metrics: cannot open " + file.string());
}

void MetricSink::log(const nlohmann::json& row) {
    rows_.push_back(row);
    if (out_.is_open()) {
        out_ << row.dump() << "\n";
        out_.flush();
        if (!out_.good()) throw IoError("metrics: write failed");
    }
}

std::vector<nlohmann::json> load_metrics(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in.good()) throw IoError("metrics: cannot read " + file.string());
    std::vector<nlohmann::json> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
        if (row.is_discarded()) throw DataError("metrics: bad row in " + file.string());
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace descore::train

namespace descore::train {

double trace_fluctuation(const std::vector<nlohmann::json>& rows, int window) {
    std::vector<double> accs;
    for (const auto& row : rows) {
        if (row.contains("kind") && row["kind"] == "eval") {
            accs.push_back(row["acc_without_tie"].get<double>());
        }
    }
    if (accs.size() < 2) return 0.0;
    const size_t start = accs.size() > static_cast<size_t>(window)
                             ? accs.size() - static_cast<size_t>(window)
                             : 0;
    std::vector<double> diffs;
    for (size_t i = start + 1; i < accs.size(); ++i) diffs.push_back(accs[i] - accs[i - 1]);
    if (diffs.empty()) return 0.0;
    double mean = 0.0;
    for (double d : diffs) mean += d;
    mean /= static_cast<double>(diffs.size());
    double var = 0.0;
    for (double d : diffs) var += (d - mean) * (d - mean);
    return std::sqrt(var / static_cast<double>(diffs.size()));
}

}  // namespace descore::train
