#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace s2d::cli {

struct MetricsRow {
    long step = 0;
    std::string stage;
    std::string split;
    double loss = 0;
    double lr = 0;
};

/// Parses metrics.tsv; throws ErrorKind::data on malformed lines.
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// Curriculum stages present in the log ("1", "2", "3", "joint"), in order
/// of first appearance. Warm-up and eval rows are not stages.
std::vector<std::string> plotted_stages(const std::vector<MetricsRow>& rows);

/// step, train, val columns for one stage; blank where a split has no value.
std::string loss_table(const std::vector<MetricsRow>& rows, const std::string& stage);
std::string loss_svg(const std::vector<MetricsRow>& rows, const std::string& stage);

struct Bar {
    std::string label;
    double value = 0;
    double error = 0;
};
std::string bar_svg(const std::vector<Bar>& bars, const std::string& title);

/// Reads table.tsv (ablation layout) into CE-F1 bars.
std::vector<Bar> read_table_bars(const std::filesystem::path& path);

}  // namespace s2d::cli
