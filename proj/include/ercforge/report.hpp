// File-only reporting surface: CSV tables and static SVG plots.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace ercforge {

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;  // sorted by x by the caller
};

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

// Simple line chart with markers and a legend.
void write_line_plot_svg(const std::filesystem::path& path, const std::string& title,
                         const std::string& x_label, const std::string& y_label,
                         const std::vector<PlotSeries>& series);

}  // namespace ercforge
