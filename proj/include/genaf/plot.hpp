#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace genaf {

struct ChartSeries {
  std::string metric;               // "ta", "ra" or "asr"
  std::string x_label;              // sweep axis, or "model"
  std::vector<std::string> labels;  // one per point
  std::vector<double> values;
};

/// Reads table.json of a sweep directory (line charts over the axis) or the PGD
/// reports of an experiment directory (bar charts over models). Throws InputError
/// when neither is present or there is nothing to plot.
std::vector<ChartSeries> collect_chart_data(const std::filesystem::path& dir);

/// Writes plots/<metric>.png per metric plus plots/plot_data.json holding the plotted
/// points. Returns the image paths.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir);

}  // namespace genaf
