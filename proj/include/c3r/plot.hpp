#pragma once

#include <string>
#include <utility>
#include <vector>

namespace c3r {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart with a legend, written as PNG.
void plot_lines(const std::string& path, const std::string& title, const std::vector<Series>& series);

/// Labelled bar chart.
void plot_bars(const std::string& path, const std::string& title, const std::vector<std::pair<std::string, double>>& bars);

/// Box plots (whiskers at min/max, box at quartiles, line at the median).
void plot_distributions(const std::string& path, const std::string& title,
                        const std::vector<std::pair<std::string, std::vector<double>>>& groups);

}  // namespace c3r
