#pragma once

#include <map>
#include <string>
#include <vector>

namespace bsdgan::plot {

struct Series {
    std::string name;
    std::vector<double> y;
};

/// Line chart of several series sharing an implicit 0..n-1 x axis.
std::string line_chart(const std::string& title, const std::vector<Series>& series, const std::string& x_label = "",
                       const std::string& y_label = "");

/// One small line chart per panel, laid out in a grid of `columns`.
std::string panel_grid(const std::vector<std::pair<std::string, std::vector<Series>>>& panels, int columns = 3);

/// Pie chart of counts with percentage labels.
std::string pie_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& slices);

} // namespace bsdgan::plot
