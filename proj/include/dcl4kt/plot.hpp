#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dcl4kt::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  /// Optional symmetric error bars, same length as y.
  std::vector<double> err;
};

struct Axes {
  std::string title;
  std::string xlabel;
  std::string ylabel;
};

/// Standalone SVG line chart; non-finite points are skipped.
void line_chart(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series);

/// One bar per label with optional error bars.
void bar_chart(const std::filesystem::path& path, const Axes& axes, const std::vector<std::string>& labels,
               const std::vector<double>& values, const std::vector<double>& errors = {});

}  // namespace dcl4kt::plot
