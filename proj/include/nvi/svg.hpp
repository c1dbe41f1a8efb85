#ifndef NVI_SVG_HPP
#define NVI_SVG_HPP

#include "nvi/tape.hpp"

#include <array>
#include <string>
#include <vector>

/// Minimal SVG chart writers used by the plot command.
namespace nvi::cli {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Shaded region between `lo` and `hi` drawn beneath the series.
struct Band {
  std::vector<double> x;
  std::vector<double> lo;
  std::vector<double> hi;
};

/// Scalar field sampled on a regular grid: values(i, j) sits at
/// (x0 + j dx, y0 + i dy) with dx, dy from the extents and grid size.
struct GridField {
  ad::Matrix values;
  double x0 = 0.0;
  double x1 = 1.0;
  double y0 = 0.0;
  double y1 = 1.0;
};

/// Line segments (xa, ya, xb, yb) in field coordinates where the field
/// crosses `level`, by marching squares with linear interpolation.
std::vector<std::array<double, 4>> marching_squares(const GridField& field, double level);

struct Rolling {
  std::vector<double> mean;
  std::vector<double> sd;
};

/// Trailing-window mean and population SD; early entries use the points available.
Rolling rolling_mean_sd(const std::vector<double>& values, int window);

std::string svg_warning(const std::string& title, const std::string& message);
std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series, const std::vector<Band>& bands = {});
/// One group of bars per category, one bar per series (series.y indexed by category).
std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories, const std::vector<Series>& series);
/// Points (rows of an n x 2 matrix) over contour lines of `field`.
std::string svg_scatter_contour(const std::string& title, const ad::Matrix& points, const GridField& field,
                                const std::vector<double>& levels);

}  // namespace nvi::cli

#endif
