#include "nvi/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace nvi::cli {

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

const char* color(std::size_t i) { return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))]; }

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << v;
  return os.str();
}

std::string tick_label(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

/// Maps data coordinates into the plotting rectangle.
struct Frame {
  double x0;
  double x1;
  double y0;
  double y1;

  [[nodiscard]] double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
  [[nodiscard]] double py(double y) const {
    return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom);
  }
};

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  /// Finite, non-degenerate range padded by a small margin.
  void settle(double pad_fraction = 0.05) {
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = (hi - lo) * pad_fraction;
    lo -= pad;
    hi += pad;
  }
};

void open_svg(std::ostringstream& os, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
}

void axes(std::ostringstream& os, const Frame& f, const std::string& x_label, const std::string& y_label,
          bool x_ticks = true) {
  const double left = kLeft;
  const double right = kWidth - kRight;
  const double top = kTop;
  const double bottom = kHeight - kBottom;
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\"" << bottom - top
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = f.y0 + (f.y1 - f.y0) * i / 4.0;
    const double y = f.py(yv);
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << left << "\" y2=\"" << num(y)
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << tick_label(yv)
       << "</text>\n";
    if (x_ticks) {
      const double xv = f.x0 + (f.x1 - f.x0) * i / 4.0;
      const double x = f.px(xv);
      os << "<line x1=\"" << num(x) << "\" y1=\"" << bottom << "\" x2=\"" << num(x) << "\" y2=\"" << bottom + 4
         << "\" stroke=\"black\"/>\n";
      os << "<text x=\"" << num(x) << "\" y=\"" << bottom + 18 << "\" text-anchor=\"middle\">" << tick_label(xv)
         << "</text>\n";
    }
  }
  os << "<text x=\"" << (left + right) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
     << escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (top + bottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (top + bottom) / 2 << ")\">" << escape(y_label) << "</text>\n";
}

void legend(std::ostringstream& os, const std::vector<std::string>& labels) {
  double y = kTop + 14;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) {
      continue;
    }
    const double x = kWidth - kRight - 150;
    os << "<rect x=\"" << x << "\" y=\"" << y - 9 << "\" width=\"12\" height=\"10\" fill=\"" << color(i)
       << "\"/>\n";
    os << "<text x=\"" << x + 18 << "\" y=\"" << y << "\">" << escape(labels[i]) << "</text>\n";
    y += 16;
  }
}

}  // namespace

std::vector<std::array<double, 4>> marching_squares(const GridField& field, double level) {
  std::vector<std::array<double, 4>> segments;
  const ad::Matrix& v = field.values;
  const Eigen::Index rows = v.rows();
  const Eigen::Index cols = v.cols();
  if (rows < 2 || cols < 2) {
    return segments;
  }
  const double dx = (field.x1 - field.x0) / static_cast<double>(cols - 1);
  const double dy = (field.y1 - field.y0) / static_cast<double>(rows - 1);
  // Corners in order: (i, j), (i, j+1), (i+1, j+1), (i+1, j); edges between consecutive corners.
  for (Eigen::Index i = 0; i + 1 < rows; ++i) {
    for (Eigen::Index j = 0; j + 1 < cols; ++j) {
      const double c[4] = {v(i, j), v(i, j + 1), v(i + 1, j + 1), v(i + 1, j)};
      const double cx[4] = {field.x0 + j * dx, field.x0 + (j + 1) * dx, field.x0 + (j + 1) * dx, field.x0 + j * dx};
      const double cy[4] = {field.y0 + i * dy, field.y0 + i * dy, field.y0 + (i + 1) * dy, field.y0 + (i + 1) * dy};
      std::array<double, 2> hits[4];
      int n = 0;
      for (int e = 0; e < 4; ++e) {
        const int a = e;
        const int b = (e + 1) % 4;
        const bool above_a = c[a] >= level;
        const bool above_b = c[b] >= level;
        if (above_a != above_b) {
          const double t = (level - c[a]) / (c[b] - c[a]);
          hits[n] = {cx[a] + t * (cx[b] - cx[a]), cy[a] + t * (cy[b] - cy[a])};
          ++n;
        }
      }
      if (n == 2) {
        segments.push_back({hits[0][0], hits[0][1], hits[1][0], hits[1][1]});
      } else if (n == 4) {
        // Saddle: the cell centre decides which crossings pair up.
        const double centre = 0.25 * (c[0] + c[1] + c[2] + c[3]);
        const bool centre_above = centre >= level;
        const bool first_above = c[0] >= level;
        if (centre_above == first_above) {
          segments.push_back({hits[0][0], hits[0][1], hits[1][0], hits[1][1]});
          segments.push_back({hits[2][0], hits[2][1], hits[3][0], hits[3][1]});
        } else {
          segments.push_back({hits[0][0], hits[0][1], hits[3][0], hits[3][1]});
          segments.push_back({hits[1][0], hits[1][1], hits[2][0], hits[2][1]});
        }
      }
    }
  }
  return segments;
}

Rolling rolling_mean_sd(const std::vector<double>& values, int window) {
  Rolling r;
  const std::size_t w = static_cast<std::size_t>(std::max(window, 1));
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    sum_sq += values[i] * values[i];
    if (i >= w) {
      sum -= values[i - w];
      sum_sq -= values[i - w] * values[i - w];
    }
    const double n = static_cast<double>(std::min(i + 1, w));
    const double mean = sum / n;
    r.mean.push_back(mean);
    r.sd.push_back(std::sqrt(std::max(0.0, sum_sq / n - mean * mean)));
  }
  return r;
}

std::string svg_warning(const std::string& title, const std::string& message) {
  std::ostringstream os;
  open_svg(os, title);
  os << "<text x=\"" << kWidth / 2 << "\" y=\"" << kHeight / 2 << "\" text-anchor=\"middle\" fill=\"#b00\">"
     << "warning: " << escape(message) << "</text>\n</svg>\n";
  return os.str();
}

std::string svg_line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<Series>& series, const std::vector<Band>& bands) {
  Range xr;
  Range yr;
  for (const Series& s : series) {
    for (double x : s.x) {
      xr.add(x);
    }
    for (double y : s.y) {
      yr.add(y);
    }
  }
  for (const Band& b : bands) {
    for (double x : b.x) {
      xr.add(x);
    }
    for (double y : b.lo) {
      yr.add(y);
    }
    for (double y : b.hi) {
      yr.add(y);
    }
  }
  xr.settle(0.0);
  yr.settle();
  const Frame f{xr.lo, xr.hi, yr.lo, yr.hi};

  std::ostringstream os;
  open_svg(os, title);
  for (std::size_t bi = 0; bi < bands.size(); ++bi) {
    const Band& b = bands[bi];
    std::ostringstream pts;
    for (std::size_t i = 0; i < b.x.size(); ++i) {
      pts << num(f.px(b.x[i])) << "," << num(f.py(b.hi[i])) << " ";
    }
    for (std::size_t i = b.x.size(); i-- > 0;) {
      pts << num(f.px(b.x[i])) << "," << num(f.py(b.lo[i])) << " ";
    }
    os << "<polygon points=\"" << pts.str() << "\" fill=\"" << color(bi) << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
  }
  std::vector<std::string> labels;
  for (std::size_t si = 0; si < series.size(); ++si) {
    const Series& s = series[si];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (std::isfinite(s.y[i])) {
        pts << num(f.px(s.x[i])) << "," << num(f.py(s.y[i])) << " ";
      }
    }
    os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color(si)
       << "\" stroke-width=\"1.5\"/>\n";
    labels.push_back(s.label);
  }
  axes(os, f, x_label, y_label);
  legend(os, labels);
  os << "</svg>\n";
  return os.str();
}

std::string svg_bar_chart(const std::string& title, const std::string& y_label,
                          const std::vector<std::string>& categories, const std::vector<Series>& series) {
  Range yr;
  yr.add(0.0);
  for (const Series& s : series) {
    for (double y : s.y) {
      yr.add(y);
    }
  }
  yr.settle();
  const double n_cat = static_cast<double>(std::max<std::size_t>(categories.size(), 1));
  const Frame f{0.0, n_cat, yr.lo, yr.hi};
  std::ostringstream os;
  open_svg(os, title);
  const double group_width = 0.8;
  const double bar_width = group_width / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  std::vector<std::string> labels;
  for (std::size_t si = 0; si < series.size(); ++si) {
    for (std::size_t ci = 0; ci < categories.size() && ci < series[si].y.size(); ++ci) {
      const double y = series[si].y[ci];
      if (!std::isfinite(y)) {
        continue;
      }
      const double xa = f.px(static_cast<double>(ci) + 0.1 + bar_width * static_cast<double>(si));
      const double xb = f.px(static_cast<double>(ci) + 0.1 + bar_width * static_cast<double>(si + 1));
      const double ya = f.py(std::max(y, 0.0));
      const double yb = f.py(std::min(y, 0.0));
      os << "<rect x=\"" << num(xa) << "\" y=\"" << num(ya) << "\" width=\"" << num(xb - xa) << "\" height=\""
         << num(yb - ya) << "\" fill=\"" << color(si) << "\"/>\n";
    }
    labels.push_back(series[si].label);
  }
  for (std::size_t ci = 0; ci < categories.size(); ++ci) {
    os << "<text x=\"" << num(f.px(static_cast<double>(ci) + 0.5)) << "\" y=\"" << kHeight - kBottom + 18
       << "\" text-anchor=\"middle\">" << escape(categories[ci]) << "</text>\n";
  }
  axes(os, f, "", y_label, false);
  legend(os, labels);
  os << "</svg>\n";
  return os.str();
}

std::string svg_scatter_contour(const std::string& title, const ad::Matrix& points, const GridField& field,
                                const std::vector<double>& levels) {
  const Frame f{field.x0, field.x1, field.y0, field.y1};
  std::ostringstream os;
  open_svg(os, title);
  os << "<clipPath id=\"plot\"><rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kWidth - kLeft - kRight
     << "\" height=\"" << kHeight - kTop - kBottom << "\"/></clipPath>\n<g clip-path=\"url(#plot)\">\n";
  for (std::size_t li = 0; li < levels.size(); ++li) {
    std::ostringstream d;
    for (const auto& s : marching_squares(field, levels[li])) {
      d << "M" << num(f.px(s[0])) << " " << num(f.py(s[1])) << "L" << num(f.px(s[2])) << " " << num(f.py(s[3]));
    }
    os << "<path d=\"" << d.str() << "\" fill=\"none\" stroke=\"#555\" stroke-opacity=\""
       << num(0.3 + 0.7 * static_cast<double>(li + 1) / static_cast<double>(levels.size())) << "\"/>\n";
  }
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    if (!std::isfinite(points(i, 0)) || !std::isfinite(points(i, 1))) {
      continue;
    }
    os << "<circle cx=\"" << num(f.px(points(i, 0))) << "\" cy=\"" << num(f.py(points(i, 1)))
       << "\" r=\"1.5\" fill=\"" << color(0) << "\" fill-opacity=\"0.5\"/>\n";
  }
  os << "</g>\n";
  axes(os, f, "z1", "z2");
  os << "</svg>\n";
  return os.str();
}

}  // namespace nvi::cli
