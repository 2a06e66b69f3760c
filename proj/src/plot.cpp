#include "dcl4kt/plot.hpp"

#include "dcl4kt/types.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace dcl4kt::plot {

namespace {

constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
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
  os.precision(4);
  os << v;
  return os.str();
}

struct Range {
  double lo = 0, hi = 1;
  void pad() {
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

struct Frame {
  Range x, y;
  double px(double v) const { return kLeft + (v - x.lo) / (x.hi - x.lo) * (kW - kLeft - kRight); }
  double py(double v) const { return kH - kBottom - (v - y.lo) / (y.hi - y.lo) * (kH - kTop - kBottom); }
};

void header(std::ostream& os, const Axes& axes) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(axes.title)
     << "</text>\n"
     << "<text x=\"" << (kLeft + (kW - kRight)) / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">"
     << esc(axes.xlabel) << "</text>\n"
     << "<text transform=\"translate(18," << (kTop + kH - kBottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(axes.ylabel) << "</text>\n";
}

void y_axis(std::ostream& os, const Frame& f) {
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    double v = f.y.lo + (f.y.hi - f.y.lo) * i / 5.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << f.py(v) + 4 << "\" text-anchor=\"end\">" << num(v) << "</text>\n"
       << "<line x1=\"" << kLeft << "\" y1=\"" << f.py(v) << "\" x2=\"" << kW - kRight << "\" y2=\"" << f.py(v)
       << "\" stroke=\"#ddd\"/>\n";
  }
}

void write(const std::filesystem::path& path, const std::string& body) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << body;
}

}  // namespace

void line_chart(const std::filesystem::path& path, const Axes& axes, const std::vector<Series>& series) {
  Frame f;
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
      if (!any) f.x = {s.x[i], s.x[i]}, f.y = {s.y[i] - e, s.y[i] + e}, any = true;
      f.x.lo = std::min(f.x.lo, s.x[i]);
      f.x.hi = std::max(f.x.hi, s.x[i]);
      f.y.lo = std::min(f.y.lo, s.y[i] - e);
      f.y.hi = std::max(f.y.hi, s.y[i] + e);
    }
  f.x.pad();
  f.y.pad();

  std::ostringstream os;
  header(os, axes);
  y_axis(os, f);
  for (int i = 0; i <= 5; ++i) {
    double v = f.x.lo + (f.x.hi - f.x.lo) * i / 5.0;
    os << "<text x=\"" << f.px(v) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << num(v)
       << "</text>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    std::ostringstream pts;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      pts << f.px(s.x[i]) << ',' << f.py(s.y[i]) << ' ';
      os << "<circle cx=\"" << f.px(s.x[i]) << "\" cy=\"" << f.py(s.y[i]) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0)
        os << "<line x1=\"" << f.px(s.x[i]) << "\" y1=\"" << f.py(s.y[i] - s.err[i]) << "\" x2=\"" << f.px(s.x[i])
           << "\" y2=\"" << f.py(s.y[i] + s.err[i]) << "\" stroke=\"" << color << "\"/>\n";
    }
    os << "<polyline fill=\"none\" stroke-width=\"2\" stroke=\"" << color << "\" points=\"" << pts.str() << "\"/>\n";
    double ly = kTop + 10 + 18 * static_cast<double>(k);
    os << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << ly - 8 << "\" width=\"12\" height=\"12\" fill=\"" << color
       << "\"/>\n<text x=\"" << kW - kRight + 30 << "\" y=\"" << ly + 2 << "\">" << esc(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  write(path, os.str());
}

void bar_chart(const std::filesystem::path& path, const Axes& axes, const std::vector<std::string>& labels,
               const std::vector<double>& values, const std::vector<double>& errors) {
  if (labels.size() != values.size()) throw InputError("bar_chart: labels and values differ in length");
  Frame f;
  f.x = {0, static_cast<double>(std::max<std::size_t>(values.size(), 1))};
  bool any = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    double e = i < errors.size() && std::isfinite(errors[i]) ? errors[i] : 0.0;
    if (!any) f.y = {values[i] - e, values[i] + e}, any = true;
    f.y.lo = std::min(f.y.lo, values[i] - e);
    f.y.hi = std::max(f.y.hi, values[i] + e);
  }
  f.y.pad();

  std::ostringstream os;
  header(os, axes);
  y_axis(os, f);
  const double slot = (kW - kLeft - kRight) / f.x.hi;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double x0 = kLeft + slot * (static_cast<double>(i) + 0.15);
    double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    os << "<text x=\"" << cx << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
       << esc(labels[i]) << "</text>\n";
    if (!std::isfinite(values[i])) continue;
    double top = f.py(values[i]), base = f.py(f.y.lo);
    os << "<rect x=\"" << x0 << "\" y=\"" << top << "\" width=\"" << slot * 0.7 << "\" height=\"" << base - top
       << "\" fill=\"" << kPalette[0] << "\"/>\n";
    if (i < errors.size() && std::isfinite(errors[i]) && errors[i] > 0)
      os << "<line x1=\"" << cx << "\" y1=\"" << f.py(values[i] - errors[i]) << "\" x2=\"" << cx << "\" y2=\""
         << f.py(values[i] + errors[i]) << "\" stroke=\"black\"/>\n";
  }
  os << "</svg>\n";
  write(path, os.str());
}

}  // namespace dcl4kt::plot
