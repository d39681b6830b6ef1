#include "flowdehaze/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "flowdehaze/error.hpp"

namespace flowdehaze {

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
      const double pad = std::max(std::abs(lo) * 0.05, 1e-3);
      lo -= pad;
      hi += pad;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

}  // namespace

std::string render_svg(const PlotSpec& spec, int width, int height) {
  const double left = 70, right = 150, top = 40, bottom = 55;
  const double pw = width - left - right, ph = height - top - bottom;
  const auto tx = [&](double v) { return spec.log_x ? std::log10(std::max(v, 1e-300)) : v; };

  Range rx, ry;
  for (const auto& s : spec.series) {
    for (double v : s.x) rx.add(tx(v));
    for (double v : s.y) ry.add(v);
  }
  if (spec.identity_line) {
    const double lo = std::min(rx.lo, ry.lo), hi = std::max(rx.hi, ry.hi);
    rx.lo = ry.lo = lo;
    rx.hi = ry.hi = hi;
  }
  rx.finish();
  ry.finish();
  const auto px = [&](double v) { return left + (tx(v) - rx.lo) / (rx.hi - rx.lo) * pw; };
  const auto py = [&](double v) { return top + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(spec.title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 4; ++i) {
    const double fx = rx.lo + (rx.hi - rx.lo) * i / 4.0;
    const double fy = ry.lo + (ry.hi - ry.lo) * i / 4.0;
    const double gx = left + pw * i / 4.0, gy = top + ph - ph * i / 4.0;
    os << "<text x=\"" << gx << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
       << num(spec.log_x ? std::pow(10.0, fx) : fx) << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">"
     << escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape(spec.y_label) << "</text>\n";

  if (spec.identity_line) {
    const double lo = std::max(rx.lo, ry.lo), hi = std::min(rx.hi, ry.hi);
    os << "<line x1=\"" << px(lo) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(hi) << "\" y2=\"" << py(hi)
       << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  }

  for (std::size_t si = 0; si < spec.series.size(); ++si) {
    const Series& s = spec.series[si];
    const char* color = kPalette[si % std::size(kPalette)];
    const std::size_t n = std::min(s.x.size(), s.y.size());
    std::ostringstream pts;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(tx(s.x[i])) || !std::isfinite(s.y[i])) continue;
      pts << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
       << (s.dashed ? " stroke-dasharray=\"4,3\"" : "") << " points=\"" << pts.str() << "\"/>\n";
    if (s.markers) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(tx(s.x[i])) || !std::isfinite(s.y[i])) continue;
        os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 14 + 18.0 * si;
    os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 36 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_svg(const std::filesystem::path& path, const PlotSpec& spec) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write plot " + path.string());
  os << render_svg(spec);
}

}  // namespace flowdehaze
