#include "mvi/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "mvi/errors.hpp"

namespace mvi::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Tick step from the 1-2-5 ladder giving roughly `target` intervals.
double nice_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  double step = 10.0;
  if (frac <= 1.0) step = 1.0;
  else if (frac <= 2.0) step = 2.0;
  else if (frac <= 5.0) step = 5.0;
  return step * mag;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void include(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void pad() {
    if (!(lo <= hi)) { lo = 0.0; hi = 1.0; }
    if (lo == hi) { lo -= 0.5; hi += 0.5; }
    const double m = 0.05 * (hi - lo);
    lo -= m;
    hi += m;
  }
};

}  // namespace

Plot::Plot(std::string title, std::string xlabel, std::string ylabel,
           int width, int height)
    : title_(std::move(title)),
      xlabel_(std::move(xlabel)),
      ylabel_(std::move(ylabel)),
      width_(width),
      height_(height) {}

void Plot::add_points(const std::vector<double>& x, const std::vector<double>& y,
                      const std::string& color, double radius,
                      const std::string& label) {
  if (x.size() != y.size()) throw ConfigError("svg points: mismatched sizes");
  series_.push_back({Series::Points, x, y, color, label, radius, false});
}

void Plot::add_line(const std::vector<double>& x, const std::vector<double>& y,
                    const std::string& color, double stroke_width, bool dashed,
                    const std::string& label) {
  if (x.size() != y.size()) throw ConfigError("svg line: mismatched sizes");
  series_.push_back({Series::Line, x, y, color, label, stroke_width, dashed});
}

void Plot::add_bars(const stats::Histogram& h, const std::string& color,
                    const std::string& label) {
  Series s{Series::Bars, {}, {}, color, label, 0.0, false};
  for (std::size_t k = 0; k <= h.counts.size(); ++k) s.x.push_back(h.edge(k));
  for (std::size_t c : h.counts) s.y.push_back(static_cast<double>(c));
  series_.push_back(std::move(s));
}

void Plot::add_annotation(double x, double y, const std::string& text,
                          const std::string& color) {
  annotations_.push_back({x, y, text, color});
}

void Plot::set_caption(const std::string& caption) { caption_ = caption; }

void Plot::write(const std::filesystem::path& path) const {
  Range rx, ry;
  for (const Series& s : series_) {
    for (double v : s.x) rx.include(v);
    if (s.kind == Series::Bars) ry.include(0.0);
    for (double v : s.y) ry.include(v);
  }
  for (const Annotation& a : annotations_) {
    rx.include(a.x);
    ry.include(a.y);
  }
  rx.pad();
  ry.pad();

  const double ml = 72, mr = 18, mt = caption_.empty() ? 40 : 58, mb = 52;
  const double pw = width_ - ml - mr, ph = height_ - mt - mb;
  auto X = [&](double v) { return ml + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
  auto Y = [&](double v) { return mt + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_
     << "\" height=\"" << height_ << "\" viewBox=\"0 0 " << width_ << " "
     << height_ << "\" font-family=\"sans-serif\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  os << "<text x=\"" << width_ / 2.0 << "\" y=\"22\" text-anchor=\"middle\" "
        "font-size=\"15\" fill=\"#222\">"
     << escape(title_) << "</text>\n";
  if (!caption_.empty())
    os << "<text x=\"" << width_ / 2.0
       << "\" y=\"40\" text-anchor=\"middle\" font-size=\"11\" "
          "fill=\"#555\">"
       << escape(caption_) << "</text>\n";

  // Grid and ticks.
  const double xstep = nice_step(rx.hi - rx.lo, 6);
  const double ystep = nice_step(ry.hi - ry.lo, 6);
  os << "<g font-size=\"11\" fill=\"#444\">\n";
  for (double t = std::ceil(rx.lo / xstep) * xstep; t <= rx.hi + 1e-12 * xstep;
       t += xstep) {
    const double px = X(t);
    os << "<line x1=\"" << px << "\" y1=\"" << mt << "\" x2=\"" << px
       << "\" y2=\"" << mt + ph << "\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << px << "\" y=\"" << mt + ph + 16
       << "\" text-anchor=\"middle\">" << fmt(t + 0.0) << "</text>\n";
  }
  for (double t = std::ceil(ry.lo / ystep) * ystep; t <= ry.hi + 1e-12 * ystep;
       t += ystep) {
    const double py = Y(t);
    os << "<line x1=\"" << ml << "\" y1=\"" << py << "\" x2=\"" << ml + pw
       << "\" y2=\"" << py << "\" stroke=\"#e4e4e4\" stroke-width=\"1\"/>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << py + 4
       << "\" text-anchor=\"end\">" << fmt(t + 0.0) << "</text>\n";
  }
  os << "</g>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw
     << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  os << "<text x=\"" << ml + pw / 2.0 << "\" y=\"" << height_ - 12
     << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#222\">"
     << escape(xlabel_) << "</text>\n";
  os << "<text x=\"16\" y=\"" << mt + ph / 2.0
     << "\" text-anchor=\"middle\" font-size=\"12\" fill=\"#222\" "
        "transform=\"rotate(-90 16 "
     << mt + ph / 2.0 << ")\">" << escape(ylabel_) << "</text>\n";

  // Clip series to the plot area; annotations may sit on the frame.
  os << "<clipPath id=\"plot\"><rect x=\"" << ml << "\" y=\"" << mt
     << "\" width=\"" << pw << "\" height=\"" << ph << "\"/></clipPath>\n";
  os << "<g clip-path=\"url(#plot)\">\n";
  for (const Series& s : series_) {
    if (s.kind == Series::Bars) {
      for (std::size_t k = 0; k < s.y.size(); ++k) {
        const double x0 = X(s.x[k]), x1 = X(s.x[k + 1]);
        const double y1 = Y(0.0), y0 = Y(s.y[k]);
        os << "<rect x=\"" << x0 + 0.5 << "\" y=\"" << y0 << "\" width=\""
           << std::max(0.0, x1 - x0 - 1.0) << "\" height=\""
           << std::max(0.0, y1 - y0) << "\" fill=\"" << s.color
           << "\" fill-opacity=\"0.75\" stroke=\"" << s.color << "\"/>\n";
      }
    } else if (s.kind == Series::Line) {
      os << "<polyline fill=\"none\" stroke=\"" << s.color
         << "\" stroke-width=\"" << s.size << "\"";
      if (s.dashed) os << " stroke-dasharray=\"6 4\"";
      os << " points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k)
        os << X(s.x[k]) << "," << Y(s.y[k]) << " ";
      os << "\"/>\n";
    } else {
      for (std::size_t k = 0; k < s.x.size(); ++k)
        os << "<circle cx=\"" << X(s.x[k]) << "\" cy=\"" << Y(s.y[k])
           << "\" r=\"" << s.size << "\" fill=\"" << s.color
           << "\" fill-opacity=\"0.8\"/>\n";
    }
  }
  os << "</g>\n";

  for (const Annotation& a : annotations_) {
    const double px = X(a.x), py = Y(a.y);
    os << "<circle cx=\"" << px << "\" cy=\"" << py
       << "\" r=\"3.5\" fill=\"none\" stroke=\"" << a.color
       << "\" stroke-width=\"1.5\"/>\n";
    const bool left = px > ml + 0.7 * pw;  // keep the label inside the frame
    os << "<text x=\"" << (left ? px - 8 : px + 8) << "\" y=\"" << py - 8
       << "\" font-size=\"11\" fill=\"" << a.color << "\" text-anchor=\""
       << (left ? "end" : "start") << "\">" << escape(a.text) << "</text>\n";
  }

  // Legend for labelled series, top-right inside the frame.
  double ly = mt + 16;
  for (const Series& s : series_) {
    if (s.label.empty()) continue;
    const double lx = ml + pw - 12;
    os << "<rect x=\"" << lx - 10 << "\" y=\"" << ly - 9
       << "\" width=\"10\" height=\"10\" fill=\"" << s.color << "\"/>\n";
    os << "<text x=\"" << lx - 16 << "\" y=\"" << ly
       << "\" font-size=\"11\" fill=\"#333\" text-anchor=\"end\">"
       << escape(s.label) << "</text>\n";
    ly += 16;
  }

  os << "</svg>\n";

  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << os.str();
}

}  // namespace mvi::svg
