#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvi/stats.hpp"

// Self-contained SVG charts for campaign reports: scatter with reference
// lines, histogram bars, and annotated profiles. No external assets; every
// file renders standalone in a browser. Not a plotting library; exactly the
// primitives the reports need.

namespace mvi::svg {

class Plot {
 public:
  Plot(std::string title, std::string xlabel, std::string ylabel,
       int width = 720, int height = 480);

  void add_points(const std::vector<double>& x, const std::vector<double>& y,
                  const std::string& color, double radius = 3.0,
                  const std::string& label = "");
  void add_line(const std::vector<double>& x, const std::vector<double>& y,
                const std::string& color, double stroke_width = 1.6,
                bool dashed = false, const std::string& label = "");
  void add_bars(const stats::Histogram& h, const std::string& color,
                const std::string& label = "");
  /// Short text pinned at a data-space point.
  void add_annotation(double x, double y, const std::string& text,
                      const std::string& color);
  /// One-line note under the title (fit numbers, sample counts).
  void set_caption(const std::string& caption);

  void write(const std::filesystem::path& path) const;

 private:
  struct Series {
    enum Kind { Points, Line, Bars } kind;
    std::vector<double> x, y;    // Bars: x = edges (n+1), y = counts (n)
    std::string color, label;
    double size = 0.0;           // radius or stroke width
    bool dashed = false;
  };
  struct Annotation {
    double x, y;
    std::string text, color;
  };

  std::string title_, xlabel_, ylabel_, caption_;
  int width_, height_;
  std::vector<Series> series_;
  std::vector<Annotation> annotations_;
};

}  // namespace mvi::svg
