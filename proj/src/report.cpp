#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "mvi/errors.hpp"
#include "mvi/stats.hpp"
#include "mvi/svg.hpp"
#include "mvi/toolchain.hpp"
#include "toolchain_internal.hpp"

// Derived artifacts: deviation histograms, prediction-vs-measurement scatter
// with the fitted line and the bisection reference, and the annotated surface
// sensitivity map. Everything lands under <run>/report/.

namespace mvi::toolchain {

using detail::ojson;

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void write_histogram_csv(const std::filesystem::path& path,
                         const stats::Histogram& h) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "bin_lo,bin_hi,count\n";
  f.precision(17);
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    f << h.edge(k) << "," << h.edge(k + 1) << "," << h.counts[k] << "\n";
}

void write_scatter_csv(const std::filesystem::path& path,
                       const std::vector<double>& x,
                       const std::vector<double>& y) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "df_nonlinear,df_adjoint\n";
  f.precision(17);
  for (std::size_t k = 0; k < x.size(); ++k) f << x[k] << "," << y[k] << "\n";
}

}  // namespace

void cmd_report(const std::filesystem::path& run_dir) {
  auto [cfg, paths] = open_case(run_dir);
  if (!std::filesystem::exists(paths.records()))
    throw ConfigError("no records at " + paths.records().string() +
                      "; run a validation campaign first");
  const std::vector<SampleOutcome> rows = read_records_csv(paths.records());
  std::filesystem::create_directories(paths.report_dir());

  // Group keys present in the records, in first-appearance order.
  std::vector<std::pair<std::string, std::string>> groups;
  for (const SampleOutcome& r : rows) {
    const auto key = std::make_pair(r.objective, r.variant);
    if (std::find(groups.begin(), groups.end(), key) == groups.end())
      groups.push_back(key);
  }

  ojson section = ojson::object();
  std::size_t total_ok = 0;
  for (const auto& [objective, variant] : groups) {
    std::vector<double> devs, df_nl, df_adj;
    int excluded = 0, failed = 0;
    for (const SampleOutcome& r : rows) {
      if (r.objective != objective || r.variant != variant) continue;
      if (r.status == "ok") {
        devs.push_back(r.deviation_pct);
        df_nl.push_back(r.df_nonlinear);
        df_adj.push_back(r.df_adjoint);
      } else if (r.status == "excluded_degenerate") {
        ++excluded;
      } else {
        ++failed;
      }
    }
    total_ok += devs.size();
    const std::string key = objective + "_" + variant;
    ojson g = {{"n_ok", devs.size()},
               {"n_excluded", excluded},
               {"n_failed", failed}};
    if (!devs.empty()) {
      const stats::Histogram h =
          stats::histogram(devs, cfg.report.bin_width_pct);
      write_histogram_csv(paths.report_dir() / ("histogram_" + key + ".csv"),
                          h);
      svg::Plot hist("Prediction deviation, " + key,
                     "deviation of adjoint prediction [%]", "samples");
      hist.add_bars(h, "#1f77b4");
      std::vector<double> abs_devs = devs;
      for (double& v : abs_devs) v = std::abs(v);
      std::size_t within = 0;
      for (double v : abs_devs)
        if (v <= 10.0) ++within;
      const double frac10 =
          static_cast<double>(within) / static_cast<double>(devs.size());
      hist.set_caption("n = " + std::to_string(devs.size()) + ", median |dev| " +
                       fmt_g(stats::median(abs_devs)) + "%, " +
                       fmt_g(100.0 * frac10) + "% within +-10%; excluded " +
                       std::to_string(excluded) + ", failed " +
                       std::to_string(failed));
      hist.write(paths.report_dir() / ("histogram_" + key + ".svg"));

      write_scatter_csv(paths.report_dir() / ("scatter_" + key + ".csv"),
                        df_nl, df_adj);
      svg::Plot scatter("Adjoint prediction vs nonlinear re-solve, " + key,
                        "dF nonlinear", "dF adjoint");
      const double lo = std::min(*std::min_element(df_nl.begin(), df_nl.end()),
                                 *std::min_element(df_adj.begin(), df_adj.end()));
      const double hi = std::max(*std::max_element(df_nl.begin(), df_nl.end()),
                                 *std::max_element(df_adj.begin(), df_adj.end()));
      scatter.add_line({lo, hi}, {lo, hi}, "#999999", 1.2, true, "bisection");
      g["frac_within_10pct"] = frac10;
      g["median_abs_dev_pct"] = stats::median(abs_devs);
      g["mean_dev_pct"] = stats::mean(devs);
      g["max_abs_dev_pct"] = stats::max_abs(devs);
      if (devs.size() >= 2) {
        try {
          const stats::LinearFit fit = stats::least_squares(df_nl, df_adj);
          scatter.add_line({lo, hi},
                           {fit.intercept + fit.slope * lo,
                            fit.intercept + fit.slope * hi},
                           "#d62728", 1.4, false, "fit");
          scatter.set_caption("slope " + fmt_g(fit.slope) + ", R^2 " +
                              fmt_g(fit.r2) + ", intercept " +
                              fmt_g(fit.intercept) + " (bias, reported "
                              "separately from slope)");
          g["slope"] = fit.slope;
          g["intercept"] = fit.intercept;
          g["r2"] = fit.r2;
        } catch (const ConfigError&) {
          scatter.set_caption("fit skipped: no variance in dF nonlinear");
        }
      }
      scatter.add_points(df_nl, df_adj, "#1f77b4", 3.0, key);
      scatter.write(paths.report_dir() / ("scatter_" + key + ".svg"));
    }
    section[key] = std::move(g);
  }

  if (total_ok == 0)
    throw ConfigError("no samples survived in " + paths.records().string() +
                      "; nothing to report");

  detail::merge_summary(paths.summary(), "report", section);
  std::printf("report: %zu groups, %zu surviving rows -> %s\n", groups.size(),
              total_ok, paths.report_dir().c_str());
}

void cmd_sensitivity_map(const std::filesystem::path& run_dir,
                         adjoint::ObjectiveId objective, adjoint::Variant v) {
  Baseline base = ensure_baseline(run_dir);
  const SurfaceMap map =
      read_surface_map(base.paths, objective, v, base.mesh_hash);
  const geometry::SurfacePolyline surface = base.grid.surface_polyline();
  if (surface.size() != map.g.g_normal.size())
    throw ConfigError("adjoint map size does not match the surface");

  std::filesystem::create_directories(base.paths.report_dir());
  const std::string key =
      adjoint::to_string(objective) + "_" + adjoint::to_string(v);
  const auto csv = base.paths.report_dir() / ("sensitivity_" + key + ".csv");
  {
    std::ofstream f(csv);
    if (!f) throw ConfigError("cannot write " + csv.string());
    f << "k,arc_fraction,x,y,gx,gy,g_normal\n";
    f.precision(17);
    for (std::size_t k = 0; k < surface.size(); ++k)
      f << k << "," << map.g.arc_fraction[k] << "," << surface.points[k].x
        << "," << surface.points[k].y << "," << map.g.gx[k] << ","
        << map.g.gy[k] << "," << map.g.g_normal[k] << "\n";
  }

  // Signed normal sensitivity along the arc. Red: outward displacement
  // raises the objective; blue: lowers it.
  svg::Plot plot("Surface sensitivity, " + key, "arc fraction",
                 "dJ per outward normal displacement");
  plot.add_line({0.0, 1.0}, {0.0, 0.0}, "#999999", 1.0, true);
  plot.add_line(map.g.arc_fraction, map.g.g_normal, "#444444", 1.4);
  std::vector<double> pos_x, pos_y, neg_x, neg_y;
  for (std::size_t k = 0; k < map.g.g_normal.size(); ++k) {
    if (map.g.g_normal[k] > 0.0) {
      pos_x.push_back(map.g.arc_fraction[k]);
      pos_y.push_back(map.g.g_normal[k]);
    } else if (map.g.g_normal[k] < 0.0) {
      neg_x.push_back(map.g.arc_fraction[k]);
      neg_y.push_back(map.g.g_normal[k]);
    }
  }
  plot.add_points(pos_x, pos_y, "#d62728", 3.0, "outward raises J");
  plot.add_points(neg_x, neg_y, "#1f77b4", 3.0, "outward lowers J");

  double peak = 0.0;
  std::size_t peak_k = 0;
  double peak_pos = 0.0, peak_neg = 0.0;
  std::size_t pos_k = 0, neg_k = 0;
  for (std::size_t k = 0; k < map.g.g_normal.size(); ++k) {
    const double gk = map.g.g_normal[k];
    if (std::abs(gk) > peak) {
      peak = std::abs(gk);
      peak_k = k;
    }
    if (gk > peak_pos) {
      peak_pos = gk;
      pos_k = k;
    }
    if (gk < peak_neg) {
      peak_neg = gk;
      neg_k = k;
    }
  }
  const double flat_floor = 1e-8;
  if (peak < flat_floor) {
    plot.set_caption("max |g| = " + fmt_g(peak) +
                     ": below the significance floor, the wall is "
                     "aerodynamically flat");
  } else {
    plot.add_annotation(map.g.arc_fraction[peak_k], map.g.g_normal[peak_k],
                        "peak |g| at arc " + fmt_g(map.g.arc_fraction[peak_k]),
                        "#222222");
    if (peak_pos > flat_floor && pos_k != peak_k)
      plot.add_annotation(map.g.arc_fraction[pos_k], peak_pos,
                          "strongest gain zone", "#d62728");
    if (peak_neg < -flat_floor && neg_k != peak_k)
      plot.add_annotation(map.g.arc_fraction[neg_k], peak_neg,
                          "strongest loss zone", "#1f77b4");
    plot.set_caption(
        "max |g| = " + fmt_g(peak) + " at arc " +
        fmt_g(map.g.arc_fraction[peak_k]) +
        (map.stagnated ? "; adjoint stagnated, magnitudes approximate" : ""));
  }
  const auto svg_path =
      base.paths.report_dir() / ("sensitivity_" + key + ".svg");
  plot.write(svg_path);
  std::printf("sensitivity map %s: max |g| %.4g at arc %.3f -> %s\n",
              key.c_str(), peak,
              peak < flat_floor ? 0.0 : map.g.arc_fraction[peak_k],
              svg_path.c_str());
}

}  // namespace mvi::toolchain
