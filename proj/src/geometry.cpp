#include "mvi/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mvi/errors.hpp"

namespace mvi::geometry {

namespace {

// Four-digit thickness polynomial with the closed-trailing-edge coefficient
// set; f(0) = f(1) = 0 in exact decimal arithmetic.
double thickness_poly(double u) {
  return 0.2969 * std::sqrt(u) - 0.1260 * u - 0.3516 * u * u +
         0.2843 * u * u * u - 0.1036 * u * u * u * u;
}

double thickness_poly_deriv(double u) {
  return 0.14845 / std::sqrt(u) - 0.1260 - 0.7032 * u + 0.8529 * u * u -
         0.4144 * u * u * u;
}

// Location of the polynomial's maximum, solved once by Newton iteration.
double thickness_peak_u() {
  double u = 0.30;
  for (int k = 0; k < 60; ++k) {
    const double h = 1e-7;
    const double d1 = thickness_poly_deriv(u);
    const double d2 = (thickness_poly_deriv(u + h) - thickness_poly_deriv(u - h)) / (2.0 * h);
    const double step = d1 / d2;
    u -= step;
    if (std::abs(step) < 1e-15) break;
  }
  return u;
}

}  // namespace

void BladeParams::validate() const {
  if (!(chord > 0.0)) throw ConfigError("chord must be positive");
  if (!(max_thickness >= 0.0 && max_thickness < 0.5))
    throw ConfigError("max_thickness must be in [0, 0.5)");
  if (!(bump_position > 0.05 && bump_position < 0.95))
    throw ConfigError("bump_position must be in (0.05, 0.95)");
  if (!(std::abs(stagger_deg) < 30.0))
    throw ConfigError("stagger_deg must be in (-30, 30)");
}

std::string VariationSpec::label() const {
  std::ostringstream os;
  os << (parameter_id == ParameterId::Stagger ? "stagger" : "thickness");
  os << "_xi" << xi << "_s" << section_id;
  return os.str();
}

double SurfacePolyline::chord() const {
  return norm(points.back() - points.front());
}

void SurfacePolyline::validate() const {
  if (points.size() < 2) throw InvalidProfileError("polyline needs >= 2 points");
  if (points.size() != normals.size() || points.size() != arc_fraction.size())
    throw InvalidProfileError("polyline arrays have inconsistent sizes");
  for (std::size_t k = 0; k + 1 < points.size(); ++k) {
    if (!(points[k + 1].x > points[k].x))
      throw InvalidProfileError("polyline x must be strictly increasing (index " +
                                std::to_string(k) + ")");
    if (!(arc_fraction[k + 1] > arc_fraction[k]))
      throw InvalidProfileError("arc fraction must be strictly increasing");
  }
  for (const Vec2& n : normals)
    if (std::abs(norm(n) - 1.0) > 1e-12)
      throw InvalidProfileError("normals must be unit vectors");
}

double section_area(const SurfacePolyline& p) {
  // Shoelace over the closed loop: polyline forward, then straight back along
  // the chord segment. Orientation gives positive area for material below.
  double twice = 0.0;
  const auto& pts = p.points;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k)
    twice += cross(pts[k + 1], pts[k]);
  twice += cross(pts.front(), pts.back());
  return 0.5 * twice;
}

Vec2 section_centroid(const SurfacePolyline& p) {
  const auto& pts = p.points;
  double twice = 0.0;
  double cx = 0.0, cy = 0.0;
  auto edge = [&](const Vec2& a, const Vec2& b) {
    const double w = cross(b, a);
    twice += w;
    cx += w * (a.x + b.x);
    cy += w * (a.y + b.y);
  };
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) edge(pts[k], pts[k + 1]);
  edge(pts.back(), pts.front());
  if (std::abs(twice) < 1e-300)
    throw InvalidProfileError("section area is zero; centroid undefined");
  return {cx / (3.0 * twice), cy / (3.0 * twice)};
}

SurfacePolyline generate_profile(const BladeParams& params, std::size_t n_points) {
  params.validate();
  if (n_points < 16) throw ConfigError("n_points must be >= 16");

  const double c = params.chord;
  const double b = params.bump_position;

  // Chordwise stations: two half-cosine segments meeting exactly at the peak
  // station, clustered toward both ends of the bump.
  const std::size_t n1 = std::max<std::size_t>(
      3, static_cast<std::size_t>(std::lround(double(n_points - 1) * b)) + 1);
  const std::size_t n2 = n_points - n1 + 1;
  if (n2 < 3) throw ConfigError("bump_position too close to 1 for n_points");
  std::vector<double> xh;  // x/chord in [0, 1]
  xh.reserve(n_points);
  for (std::size_t k = 0; k < n1; ++k) {
    const double t = double(k) / double(n1 - 1);
    xh.push_back(b * (1.0 - std::cos(0.5 * std::numbers::pi * t)));
  }
  for (std::size_t k = 1; k < n2; ++k) {
    const double t = double(k) / double(n2 - 1);
    xh.push_back(b + (1.0 - b) * std::sin(0.5 * std::numbers::pi * t));
  }
  xh[n1 - 1] = b;      // exact peak station
  xh.front() = 0.0;
  xh.back() = 1.0;

  // Thickness distribution, warped so the analytic peak lands at x/chord = b.
  static const double u_peak = thickness_peak_u();
  static const double f_peak = thickness_poly(u_peak);
  const double warp = std::log(u_peak) / std::log(b);
  const double height = params.max_thickness * c;

  SurfacePolyline p;
  p.points.reserve(n_points);
  for (std::size_t k = 0; k < n_points; ++k) {
    const double u = std::pow(xh[k], warp);
    double y = height * thickness_poly(u) / f_peak;
    if (k == 0 || k + 1 == n_points) y = 0.0;  // closed ends, exact
    p.points.push_back({c * (1.0 + xh[k]), y});
  }

  // Rotate about the area centroid of the enclosed section.
  const double ang = params.stagger_deg * std::numbers::pi / 180.0;
  if (ang != 0.0) {
    const Vec2 cen = section_centroid(p);
    for (Vec2& q : p.points) q = cen + rotated(q - cen, ang);
  }

  // Arc fractions.
  p.arc_fraction.resize(n_points, 0.0);
  for (std::size_t k = 1; k < n_points; ++k)
    p.arc_fraction[k] = p.arc_fraction[k - 1] + norm(p.points[k] - p.points[k - 1]);
  const double total = p.arc_fraction.back();
  for (double& a : p.arc_fraction) a /= total;

  // Outward unit normals from central-difference tangents. With material
  // below the curve and x increasing, outward is the left-hand normal.
  p.normals.resize(n_points);
  for (std::size_t k = 0; k < n_points; ++k) {
    Vec2 t;
    if (k == 0)
      t = p.points[1] - p.points[0];
    else if (k + 1 == n_points)
      t = p.points[k] - p.points[k - 1];
    else
      t = p.points[k + 1] - p.points[k - 1];
    p.normals[k] = normalized(Vec2{-t.y, t.x});
  }

  p.validate();  // rejects folded (non x-monotone) results
  return p;
}

BladeParams apply_variation(const BladeParams& base, const VariationSpec& spec) {
  if (!(spec.xi > 0.0)) throw ConfigError("variation xi must be positive");
  BladeParams out = base;
  switch (spec.parameter_id) {
    case ParameterId::Stagger: out.stagger_deg = base.stagger_deg * spec.xi; break;
    case ParameterId::Thickness: out.max_thickness = base.max_thickness * spec.xi; break;
  }
  return out;
}

std::vector<VariationSpec> variation_suite(int section_id) {
  std::vector<VariationSpec> suite;
  suite.reserve(2 * kXiSteps.size());
  for (ParameterId pid : {ParameterId::Stagger, ParameterId::Thickness})
    for (double xi : kXiSteps) suite.push_back({pid, xi, section_id});
  return suite;
}

SurfacePolyline subdivide(const SurfacePolyline& p) {
  SurfacePolyline out;
  const std::size_t n = p.size();
  out.points.reserve(2 * n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    out.points.push_back(p.points[k]);
    out.points.push_back((p.points[k] + p.points[k + 1]) * 0.5);
  }
  out.points.push_back(p.points.back());

  const std::size_t m = out.points.size();
  out.arc_fraction.resize(m, 0.0);
  for (std::size_t k = 1; k < m; ++k)
    out.arc_fraction[k] =
        out.arc_fraction[k - 1] + norm(out.points[k] - out.points[k - 1]);
  for (double& a : out.arc_fraction) a /= out.arc_fraction.back();

  out.normals.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    Vec2 t;
    if (k == 0)
      t = out.points[1] - out.points[0];
    else if (k + 1 == m)
      t = out.points[k] - out.points[k - 1];
    else
      t = out.points[k + 1] - out.points[k - 1];
    out.normals[k] = normalized(Vec2{-t.y, t.x});
  }
  out.validate();
  return out;
}

void write_profile_csv(const SurfacePolyline& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path + " for writing");
  f << "x,y,nx,ny,arc_fraction\n";
  char buf[200];
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  p.points[k].x, p.points[k].y, p.normals[k].x, p.normals[k].y,
                  p.arc_fraction[k]);
    f << buf;
  }
}

SurfacePolyline read_profile_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path);
  SurfacePolyline p;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line.rfind("x,y,", 0) != 0)
        throw ParseError(path, lineno, "missing profile CSV header");
      continue;
    }
    if (line.empty()) continue;
    double x, y, nx, ny, a;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &x, &y, &nx, &ny, &a) != 5)
      throw ParseError(path, lineno, "expected 5 comma-separated values");
    p.points.push_back({x, y});
    p.normals.push_back({nx, ny});
    p.arc_fraction.push_back(a);
  }
  p.validate();
  return p;
}

}  // namespace mvi::geometry
