#include "mvi/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvi/errors.hpp"

namespace mvi::grid {

void StructuredGrid::validate() const {
  if (ni < 3 || nj < 3) throw ConfigError("grid needs at least 3x3 nodes");
  if (x.size() != num_nodes() || y.size() != num_nodes())
    throw ConfigError("grid coordinate arrays have wrong size");
  if (!(surf_begin < surf_end && surf_end < ni))
    throw ConfigError("invalid surface index range");
  if (surface_arc_fraction.size() != num_surface_nodes())
    throw ConfigError("surface arc fraction array has wrong size");
}

geometry::SurfacePolyline StructuredGrid::surface_polyline() const {
  geometry::SurfacePolyline p;
  const std::size_t n = num_surface_nodes();
  p.points.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t id = node(surf_begin + k, 0);
    p.points.push_back({x[id], y[id]});
  }
  p.arc_fraction = surface_arc_fraction;
  p.normals.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    Vec2 t;
    if (k == 0)
      t = p.points[1] - p.points[0];
    else if (k + 1 == n)
      t = p.points[k] - p.points[k - 1];
    else
      t = p.points[k + 1] - p.points[k - 1];
    p.normals[k] = normalized(Vec2{-t.y, t.x});
  }
  return p;
}

double CellMetrics::total_volume() const {
  double s = 0.0;
  for (double v : volume) s += v;
  return s;
}

CellMetrics compute_metrics(const StructuredGrid& g) {
  CellMetrics m;
  m.ni = g.ni;
  m.nj = g.nj;
  detail::face_normals<double>(g.ni, g.nj, g.x, g.y, m.iface_nx, m.iface_ny,
                               m.jface_nx, m.jface_ny);
  m.volume.resize(g.num_cells());
  for (std::size_t j = 0; j + 1 < g.nj; ++j)
    for (std::size_t i = 0; i + 1 < g.ni; ++i) {
      const std::size_t a = g.node(i, j), b = g.node(i + 1, j),
                        c = g.node(i + 1, j + 1), d = g.node(i, j + 1);
      // Shoelace over the quad, counter-clockwise.
      const double twice = g.x[a] * g.y[b] - g.x[b] * g.y[a] +
                           g.x[b] * g.y[c] - g.x[c] * g.y[b] +
                           g.x[c] * g.y[d] - g.x[d] * g.y[c] +
                           g.x[d] * g.y[a] - g.x[a] * g.y[d];
      const double vol = 0.5 * twice;
      if (!(vol > 0.0)) throw NegativeVolumeError(i, j, vol);
      m.volume[m.cell(i, j)] = vol;
    }
  return m;
}

namespace {

// One-sided stretch toward t = 0; beta = 0 degenerates to uniform.
double wall_stretch(double t, double beta) {
  if (beta <= 0.0) return t;
  return std::sinh(beta * t) / std::sinh(beta);
}

}  // namespace

StructuredGrid generate_grid(const geometry::SurfacePolyline& profile,
                             std::size_t ni, std::size_t nj,
                             const GridOptions& opts) {
  profile.validate();
  if (ni < 33 || nj < 17) throw ConfigError("grid must be at least 33x17");
  const std::size_t n_surf = profile.size();
  if (ni < n_surf + 8 || (ni - n_surf) % 2 != 0)
    throw ConfigError("ni must be n_profile + an even flat count >= 8");
  const std::size_t n_flat = (ni - n_surf) / 2;

  const double c = profile.chord();
  const Vec2 p_first = profile.points.front();
  const Vec2 p_last = profile.points.back();
  const double height = c;

  // Lower wall: straight run-in, the bump, straight run-out. Half-cosine
  // spacing concentrates flat-segment nodes toward the bump junctions.
  std::vector<double> xl(ni), yl(ni);
  for (std::size_t k = 0; k < n_flat; ++k) {
    const double t = double(k) / double(n_flat);  // 1 excluded: junction node is the profile's
    const double s = std::sin(0.5 * std::numbers::pi * t);
    xl[k] = 0.0 + s * p_first.x;
    yl[k] = 0.0 + s * p_first.y;
  }
  for (std::size_t k = 0; k < n_surf; ++k) {
    xl[n_flat + k] = profile.points[k].x;
    yl[n_flat + k] = profile.points[k].y;
  }
  for (std::size_t k = 1; k <= n_flat; ++k) {
    const double t = double(k) / double(n_flat);
    const double s = 1.0 - std::cos(0.5 * std::numbers::pi * t);
    xl[n_flat + n_surf - 1 + k] = p_last.x + s * (3.0 * c - p_last.x);
    yl[n_flat + n_surf - 1 + k] = p_last.y + s * (0.0 - p_last.y);
  }

  StructuredGrid g;
  g.ni = ni;
  g.nj = nj;
  g.x.resize(ni * nj);
  g.y.resize(ni * nj);
  for (std::size_t j = 0; j < nj; ++j) {
    const double t = double(j) / double(nj - 1);
    const double s = wall_stretch(t, opts.wall_beta);
    for (std::size_t i = 0; i < ni; ++i) {
      g.x[g.node(i, j)] = xl[i];
      g.y[g.node(i, j)] = yl[i] * (1.0 - s) + height * s;
    }
  }

  for (int pass = 0; pass < opts.smooth_passes; ++pass) {
    std::vector<double> nx = g.x, ny = g.y;
    for (std::size_t j = 1; j + 1 < nj; ++j)
      for (std::size_t i = 1; i + 1 < ni; ++i) {
        const std::size_t id = g.node(i, j);
        nx[id] = 0.25 * (g.x[g.node(i - 1, j)] + g.x[g.node(i + 1, j)] +
                         g.x[g.node(i, j - 1)] + g.x[g.node(i, j + 1)]);
        ny[id] = 0.25 * (g.y[g.node(i - 1, j)] + g.y[g.node(i + 1, j)] +
                         g.y[g.node(i, j - 1)] + g.y[g.node(i, j + 1)]);
      }
    g.x.swap(nx);
    g.y.swap(ny);
  }

  g.surf_begin = n_flat;
  g.surf_end = n_flat + n_surf - 1;
  g.surface_arc_fraction = profile.arc_fraction;
  g.validate();
  compute_metrics(g);  // rejects folded grids up front
  return g;
}

}  // namespace mvi::grid
