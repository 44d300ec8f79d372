#include "mvi/morph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvi/errors.hpp"

namespace mvi::morph {

double DeformationField::max_abs() const {
  double m = 0.0;
  for (std::size_t k = 0; k < dx.size(); ++k)
    m = std::max(m, std::hypot(dx[k], dy[k]));
  return m;
}

DeformationField clamp(const DeformationField& d, const grid::StructuredGrid& g) {
  if (d.size() != g.num_surface_nodes())
    throw DimensionMismatchError(
        "deformation has " + std::to_string(d.size()) + " nodes, surface has " +
        std::to_string(g.num_surface_nodes()));
  if (!(d.clamp_lo <= d.clamp_hi))
    throw ConfigError("clamp window is empty");
  DeformationField out = d;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double a = g.surface_arc_fraction[k];
    if (a < d.clamp_lo || a > d.clamp_hi) {
      out.dx[k] = 0.0;
      out.dy[k] = 0.0;
    }
  }
  return out;
}

MorphOperator::MorphOperator(const grid::StructuredGrid& g, double tol)
    : ni_(g.ni), nj_(g.nj), surf_begin_(g.surf_begin), surf_end_(g.surf_end) {
  if (ni_ < 3 || nj_ < 3) throw ConfigError("grid too small to morph");
  if (!(tol > 0.0 && tol < 1.0)) throw ConfigError("morph tolerance out of range");
  // Jacobi spectral radius of the interior 5-point graph Laplacian.
  const double pi = std::numbers::pi;
  rho_ = 0.5 * (std::cos(pi / double(ni_ - 1)) + std::cos(pi / double(nj_ - 1)));
  // Chebyshev error factor sigma per sweep; 2*sigma^n <= tol.
  const double sigma = rho_ / (1.0 + std::sqrt(1.0 - rho_ * rho_));
  n_iters_ = std::size_t(std::ceil(std::log(2.0 / tol) / -std::log(sigma)));
  n_iters_ = std::max<std::size_t>(n_iters_, 2);
}

void MorphOperator::chebyshev(std::vector<double>& x,
                              const std::vector<double>& c) const {
  const std::size_t nin = ni_ - 2, njn = nj_ - 2;
  auto idx = [&](std::size_t i, std::size_t j) { return j * nin + i; };

  // B applied to an interior vector: quarter-sum of interior neighbours.
  std::vector<double> prev(nin * njn, 0.0), cur = c, next(nin * njn);
  auto bmul_plus_c = [&](const std::vector<double>& v, std::vector<double>& out) {
    for (std::size_t j = 0; j < njn; ++j)
      for (std::size_t i = 0; i < nin; ++i) {
        double s = 0.0;
        if (i > 0) s += v[idx(i - 1, j)];
        if (i + 1 < nin) s += v[idx(i + 1, j)];
        if (j > 0) s += v[idx(i, j - 1)];
        if (j + 1 < njn) s += v[idx(i, j + 1)];
        out[idx(i, j)] = 0.25 * s + c[idx(i, j)];
      }
  };

  // x1 = B*0 + c = c; the two-term recurrence continues from there.
  const double rho2 = rho_ * rho_;
  double omega = 2.0 / (2.0 - rho2);
  for (std::size_t k = 1; k < n_iters_; ++k) {
    bmul_plus_c(cur, next);
    for (std::size_t n = 0; n < next.size(); ++n)
      next[n] = omega * next[n] + (1.0 - omega) * prev[n];
    prev.swap(cur);
    cur.swap(next);
    omega = 1.0 / (1.0 - 0.25 * rho2 * omega);
  }
  x = cur;
}

std::vector<double> MorphOperator::apply(const std::vector<double>& surf) const {
  const std::size_t nsurf = surf_end_ - surf_begin_ + 1;
  if (surf.size() != nsurf)
    throw DimensionMismatchError("surface vector has " +
                                 std::to_string(surf.size()) + " entries, need " +
                                 std::to_string(nsurf));
  const std::size_t nin = ni_ - 2, njn = nj_ - 2;

  // c = quarter of the boundary data seen by interior nodes. Only the lower
  // wall carries nonzero Dirichlet values, on the bump surface columns.
  std::vector<double> c(nin * njn, 0.0);
  for (std::size_t i = surf_begin_; i <= surf_end_; ++i)
    c[(i - 1)] = 0.25 * surf[i - surf_begin_];  // interior row j=1 -> jn=0

  std::vector<double> x;
  chebyshev(x, c);

  std::vector<double> field(ni_ * nj_, 0.0);
  for (std::size_t i = surf_begin_; i <= surf_end_; ++i)
    field[i] = surf[i - surf_begin_];  // node (i, 0)
  for (std::size_t j = 0; j < njn; ++j)
    for (std::size_t i = 0; i < nin; ++i)
      field[(j + 1) * ni_ + (i + 1)] = x[j * nin + i];
  return field;
}

std::vector<double> MorphOperator::transpose(
    const std::vector<double>& field) const {
  if (field.size() != ni_ * nj_)
    throw DimensionMismatchError("node field has " +
                                 std::to_string(field.size()) + " entries, need " +
                                 std::to_string(ni_ * nj_));
  const std::size_t nin = ni_ - 2, njn = nj_ - 2;

  std::vector<double> u(nin * njn);
  for (std::size_t j = 0; j < njn; ++j)
    for (std::size_t i = 0; i < nin; ++i)
      u[j * nin + i] = field[(j + 1) * ni_ + (i + 1)];

  std::vector<double> y;
  chebyshev(y, u);

  const std::size_t nsurf = surf_end_ - surf_begin_ + 1;
  std::vector<double> surf(nsurf);
  for (std::size_t i = surf_begin_; i <= surf_end_; ++i)
    surf[i - surf_begin_] = field[i] + 0.25 * y[i - 1];
  return surf;
}

grid::StructuredGrid morph_mesh(const grid::StructuredGrid& g,
                                const DeformationField& d) {
  if (d.size() != g.num_surface_nodes())
    throw DimensionMismatchError(
        "deformation has " + std::to_string(d.size()) + " nodes, surface has " +
        std::to_string(g.num_surface_nodes()));
  const MorphOperator op(g);
  const std::vector<double> gx = op.apply(d.dx);
  const std::vector<double> gy = op.apply(d.dy);

  grid::StructuredGrid out = g;
  for (std::size_t n = 0; n < out.num_nodes(); ++n) {
    out.x[n] += gx[n];
    out.y[n] += gy[n];
  }
  grid::compute_metrics(out);  // throws NegativeVolumeError on inverted cells
  return out;
}

}  // namespace mvi::morph
