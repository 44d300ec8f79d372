#pragma once

#include <cstddef>
#include <vector>

#include "mvi/grid.hpp"

namespace mvi::morph {

/// Displacement sample on the bump surface nodes, one 2-vector per node in
/// the grid's surface range. The clamp window is an arc-fraction interval;
/// displacements outside it are forced to zero by clamp(), reproducing the
/// step-like edge a span-limited deformation leaves at the transition.
struct DeformationField {
  std::vector<double> dx, dy;
  double clamp_lo = 0.01;
  double clamp_hi = 0.99;

  std::size_t size() const { return dx.size(); }
  double max_abs() const;
};

/// Zero displacements whose arc fraction falls outside the clamp window.
DeformationField clamp(const DeformationField& d, const grid::StructuredGrid& g);

/// Matrix-free elliptic deformation map M: surface displacements to all-node
/// displacements. Each scalar component solves a Laplace problem on the grid
/// graph (uniform coefficients) with Dirichlet data: the bump surface nodes
/// carry the input, every other boundary node is pinned to zero.
///
/// The solve is Chebyshev-accelerated Jacobi run for a fixed iteration count
/// chosen at construction from the Jacobi spectral radius so the iteration
/// error bound falls below tol. A fixed count makes M exactly linear, and
/// because the Jacobi iteration matrix on the interior graph is symmetric,
/// the transpose is the same polynomial applied to the interior part of the
/// input plus the boundary incidence terms; apply and transpose share the
/// identical recurrence, so the dot-product identity holds to roundoff.
class MorphOperator {
 public:
  explicit MorphOperator(const grid::StructuredGrid& g, double tol = 1e-10);

  std::size_t iterations() const { return n_iters_; }
  double jacobi_radius() const { return rho_; }

  /// One scalar component: surface data (surface-range size) to a full node
  /// field. Boundary nodes of the result carry their Dirichlet data.
  std::vector<double> apply(const std::vector<double>& surf) const;

  /// Transpose of apply: full node field down to surface data.
  std::vector<double> transpose(const std::vector<double>& field) const;

 private:
  // x := Q_n(B) c over interior nodes, where B is the interior Jacobi matrix.
  void chebyshev(std::vector<double>& x, const std::vector<double>& c) const;

  std::size_t ni_, nj_;
  std::size_t surf_begin_, surf_end_;
  std::size_t n_iters_;
  double rho_;
};

/// Deform the grid by d: both displacement components are propagated through
/// a MorphOperator built on the grid, coordinates are shifted, and the cell
/// metrics of the result are validated. A deformation that inverts a cell
/// throws NegativeVolumeError; the morph is rejected, never repaired. The
/// input field is used as given; apply clamp() first where the campaign
/// calls for it.
grid::StructuredGrid morph_mesh(const grid::StructuredGrid& g,
                                const DeformationField& d);

}  // namespace mvi::morph
