#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mvi/geometry.hpp"
#include "mvi/vec2.hpp"

namespace mvi::grid {

// Structured body-fitted grid of the bump channel.
//
// Node (i, j), i in [0, ni), j in [0, nj), stored i-fastest. Boundaries by
// convention: i = 0 inlet, i = ni-1 outlet, j = 0 lower wall carrying the
// bump, j = nj-1 upper wall. Cells are the quads between adjacent nodes;
// cell (i, j) has corners (i,j), (i+1,j), (i+1,j+1), (i,j+1).
struct StructuredGrid {
  std::size_t ni = 0, nj = 0;
  std::vector<double> x, y;  // node coordinates, index j*ni + i

  // Inclusive i-range of lower-wall nodes lying on the bump surface, plus
  // their arc fractions along the bump (copied from the generating profile).
  std::size_t surf_begin = 0, surf_end = 0;
  std::vector<double> surface_arc_fraction;

  std::size_t node(std::size_t i, std::size_t j) const { return j * ni + i; }
  std::size_t num_nodes() const { return ni * nj; }
  std::size_t num_cells() const { return (ni - 1) * (nj - 1); }
  std::size_t num_surface_nodes() const { return surf_end - surf_begin + 1; }

  /// Bump surface as a polyline with outward (into the flow) unit normals.
  geometry::SurfacePolyline surface_polyline() const;

  void validate() const;
};

// Face metrics. An i-face at (I, j), I in [0, ni-1], separates cell (I-1, j)
// from cell (I, j) and joins node (I, j) to node (I, j+1); its area-weighted
// normal points toward +i. A j-face at (i, J), J in [0, nj-1], separates cell
// (i, J-1) from (i, J), joins node (i, J) to (i+1, J), normal toward +j.
// Adjacency is implicit in the indexing. Volumes are positive signed quad
// areas (unit depth).
struct CellMetrics {
  std::size_t ni = 0, nj = 0;  // node counts
  std::vector<double> iface_nx, iface_ny;  // (ni) x (nj-1), index j*ni + I
  std::vector<double> jface_nx, jface_ny;  // (ni-1) x (nj), index J*(ni-1) + i
  std::vector<double> volume;              // (ni-1) x (nj-1), index j*(ni-1) + i

  std::size_t cell(std::size_t i, std::size_t j) const { return j * (ni - 1) + i; }
  std::size_t iface(std::size_t I, std::size_t j) const { return j * ni + I; }
  std::size_t jface(std::size_t i, std::size_t J) const { return J * (ni - 1) + i; }
  double total_volume() const;
};

namespace detail {

/// Face normals from node coordinates; shared by metric assembly and the
/// traced solver path so both see identical arithmetic. Scalar may be double
/// or a traced type with the same operator set.
template <class Scalar, class In>
void face_normals(std::size_t ni, std::size_t nj, const In& x, const In& y,
                  std::vector<Scalar>& inx, std::vector<Scalar>& iny,
                  std::vector<Scalar>& jnx, std::vector<Scalar>& jny) {
  inx.resize(ni * (nj - 1));
  iny.resize(ni * (nj - 1));
  for (std::size_t j = 0; j + 1 < nj; ++j)
    for (std::size_t I = 0; I < ni; ++I) {
      const std::size_t a = j * ni + I, b = (j + 1) * ni + I;
      // Edge from node (I, j) to (I, j+1); normal = (dy, -dx) points +i.
      inx[j * ni + I] = y[b] - y[a];
      iny[j * ni + I] = x[a] - x[b];
    }
  jnx.resize((ni - 1) * nj);
  jny.resize((ni - 1) * nj);
  for (std::size_t J = 0; J < nj; ++J)
    for (std::size_t i = 0; i + 1 < ni; ++i) {
      const std::size_t a = J * ni + i, b = J * ni + i + 1;
      // Edge from node (i, J) to (i+1, J); normal = (-dy, dx) points +j.
      jnx[J * (ni - 1) + i] = y[a] - y[b];
      jny[J * (ni - 1) + i] = x[b] - x[a];
    }
}

}  // namespace detail

/// Assemble face normals and volumes. Throws NegativeVolumeError on the first
/// non-positive cell.
CellMetrics compute_metrics(const StructuredGrid& g);

struct GridOptions {
  double wall_beta = 2.2;   // one-sided j-stretch strength; 0 = uniform
  int smooth_passes = 0;    // optional interior Laplacian smoothing sweeps
};

/// Body-fitted channel grid. The lower wall follows straight segments from
/// (0, 0) to the first profile point and from the last profile point to
/// (3*chord, 0), with the profile polyline in between conformed exactly
/// (profile points become grid nodes). ni >= 33, nj >= 17, and ni minus the
/// profile point count must be even and >= 8.
StructuredGrid generate_grid(const geometry::SurfacePolyline& profile,
                             std::size_t ni, std::size_t nj,
                             const GridOptions& opts = {});

enum class MeshFormat { Ascii, Binary };

/// Plain structured mesh file ("ni nj" header then x block then y block,
/// 17 significant digits in text mode) plus a JSON sidecar at
/// path + ".tags.json" with boundary tags and the surface range.
void write_mesh(const StructuredGrid& g, const std::string& path,
                MeshFormat format = MeshFormat::Ascii);
StructuredGrid read_mesh(const std::string& path);

/// FNV-1a of the mesh file bytes, used to key solution files to their mesh.
std::string file_hash(const std::string& path);

}  // namespace mvi::grid
