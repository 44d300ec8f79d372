#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvi/geometry.hpp"
#include "mvi/morph.hpp"
#include "mvi/vec2.hpp"

namespace mvi::mva {

/// Dense measured polyline of one manufactured surface. Point spacing is kept
/// at or below half the CFD surface node spacing so every node normal crosses
/// a nearby scan segment.
struct ScanSurface {
  std::vector<Vec2> points;
  double sigma_meas = 0.0;  // resolution noise recorded with the scan
  std::uint64_t seed = 0;
};

/// Statistical description of manufacturing variation plus measurement noise.
/// Lengths are absolute; the defaults assume a unit chord.
struct PerturbationModel {
  double sigma_field = 0.002;       // std of the smooth surface-normal field
  double correlation_length = 0.2;  // squared-exponential kernel length
  double sigma_meas = 2e-5;         // independent per-point measurement noise
  std::uint64_t seed = 0;

  /// Scales must be non-negative, the correlation length positive, and the
  /// measurement noise at least one order below the field amplitude.
  void validate() const;  // throws ConfigError
};

/// Draws one synthetic scan: a correlated random field along arc length
/// (squared-exponential covariance, Cholesky-sampled on the densified scan
/// points) displaces the baseline along its normals, then independent
/// measurement noise is added. Deterministic per model.seed.
ScanSurface synthesize_scan(const geometry::SurfacePolyline& baseline,
                            const PerturbationModel& model);

enum class StlFormat { Ascii, Binary };

/// Unit-depth extruded ribbon: each polyline segment becomes two triangles
/// spanning z in [0,1]. Binary is little-endian with 32-bit float vertices,
/// so a write-read round trip is only exact to about 1e-6 of the chord.
void write_stl(const std::string& path, const ScanSurface& scan, StlFormat format);

/// Reads ASCII or binary STL (detected from the declared facet count and file
/// size) and collapses the ribbon back to the z=0 polyline in facet order.
/// sigma_meas and seed are not representable in STL and come back zero.
ScanSurface read_stl(const std::string& path);

/// Signed normal distances from surface nodes to a scan, positive where the
/// scanned surface lies outward of the nominal one (material surplus).
struct DeviationResult {
  std::vector<double> deviation;
  /// No ray intersection within the search radius; the nearest-point
  /// projection distance was recorded instead.
  std::vector<bool> projected;
  /// Two intersections within 2*sigma_meas of each other: the nearest was
  /// taken but the sign is not trustworthy there.
  std::vector<bool> ambiguous;

  std::size_t size() const { return deviation.size(); }
};

/// Intersects each node's normal ray (both directions, search radius
/// 0.1*chord) with the scan polyline and records the nearest signed hit.
DeviationResult deviation_analysis(const geometry::SurfacePolyline& fem_nodes,
                                   const ScanSurface& scan);

/// Deviations interpolated onto CFD surface nodes and turned into vector
/// displacements along the node normals.
struct MappedDeviations {
  morph::DeformationField field;
  std::vector<double> normal_deviation;
  /// CFD node arc fraction fell outside the measured range; the end value
  /// was used.
  std::vector<bool> extrapolated;
};

/// Linear interpolation in arc fraction from measurement nodes onto the CFD
/// surface. Arc fractions of the measurements must be strictly increasing.
MappedDeviations map_deviations(const std::vector<double>& deviations,
                                const std::vector<double>& arc_fem,
                                const geometry::SurfacePolyline& cfd_surface);

/// Columns: node_id, arc_fraction, deviation, projected, ambiguous.
void write_deviations_csv(const std::string& path,
                          const geometry::SurfacePolyline& fem_nodes,
                          const DeviationResult& result);

/// Returns arc fractions and the result in file order.
std::pair<std::vector<double>, DeviationResult> read_deviations_csv(
    const std::string& path);

}  // namespace mvi::mva
