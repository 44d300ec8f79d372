#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "mvi/vec2.hpp"

namespace mvi::geometry {

/// Parametric description of one bump section on the channel lower wall.
struct BladeParams {
  double stagger_deg = 2.0;     // rotation about the section area centroid [deg]
  double max_thickness = 0.10;  // peak bump height as fraction of chord
  double chord = 1.0;
  double bump_position = 0.5;   // chordwise location of the peak, fraction of chord

  void validate() const;  // throws ConfigError
};

enum class ParameterId { Stagger, Thickness };

/// One multiplicative variation: the selected parameter is scaled by xi.
struct VariationSpec {
  ParameterId parameter_id = ParameterId::Thickness;
  double xi = 1.0;
  int section_id = 0;

  std::string label() const;
};

/// Discrete wetted surface of the bump, ordered with strictly increasing x.
/// Normals are unit vectors pointing out of the material (into the flow).
struct SurfacePolyline {
  std::vector<Vec2> points;
  std::vector<Vec2> normals;
  std::vector<double> arc_fraction;  // 0 at first point, 1 at last, strictly increasing

  std::size_t size() const { return points.size(); }
  /// Straight-line distance between the two closure points; equals the chord.
  double chord() const;
  void validate() const;
};

/// Relative scale factors applied per parameter when building a variation
/// suite; six variations per parameter.
inline constexpr std::array<double, 6> kXiSteps{0.90, 0.95, 0.98, 1.02, 1.05, 1.10};

/// Build the bump surface: a four-digit-style thickness distribution warped so
/// its peak sits at bump_position, scaled to max_thickness * chord, placed on
/// the lower wall over [chord, 2*chord] (channel length is 3 chords), closed
/// to zero thickness at both ends, then rotated by stagger_deg about the area
/// centroid of the enclosed region. n_points >= 16.
SurfacePolyline generate_profile(const BladeParams& params, std::size_t n_points);

/// Scale the selected parameter of `base` by spec.xi. Thickness variations
/// rescale the thickness distribution only.
BladeParams apply_variation(const BladeParams& base, const VariationSpec& spec);

/// The full suite for one section: every ParameterId crossed with kXiSteps.
std::vector<VariationSpec> variation_suite(int section_id = 0);

/// Area centroid of the region between the polyline and its closing chord
/// segment.
Vec2 section_centroid(const SurfacePolyline& p);

/// Signed area of the closed region (positive for material below the curve).
double section_area(const SurfacePolyline& p);

/// Midpoint refinement: inserts one point per segment. The refined polyline
/// describes the same piecewise-linear geometry.
SurfacePolyline subdivide(const SurfacePolyline& p);

/// Columns: x, y, nx, ny, arc_fraction. 17 significant digits.
void write_profile_csv(const SurfacePolyline& p, const std::string& path);
SurfacePolyline read_profile_csv(const std::string& path);

}  // namespace mvi::geometry
