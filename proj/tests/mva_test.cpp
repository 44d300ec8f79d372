#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mvi/errors.hpp"
#include "mvi/geometry.hpp"
#include "mvi/grid.hpp"
#include "mvi/morph.hpp"
#include "mvi/mva.hpp"

using namespace mvi;

namespace {

geometry::SurfacePolyline bump_surface(std::size_t n_points = 33) {
  geometry::BladeParams p;
  return geometry::generate_profile(p, n_points);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Straight horizontal surface with +y normals and uniform arc fractions,
// handy for hand-checkable deviation cases.
geometry::SurfacePolyline straight_surface(std::size_t n, double length = 1.0) {
  geometry::SurfacePolyline s;
  s.points.resize(n);
  s.normals.resize(n);
  s.arc_fraction.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double a = double(k) / double(n - 1);
    s.points[k] = {a * length, 0.0};
    s.normals[k] = {0.0, 1.0};
    s.arc_fraction[k] = a;
  }
  return s;
}

}  // namespace

TEST_CASE("perturbation model validation") {
  mva::PerturbationModel m;
  CHECK_NOTHROW(m.validate());
  SUBCASE("negative scales rejected") {
    m.sigma_field = -1e-3;
    CHECK_THROWS_AS(m.validate(), ConfigError);
  }
  SUBCASE("non-positive correlation length rejected") {
    m.correlation_length = 0.0;
    CHECK_THROWS_AS(m.validate(), ConfigError);
  }
  SUBCASE("measurement noise must trail the field by an order") {
    m.sigma_meas = 0.5 * m.sigma_field;
    CHECK_THROWS_AS(m.validate(), ConfigError);
  }
  SUBCASE("all-zero noise is a legal degenerate model") {
    m.sigma_field = 0.0;
    m.sigma_meas = 0.0;
    CHECK_NOTHROW(m.validate());
  }
}

TEST_CASE("zero perturbation reproduces the baseline exactly") {
  const auto surf = bump_surface();
  mva::PerturbationModel m;
  m.sigma_field = 0.0;
  m.sigma_meas = 0.0;
  const auto scan = mva::synthesize_scan(surf, m);
  // two midpoint refinements: original nodes sit at every fourth scan point
  REQUIRE(scan.points.size() == 4 * (surf.size() - 1) + 1);
  for (std::size_t k = 0; k < surf.size(); ++k) {
    CHECK(scan.points[4 * k].x == surf.points[k].x);
    CHECK(scan.points[4 * k].y == surf.points[k].y);
  }
}

TEST_CASE("scan synthesis is deterministic per seed") {
  const auto surf = bump_surface();
  mva::PerturbationModel m;
  m.seed = 99;
  const auto a = mva::synthesize_scan(surf, m);
  const auto b = mva::synthesize_scan(surf, m);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t k = 0; k < a.points.size(); ++k) {
    CHECK(a.points[k].x == b.points[k].x);
    CHECK(a.points[k].y == b.points[k].y);
  }
  m.seed = 100;
  const auto c = mva::synthesize_scan(surf, m);
  double diff = 0.0;
  for (std::size_t k = 0; k < a.points.size(); ++k)
    diff = std::max(diff, norm(c.points[k] - a.points[k]));
  CHECK(diff > 1e-5);
}

TEST_CASE("sampled field std matches sigma_field at one point") {
  // Monte Carlo oracle on the sampler: 10,000 independent seeds, signed
  // normal displacement at one fixed surface node.
  const auto surf = bump_surface(17);
  const std::size_t mid = surf.size() / 2;
  mva::PerturbationModel m;
  double sum = 0.0, sum2 = 0.0;
  const int n = 10000;
  for (int s = 0; s < n; ++s) {
    m.seed = std::uint64_t(s);
    const auto scan = mva::synthesize_scan(surf, m);
    const double v = dot(scan.points[4 * mid] - surf.points[mid], surf.normals[mid]);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(sd == doctest::Approx(m.sigma_field).epsilon(0.05));
  CHECK(std::abs(mean) < 5.0 * m.sigma_field / std::sqrt(double(n)));
}

TEST_CASE("ascii stl parses a hand-checkable two-facet ribbon") {
  const auto path = temp_file("mvi_square.stl");
  std::ofstream f(path);
  f << "solid square\n"
       "  facet normal 0 0 0\n"
       "    outer loop\n"
       "      vertex 0 0 0\n"
       "      vertex 1 0 0\n"
       "      vertex 0 0 1\n"
       "    endloop\n"
       "  endfacet\n"
       "  facet normal 0 0 0\n"
       "    outer loop\n"
       "      vertex 1 0 0\n"
       "      vertex 1 0 1\n"
       "      vertex 0 0 1\n"
       "    endloop\n"
       "  endfacet\n"
       "endsolid square\n";
  f.close();
  const auto scan = mva::read_stl(path.string());
  REQUIRE(scan.points.size() == 2);
  CHECK(scan.points[0].x == 0.0);
  CHECK(scan.points[0].y == 0.0);
  CHECK(scan.points[1].x == 1.0);
  CHECK(scan.points[1].y == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("malformed ascii stl reports the offending line") {
  const auto path = temp_file("mvi_bad.stl");
  std::ofstream f(path);
  f << "solid bad\n"
       "  facet normal 0 0 0\n"
       "    outer loop\n"
       "      vertex 0 0 nonsense\n";
  f.close();
  CHECK_THROWS_AS(mva::read_stl(path.string()), ParseError);
  try {
    mva::read_stl(path.string());
  } catch (const ParseError& e) {
    CHECK(e.line == 4);
  }
  std::filesystem::remove(path);
}

TEST_CASE("binary stl truncation is caught at the missing facet") {
  // A valid 4-facet ribbon whose declared count is patched up to 5.
  mva::ScanSurface scan;
  scan.points = {{0.0, 0.0}, {0.5, 0.1}, {1.0, 0.0}};
  const auto path = temp_file("mvi_trunc.stl");
  mva::write_stl(path.string(), scan, mva::StlFormat::Binary);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(80);
    const std::uint32_t bogus = 5;
    f.write(reinterpret_cast<const char*>(&bogus), 4);
  }
  CHECK_THROWS_AS(mva::read_stl(path.string()), ParseError);
  try {
    mva::read_stl(path.string());
  } catch (const ParseError& e) {
    CHECK(e.what() == doctest::Contains("facet 5"));
    CHECK(e.what() == doctest::Contains("byte offset"));
  }
  std::filesystem::remove(path);
}

TEST_CASE("stl round trip sits at the float precision floor") {
  const auto surf = bump_surface();
  mva::PerturbationModel m;
  m.seed = 5;
  const auto scan = mva::synthesize_scan(surf, m);
  for (const auto format : {mva::StlFormat::Ascii, mva::StlFormat::Binary}) {
    const auto path = temp_file("mvi_rt.stl");
    mva::write_stl(path.string(), scan, format);
    const auto back = mva::read_stl(path.string());
    REQUIRE(back.points.size() == scan.points.size());
    double worst = 0.0;
    for (std::size_t k = 0; k < scan.points.size(); ++k)
      worst = std::max(worst, norm(back.points[k] - scan.points[k]));
    CHECK(worst < 1e-6 * surf.chord());
    // metadata is not representable in STL
    CHECK(back.sigma_meas == 0.0);
    CHECK(back.seed == 0);
    std::filesystem::remove(path);
  }
}

TEST_CASE("deviation analysis recovers constructed offsets") {
  const auto surf = bump_surface();
  mva::PerturbationModel zero;
  zero.sigma_field = 0.0;
  zero.sigma_meas = 0.0;
  const auto base = mva::synthesize_scan(surf, zero);

  SUBCASE("identical scan gives exact zeros") {
    const auto r = mva::deviation_analysis(surf, base);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(r.deviation[i] == 0.0);
  }
  SUBCASE("uniform normal offset comes back verbatim") {
    const double delta = 7e-4;
    const auto dense = geometry::subdivide(geometry::subdivide(surf));
    mva::ScanSurface off;
    off.points.resize(dense.size());
    for (std::size_t k = 0; k < dense.size(); ++k)
      off.points[k] = dense.points[k] + delta * dense.normals[k];
    const auto r = mva::deviation_analysis(surf, off);
    for (std::size_t i = 0; i < r.size(); ++i)
      CHECK(r.deviation[i] == doctest::Approx(delta).epsilon(1e-10));
    // the sharp closure can push an end node onto the projection fallback,
    // interior nodes must all see a clean ray hit
    for (std::size_t i = 1; i + 1 < r.size(); ++i) CHECK_FALSE(r.projected[i]);
  }
  SUBCASE("inward offset flips the sign") {
    const double delta = -4e-4;
    const auto dense = geometry::subdivide(geometry::subdivide(surf));
    mva::ScanSurface off;
    off.points.resize(dense.size());
    for (std::size_t k = 0; k < dense.size(); ++k)
      off.points[k] = dense.points[k] + delta * dense.normals[k];
    const auto r = mva::deviation_analysis(surf, off);
    for (std::size_t i = 0; i < r.size(); ++i)
      CHECK(r.deviation[i] == doctest::Approx(delta).epsilon(1e-10));
  }
}

TEST_CASE("ray deviations agree with a dense nearest-point search") {
  const auto surf = bump_surface();
  mva::PerturbationModel m;
  m.seed = 7;
  const auto scan = mva::synthesize_scan(surf, m);
  const auto r = mva::deviation_analysis(surf, scan);
  for (std::size_t i = 0; i < surf.size(); ++i) {
    double dmin = 1e300;
    for (std::size_t k = 0; k + 1 < scan.points.size(); ++k) {
      const Vec2 a = scan.points[k];
      const Vec2 d = scan.points[k + 1] - a;
      double u = dot(surf.points[i] - a, d) / dot(d, d);
      u = std::clamp(u, 0.0, 1.0);
      dmin = std::min(dmin, norm(a + u * d - surf.points[i]));
    }
    CHECK(std::abs(std::abs(r.deviation[i]) - dmin) < scan.sigma_meas);
  }
}

TEST_CASE("scan coarser than the node spacing is rejected") {
  const auto surf = bump_surface();
  mva::ScanSurface sparse;
  sparse.points = surf.points;  // same spacing as the nodes, not half
  CHECK_THROWS_AS(mva::deviation_analysis(surf, sparse), ConfigError);
}

TEST_CASE("double crossings within the noise floor are flagged ambiguous") {
  const auto surf = straight_surface(9);
  // hairpin scan, the thin-trailing-edge situation: one branch passes above
  // the surface, the return branch below, so every normal ray crosses twice
  // at |t| ~ amp, well within 2*sigma_meas of each other
  const double amp = 1e-5;
  mva::ScanSurface pin;
  pin.sigma_meas = 2e-5;
  const std::size_t half = 65;
  for (std::size_t k = 0; k < half; ++k) {
    const double x = -0.05 + 1.1 * double(k) / double(half - 1);
    pin.points.push_back({x, amp});
  }
  for (std::size_t k = 0; k < half; ++k) {
    const double x = 1.05 - 1.1 * double(k) / double(half - 1);
    pin.points.push_back({x, -amp});
  }
  const auto r = mva::deviation_analysis(surf, pin);
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    CHECK(r.ambiguous[i]);
    CHECK(std::abs(r.deviation[i]) <= amp * (1.0 + 1e-9));
  }
}

TEST_CASE("mapping interpolates deviations onto surface nodes") {
  SUBCASE("identical node sets pass through exactly") {
    const auto surf = straight_surface(11);
    std::vector<double> dev(surf.size());
    for (std::size_t k = 0; k < dev.size(); ++k) dev[k] = 1e-4 * std::sin(3.0 * double(k));
    const auto r = mva::map_deviations(dev, surf.arc_fraction, surf);
    for (std::size_t k = 0; k < dev.size(); ++k) {
      CHECK(r.normal_deviation[k] == dev[k]);
      CHECK(r.field.dy[k] == dev[k]);  // +y normals
      CHECK(r.field.dx[k] == 0.0);
      CHECK_FALSE(r.extrapolated[k]);
    }
  }
  SUBCASE("constant deviation maps to a constant normal field") {
    const auto cfd = bump_surface(33);
    const std::vector<double> arc{0.0, 0.4, 1.0};
    const std::vector<double> dev{5e-4, 5e-4, 5e-4};
    const auto r = mva::map_deviations(dev, arc, cfd);
    for (std::size_t k = 0; k < cfd.size(); ++k) {
      CHECK(r.normal_deviation[k] == doctest::Approx(5e-4).epsilon(1e-14));
      CHECK(r.field.dx[k] ==
            doctest::Approx(5e-4 * cfd.normals[k].x).epsilon(1e-12));
      CHECK(r.field.dy[k] ==
            doctest::Approx(5e-4 * cfd.normals[k].y).epsilon(1e-12));
    }
  }
  SUBCASE("linear deviations are reproduced exactly at midpoints") {
    const auto fem = straight_surface(6);
    std::vector<double> dev(fem.size());
    for (std::size_t k = 0; k < dev.size(); ++k)
      dev[k] = 2e-4 + 3e-4 * fem.arc_fraction[k];
    auto cfd = straight_surface(6);
    for (std::size_t k = 0; k + 1 < cfd.size(); ++k)
      cfd.arc_fraction[k] =
          0.5 * (fem.arc_fraction[k] + fem.arc_fraction[k + 1]);
    const auto r = mva::map_deviations(dev, fem.arc_fraction, cfd);
    for (std::size_t k = 0; k + 1 < cfd.size(); ++k)
      CHECK(r.normal_deviation[k] ==
            doctest::Approx(2e-4 + 3e-4 * cfd.arc_fraction[k]).epsilon(1e-14));
  }
  SUBCASE("out-of-range nodes clamp to end values and get flagged") {
    auto cfd = straight_surface(5);
    const std::vector<double> arc{0.2, 0.5, 0.8};
    const std::vector<double> dev{1e-4, 2e-4, 3e-4};
    const auto r = mva::map_deviations(dev, arc, cfd);
    CHECK(r.normal_deviation.front() == 1e-4);
    CHECK(r.extrapolated.front());
    CHECK(r.normal_deviation.back() == 3e-4);
    CHECK(r.extrapolated.back());
    CHECK_FALSE(r.extrapolated[2]);
  }
  SUBCASE("non-increasing measurement arcs are rejected") {
    const auto cfd = straight_surface(5);
    CHECK_THROWS_AS(
        mva::map_deviations({1e-4, 2e-4}, {0.5, 0.5}, cfd), ConfigError);
    CHECK_THROWS_AS(mva::map_deviations({1e-4, 2e-4}, {0.5}, cfd),
                    DimensionMismatchError);
  }
}

TEST_CASE("scan to morph round trip closes within noise and interpolation") {
  geometry::BladeParams bp;
  const auto profile = geometry::generate_profile(bp, 33);
  const auto g = grid::generate_grid(profile, 61, 21);
  const auto surf = g.surface_polyline();
  mva::PerturbationModel m;
  m.seed = 7;
  const auto scan = mva::synthesize_scan(surf, m);
  const auto dev = mva::deviation_analysis(surf, scan);
  const auto mapped = mva::map_deviations(dev.deviation, surf.arc_fraction, surf);
  const auto morphed = morph::morph_mesh(g, mapped.field);
  const auto remeasured = mva::deviation_analysis(morphed.surface_polyline(), scan);
  // residual bound: measurement noise plus an h^2 interpolation term from
  // the node spacing against the field's correlation length
  const double h = 1.05 / double(surf.size() - 1);
  const double bound =
      m.sigma_meas +
      3.0 * m.sigma_field * std::pow(h / m.correlation_length, 2);
  for (std::size_t i = 0; i < remeasured.size(); ++i)
    CHECK(std::abs(remeasured.deviation[i]) < bound);
}

TEST_CASE("population statistics match the perturbation model") {
  // 102 seeded samples: mean absolute deviation against the half-normal
  // expectation sigma*sqrt(2/pi).
  const auto surf = bump_surface();
  mva::PerturbationModel m;
  double acc = 0.0;
  std::size_t count = 0;
  for (int s = 0; s < 102; ++s) {
    m.seed = std::uint64_t(s);
    const auto scan = mva::synthesize_scan(surf, m);
    const auto dev = mva::deviation_analysis(surf, scan);
    for (double v : dev.deviation) {
      acc += std::abs(v);
      ++count;
    }
  }
  const double expect = m.sigma_field * std::sqrt(2.0 / std::acos(-1.0));
  CHECK(acc / double(count) == doctest::Approx(expect).epsilon(0.20));
}

TEST_CASE("deviations csv round trips") {
  const auto surf = bump_surface(17);
  mva::DeviationResult r;
  r.deviation.resize(surf.size());
  r.projected.assign(surf.size(), false);
  r.ambiguous.assign(surf.size(), false);
  for (std::size_t k = 0; k < surf.size(); ++k)
    r.deviation[k] = 1e-4 * std::cos(double(k)) / 3.0;
  r.projected[0] = true;
  r.ambiguous[5] = true;
  const auto path = temp_file("mvi_dev.csv");
  mva::write_deviations_csv(path.string(), surf, r);
  const auto [arc, back] = mva::read_deviations_csv(path.string());
  REQUIRE(back.size() == r.size());
  for (std::size_t k = 0; k < r.size(); ++k) {
    CHECK(arc[k] == surf.arc_fraction[k]);
    CHECK(back.deviation[k] == r.deviation[k]);
    CHECK(back.projected[k] == r.projected[k]);
    CHECK(back.ambiguous[k] == r.ambiguous[k]);
  }
  std::filesystem::remove(path);

  std::ofstream f(path);
  f << "node_id,arc_fraction,deviation,projected,ambiguous\n0,0.0,bad,0,0\n";
  f.close();
  CHECK_THROWS_AS(mva::read_deviations_csv(path.string()), ParseError);
  std::filesystem::remove(path);
}
