#include "mvi/mva.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "mvi/errors.hpp"

namespace mvi::mva {

void PerturbationModel::validate() const {
  if (!(sigma_field >= 0.0) || !(sigma_meas >= 0.0))
    throw ConfigError("perturbation scales must be non-negative");
  if (!(correlation_length > 0.0))
    throw ConfigError("correlation length must be positive");
  if (sigma_field > 0.0 && sigma_meas > 0.1 * sigma_field)
    throw ConfigError(
        "measurement noise must sit at least one order below the field "
        "amplitude");
}

namespace {

// In-place lower Cholesky; false when a pivot is not positive.
bool cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) return false;
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
  }
  return true;
}

std::vector<double> arc_lengths(const std::vector<Vec2>& pts) {
  std::vector<double> s(pts.size(), 0.0);
  for (std::size_t k = 1; k < pts.size(); ++k)
    s[k] = s[k - 1] + norm(pts[k] - pts[k - 1]);
  return s;
}

}  // namespace

ScanSurface synthesize_scan(const geometry::SurfacePolyline& baseline,
                            const PerturbationModel& model) {
  model.validate();
  baseline.validate();
  // Two midpoint refinements put scan spacing at a quarter of the node
  // spacing, inside the half-spacing density contract.
  const auto dense = geometry::subdivide(geometry::subdivide(baseline));
  const std::size_t n = dense.size();

  ScanSurface scan;
  scan.points = dense.points;
  scan.sigma_meas = model.sigma_meas;
  scan.seed = model.seed;

  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<double> field(n, 0.0);
  if (model.sigma_field > 0.0) {
    const auto s = arc_lengths(dense.points);
    const double var = model.sigma_field * model.sigma_field;
    const double il2 =
        1.0 / (2.0 * model.correlation_length * model.correlation_length);
    std::vector<double> cov(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double ds = s[i] - s[j];
        cov[i * n + j] = var * std::exp(-ds * ds * il2);
      }
    // The squared-exponential Gram matrix is near-singular at this density;
    // a tiny nugget restores positive pivots without visible field change.
    auto chol = cov;
    if (!cholesky(chol, n)) {
      chol = cov;
      for (std::size_t i = 0; i < n; ++i) chol[i * n + i] += 1e-12;
      if (!cholesky(chol, n))
        throw CovarianceNotPDError(
            "scan covariance is not positive definite even with nugget");
    }
    std::vector<double> z(n);
    for (auto& v : z) v = gauss(rng);
    for (std::size_t i = n; i-- > 0;) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= i; ++k) acc += chol[i * n + k] * z[k];
      field[i] = acc;
    }
  }
  if (model.sigma_meas > 0.0)
    for (auto& v : field) v += model.sigma_meas * gauss(rng);

  for (std::size_t k = 0; k < n; ++k)
    scan.points[k] = scan.points[k] + field[k] * dense.normals[k];
  return scan;
}

namespace {

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);  // little-endian host assumed throughout
  out.append(b, 4);
}

void facet_vertices(const std::vector<Vec2>& p, std::size_t seg, int tri,
                    Vec2 v[3], double z[3]) {
  // Segment seg spans two triangles of the unit-depth ribbon; the z=0 edge
  // traversal order matches the polyline order so a reader can walk it back.
  if (tri == 0) {
    v[0] = p[seg];
    v[1] = p[seg + 1];
    v[2] = p[seg];
    z[0] = 0.0;
    z[1] = 0.0;
    z[2] = 1.0;
  } else {
    v[0] = p[seg + 1];
    v[1] = p[seg + 1];
    v[2] = p[seg];
    z[0] = 0.0;
    z[1] = 1.0;
    z[2] = 1.0;
  }
}

Vec2 facet_normal(const Vec2& a, const Vec2& b) {
  // Ribbon facets are vertical, so the 3D normal is the 2D segment normal.
  const Vec2 d = b - a;
  const double len = norm(d);
  if (len == 0.0) return {0.0, 0.0};
  return {d.y / len, -d.x / len};
}

}  // namespace

void write_stl(const std::string& path, const ScanSurface& scan,
               StlFormat format) {
  if (scan.points.size() < 2)
    throw ConfigError("need at least two scan points for an STL ribbon");
  const auto& p = scan.points;
  const std::size_t nfacets = 2 * (p.size() - 1);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path + " for writing");

  if (format == StlFormat::Ascii) {
    std::ostringstream os;
    os.precision(9);
    os << std::scientific;
    os << "solid scan-ribbon\n";
    for (std::size_t seg = 0; seg + 1 < p.size(); ++seg)
      for (int tri = 0; tri < 2; ++tri) {
        Vec2 v[3];
        double z[3];
        facet_vertices(p, seg, tri, v, z);
        const Vec2 nrm = facet_normal(p[seg], p[seg + 1]);
        os << "  facet normal " << nrm.x << " " << nrm.y << " 0\n"
           << "    outer loop\n";
        for (int k = 0; k < 3; ++k)
          os << "      vertex " << v[k].x << " " << v[k].y << " " << z[k] << "\n";
        os << "    endloop\n  endfacet\n";
      }
    os << "endsolid scan-ribbon\n";
    f << os.str();
  } else {
    std::string out;
    out.reserve(84 + 50 * nfacets);
    std::string header = "mvi unit-depth scan ribbon";
    header.resize(80, ' ');
    out += header;
    const std::uint32_t count = std::uint32_t(nfacets);
    char cb[4];
    std::memcpy(cb, &count, 4);
    out.append(cb, 4);
    for (std::size_t seg = 0; seg + 1 < p.size(); ++seg)
      for (int tri = 0; tri < 2; ++tri) {
        Vec2 v[3];
        double z[3];
        facet_vertices(p, seg, tri, v, z);
        const Vec2 nrm = facet_normal(p[seg], p[seg + 1]);
        put_f32(out, float(nrm.x));
        put_f32(out, float(nrm.y));
        put_f32(out, 0.0f);
        for (int k = 0; k < 3; ++k) {
          put_f32(out, float(v[k].x));
          put_f32(out, float(v[k].y));
          put_f32(out, float(z[k]));
        }
        out.append(2, '\0');  // attribute byte count
      }
    f << out;
  }
  if (!f) throw ConfigError("short write to " + path);
}

namespace {

struct F32Vertex {
  float x, y, z;
  bool operator==(const F32Vertex& o) const {
    return x == o.x && y == o.y && z == o.z;
  }
};

ScanSurface collapse_ribbon(const std::vector<F32Vertex>& verts,
                            const std::string& path) {
  // Walk the z=0 vertices in facet order; consecutive duplicates collapse to
  // the original polyline traversal.
  ScanSurface scan;
  std::vector<F32Vertex> seq;
  for (const auto& v : verts)
    if (std::abs(v.z) < 0.5f && (seq.empty() || !(seq.back() == v)))
      seq.push_back(v);
  if (seq.size() < 2)
    throw ParseError(path, 0, "ribbon collapse produced fewer than 2 points");
  scan.points.reserve(seq.size());
  for (const auto& v : seq) scan.points.push_back({double(v.x), double(v.y)});
  return scan;
}

ScanSurface read_stl_binary(const std::string& bytes, const std::string& path) {
  std::uint32_t count = 0;
  std::memcpy(&count, bytes.data() + 80, 4);
  const std::size_t expected = 84 + 50 * std::size_t(count);
  if (bytes.size() < expected) {
    const std::size_t have = (bytes.size() - 84) / 50;
    throw ParseError(path, have + 1,
                     "binary STL truncated at facet " + std::to_string(have + 1) +
                         " of " + std::to_string(count) + " (byte offset " +
                         std::to_string(84 + 50 * have) + ")");
  }
  std::vector<F32Vertex> verts;
  verts.reserve(3 * count);
  for (std::size_t fi = 0; fi < count; ++fi) {
    const char* rec = bytes.data() + 84 + 50 * fi;
    for (int k = 0; k < 3; ++k) {
      F32Vertex v;
      std::memcpy(&v.x, rec + 12 + 12 * k + 0, 4);
      std::memcpy(&v.y, rec + 12 + 12 * k + 4, 4);
      std::memcpy(&v.z, rec + 12 + 12 * k + 8, 4);
      if (!std::isfinite(v.x) || !std::isfinite(v.y) || !std::isfinite(v.z))
        throw ParseError(path, fi + 1,
                         "non-finite vertex in facet " + std::to_string(fi + 1) +
                             " (byte offset " + std::to_string(84 + 50 * fi) +
                             ")");
      verts.push_back(v);
    }
  }
  return collapse_ribbon(verts, path);
}

ScanSurface read_stl_ascii(const std::string& bytes, const std::string& path) {
  std::istringstream is(bytes);
  std::size_t lineno = 0;
  std::vector<std::string> tok;
  std::vector<std::size_t> tok_line;
  std::string line;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string t;
    while (ls >> t) {
      tok.push_back(t);
      tok_line.push_back(lineno);
    }
  }
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> ParseError {
    const std::size_t at = pos < tok_line.size() ? tok_line[pos] : lineno;
    return ParseError(path, at, what);
  };
  auto expect = [&](const char* word) {
    if (pos >= tok.size() || tok[pos] != word)
      throw fail("expected '" + std::string(word) + "', got '" +
                 (pos < tok.size() ? tok[pos] : "<eof>") + "'");
    ++pos;
  };
  auto number = [&]() -> double {
    if (pos >= tok.size()) throw fail("expected a number, got end of file");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok[pos], &used);
    } catch (const std::exception&) {
      throw fail("expected a number, got '" + tok[pos] + "'");
    }
    if (used != tok[pos].size())
      throw fail("expected a number, got '" + tok[pos] + "'");
    ++pos;
    return v;
  };

  expect("solid");
  // optional free-form name: skip tokens until the first facet or endsolid
  while (pos < tok.size() && tok[pos] != "facet" && tok[pos] != "endsolid") ++pos;
  std::vector<F32Vertex> verts;
  while (pos < tok.size() && tok[pos] == "facet") {
    ++pos;
    expect("normal");
    number();
    number();
    number();
    expect("outer");
    expect("loop");
    for (int k = 0; k < 3; ++k) {
      expect("vertex");
      const double x = number(), y = number(), z = number();
      verts.push_back({float(x), float(y), float(z)});
    }
    expect("endloop");
    expect("endfacet");
  }
  expect("endsolid");
  if (verts.empty()) throw ParseError(path, lineno, "ASCII STL has no facets");
  return collapse_ribbon(verts, path);
}

}  // namespace

ScanSurface read_stl(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError(path, 0, "cannot open file");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string bytes = buf.str();
  if (bytes.size() < 6) throw ParseError(path, 0, "file too short for any STL");

  const bool ascii_magic = bytes.rfind("solid", 0) == 0;
  if (bytes.size() >= 84) {
    std::uint32_t count = 0;
    std::memcpy(&count, bytes.data() + 80, 4);
    const bool size_consistent = bytes.size() == 84 + 50 * std::size_t(count);
    // A consistent binary layout wins even if the header says "solid";
    // otherwise the magic decides and binary mismatches surface as errors.
    if (size_consistent) return read_stl_binary(bytes, path);
    if (!ascii_magic) return read_stl_binary(bytes, path);
  } else if (!ascii_magic) {
    throw ParseError(path, 0, "file too short for binary STL and not ASCII");
  }
  return read_stl_ascii(bytes, path);
}

DeviationResult deviation_analysis(const geometry::SurfacePolyline& fem_nodes,
                                   const ScanSurface& scan) {
  fem_nodes.validate();
  if (scan.points.size() < 2)
    throw ConfigError("scan needs at least two points");
  const std::size_t nf = fem_nodes.size();
  const std::size_t ns = scan.points.size();
  const auto fem_arc = arc_lengths(fem_nodes.points);
  const auto scan_arc = arc_lengths(scan.points);
  const double fem_spacing = fem_arc.back() / double(nf - 1);
  const double scan_spacing = scan_arc.back() / double(ns - 1);
  if (!(scan_spacing <= 0.5 * fem_spacing * (1.0 + 1e-9)))
    throw ConfigError("scan spacing must be at most half the node spacing");

  const double radius = 0.1 * fem_nodes.chord();
  DeviationResult r;
  r.deviation.resize(nf);
  r.projected.assign(nf, false);
  r.ambiguous.assign(nf, false);

  for (std::size_t i = 0; i < nf; ++i) {
    const Vec2 p = fem_nodes.points[i];
    const Vec2 n = fem_nodes.normals[i];
    double best = std::numeric_limits<double>::infinity();
    double second = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k + 1 < ns; ++k) {
      const Vec2 a = scan.points[k];
      const Vec2 d = scan.points[k + 1] - a;
      const double det = cross(d, n);
      if (std::abs(det) < 1e-14) continue;
      const Vec2 rv = a - p;
      const double u = cross(n, rv) / det;
      const bool last = (k + 2 == ns);
      if (u < 0.0 || (last ? u > 1.0 : u >= 1.0)) continue;
      const double t = cross(d, rv) / det;
      if (std::abs(t) > radius) continue;
      if (std::abs(t) < std::abs(best)) {
        second = best;
        best = t;
      } else if (std::abs(t) < std::abs(second)) {
        second = t;
      }
    }
    if (std::isfinite(best)) {
      r.deviation[i] = best;
      if (std::isfinite(second) &&
          std::abs(std::abs(second) - std::abs(best)) < 2.0 * scan.sigma_meas)
        r.ambiguous[i] = true;
      continue;
    }
    // No ray hit inside the search radius: fall back to the nearest point on
    // the scan, signed by which side of the node normal it lands on.
    double dmin = std::numeric_limits<double>::infinity();
    Vec2 nearest{0.0, 0.0};
    for (std::size_t k = 0; k + 1 < ns; ++k) {
      const Vec2 a = scan.points[k];
      const Vec2 d = scan.points[k + 1] - a;
      const double len2 = dot(d, d);
      double u = len2 > 0.0 ? dot(p - a, d) / len2 : 0.0;
      u = std::clamp(u, 0.0, 1.0);
      const Vec2 q = a + u * d;
      const double dist = norm(q - p);
      if (dist < dmin) {
        dmin = dist;
        nearest = q;
      }
    }
    r.deviation[i] = dot(nearest - p, n) >= 0.0 ? dmin : -dmin;
    r.projected[i] = true;
  }
  return r;
}

MappedDeviations map_deviations(const std::vector<double>& deviations,
                                const std::vector<double>& arc_fem,
                                const geometry::SurfacePolyline& cfd_surface) {
  if (deviations.size() != arc_fem.size())
    throw DimensionMismatchError("deviation and arc fraction counts differ");
  if (arc_fem.size() < 2)
    throw ConfigError("need at least two measurement nodes to interpolate");
  for (std::size_t k = 1; k < arc_fem.size(); ++k)
    if (!(arc_fem[k] > arc_fem[k - 1]))
      throw ConfigError("measurement arc fractions must be strictly increasing");
  cfd_surface.validate();

  const std::size_t nc = cfd_surface.size();
  MappedDeviations out;
  out.field.dx.resize(nc);
  out.field.dy.resize(nc);
  out.normal_deviation.resize(nc);
  out.extrapolated.assign(nc, false);
  for (std::size_t i = 0; i < nc; ++i) {
    const double a = cfd_surface.arc_fraction[i];
    double v;
    if (a <= arc_fem.front()) {
      v = deviations.front();
      out.extrapolated[i] = a < arc_fem.front();
    } else if (a >= arc_fem.back()) {
      v = deviations.back();
      out.extrapolated[i] = a > arc_fem.back();
    } else {
      const auto it = std::upper_bound(arc_fem.begin(), arc_fem.end(), a);
      const std::size_t k = std::size_t(it - arc_fem.begin());
      const double w = (a - arc_fem[k - 1]) / (arc_fem[k] - arc_fem[k - 1]);
      v = (1.0 - w) * deviations[k - 1] + w * deviations[k];
    }
    out.normal_deviation[i] = v;
    out.field.dx[i] = v * cfd_surface.normals[i].x;
    out.field.dy[i] = v * cfd_surface.normals[i].y;
  }
  return out;
}

void write_deviations_csv(const std::string& path,
                          const geometry::SurfacePolyline& fem_nodes,
                          const DeviationResult& result) {
  if (fem_nodes.size() != result.size())
    throw DimensionMismatchError("deviation count does not match the surface");
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f << "node_id,arc_fraction,deviation,projected,ambiguous\n";
  f.precision(17);
  for (std::size_t i = 0; i < result.size(); ++i)
    f << i << ',' << fem_nodes.arc_fraction[i] << ',' << result.deviation[i]
      << ',' << int(result.projected[i]) << ',' << int(result.ambiguous[i])
      << '\n';
  if (!f) throw ConfigError("short write to " + path);
}

std::pair<std::vector<double>, DeviationResult> read_deviations_csv(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError(path, 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(f, line) ||
      line != "node_id,arc_fraction,deviation,projected,ambiguous")
    throw ParseError(path, 1, "missing deviations CSV header");
  ++lineno;
  std::vector<double> arc;
  DeviationResult r;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t id = 0;
    double a = 0.0, d = 0.0;
    int proj = 0, amb = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%d,%d", &id, &a, &d, &proj,
                    &amb) != 5)
      throw ParseError(path, lineno, "malformed deviations row");
    if (id != arc.size())
      throw ParseError(path, lineno, "node ids must be consecutive from 0");
    arc.push_back(a);
    r.deviation.push_back(d);
    r.projected.push_back(proj != 0);
    r.ambiguous.push_back(amb != 0);
  }
  if (arc.empty()) throw ParseError(path, lineno, "no deviation rows");
  return {std::move(arc), std::move(r)};
}

}  // namespace mvi::mva
