#include "mvi/euler.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

#include "mvi/errors.hpp"

namespace mvi::euler {

double FlowConfig::inlet_angle_rad() const {
  return inlet_angle_deg * std::numbers::pi / 180.0;
}

void FlowConfig::validate() const {
  if (!(gamma > 1.0 && gamma < 2.0))
    throw ConfigError("gamma must lie in (1, 2), got " + std::to_string(gamma));
  if (!(p01 > 0.0) || !(t01 > 0.0))
    throw ConfigError("inlet total conditions must be positive");
  if (!(p_exit > 0.0 && p_exit < p01))
    throw ConfigError("p_exit must lie in (0, p01), got " +
                      std::to_string(p_exit));
  if (std::abs(inlet_angle_deg) >= 60.0)
    throw ConfigError("inlet angle magnitude must stay below 60 degrees");
  if (!(cfl > 0.0 && cfl <= 4.0))
    throw ConfigError("cfl must lie in (0, 4], got " + std::to_string(cfl));
  if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
  if (!(drop_orders > 0.0) && !(abs_target > 0.0))
    throw ConfigError("either drop_orders or abs_target must be positive");
  if (!(limiter_eps2 > 0.0)) throw ConfigError("limiter_eps2 must be positive");
  if (!(entropy_fix >= 0.0 && entropy_fix < 1.0))
    throw ConfigError("entropy_fix must lie in [0, 1)");
  if (cfl_ramp_iters < 0 || p_exit_ramp_iters < 0)
    throw ConfigError("ramp iteration counts must be non-negative");
}

FaceGeometry<double> face_geometry(const grid::CellMetrics& m) {
  FaceGeometry<double> fg;
  fg.inx = m.iface_nx;
  fg.iny = m.iface_ny;
  fg.jnx = m.jface_nx;
  fg.jny = m.jface_ny;
  return fg;
}

State4<double> initial_state(const FlowConfig& cfg, std::size_t ncells,
                             double p_static) {
  const double gamma = cfg.gamma;
  if (!(p_static > 0.0)) p_static = cfg.p_exit;
  // Isentropic expansion from the total conditions to the given pressure.
  const double pr = p_static / cfg.p01;
  const double t = cfg.t01 * std::pow(pr, (gamma - 1.0) / gamma);
  const double c2 = gamma * t;
  const double q2 = 2.0 / (gamma - 1.0) * (gamma * cfg.t01 - c2);
  const double q = std::sqrt(std::max(q2, 0.0));
  const double rho = p_static / t;
  const double a = cfg.inlet_angle_rad();

  State4<double> U;
  U.resize(ncells);
  for (std::size_t c = 0; c < ncells; ++c) {
    U.rho[c] = rho;
    U.mx[c] = rho * q * std::cos(a);
    U.my[c] = rho * q * std::sin(a);
    U.e[c] = p_static / (gamma - 1.0) + 0.5 * rho * q * q;
  }
  return U;
}

std::vector<double> local_time_steps(const FlowConfig& cfg, std::size_t ni,
                                     std::size_t nj,
                                     const FaceGeometry<double>& fg,
                                     const grid::CellMetrics& m,
                                     const State4<double>& U, double cfl) {
  const double gamma = cfg.gamma;
  const std::size_t nci = ni - 1, ncj = nj - 1;
  std::vector<double> dt(nci * ncj, 0.0);

  auto spectral = [&](std::size_t c, double nx, double ny) {
    const double ir = 1.0 / U.rho[c];
    const double u = U.mx[c] * ir, v = U.my[c] * ir;
    const double p = (gamma - 1.0) * (U.e[c] - 0.5 * (U.mx[c] * u + U.my[c] * v));
    const double area = std::hypot(nx, ny);
    const double c2 = gamma * p / U.rho[c];
    return std::abs(u * nx + v * ny) + std::sqrt(std::max(c2, 0.0)) * area;
  };

  for (std::size_t j = 0; j < ncj; ++j)
    for (std::size_t i = 0; i < nci; ++i) {
      const std::size_t c = j * nci + i;
      double lam = spectral(c, fg.inx[j * ni + i], fg.iny[j * ni + i]) +
                   spectral(c, fg.inx[j * ni + i + 1], fg.iny[j * ni + i + 1]) +
                   spectral(c, fg.jnx[j * nci + i], fg.jny[j * nci + i]) +
                   spectral(c, fg.jnx[(j + 1) * nci + i], fg.jny[(j + 1) * nci + i]);
      dt[c] = cfl * m.volume[c] / lam;
    }
  return dt;
}

namespace {

void check_physical(const FlowConfig& cfg, const State4<double>& U) {
  const double gamma = cfg.gamma;
  for (std::size_t c = 0; c < U.size(); ++c) {
    if (!(U.rho[c] > 0.0))
      throw NonPhysicalStateError(c, "density " + std::to_string(U.rho[c]));
    const double p =
        (gamma - 1.0) *
        (U.e[c] - 0.5 * (U.mx[c] * U.mx[c] + U.my[c] * U.my[c]) / U.rho[c]);
    if (!(p > 0.0))
      throw NonPhysicalStateError(c, "pressure " + std::to_string(p));
    if (!std::isfinite(U.rho[c]) || !std::isfinite(U.e[c]))
      throw NonPhysicalStateError(c, "non-finite state");
  }
}

double residual_l1(const State4<double>& R) {
  double s = 0.0;
  for (double r : R.rho) s += std::abs(r);
  return s;
}

}  // namespace

FlowSolution solve_flow(const FlowConfig& cfg, const grid::StructuredGrid& g,
                        const grid::CellMetrics& m, const State4<double>* warm_start) {
  cfg.validate();
  const std::size_t ni = g.ni, nj = g.nj;
  const std::size_t ncells = (ni - 1) * (nj - 1);
  const FaceGeometry<double> fg = face_geometry(m);

  BcValues<double> bc;
  bc.p01 = cfg.p01;
  bc.t01 = cfg.t01;
  bc.p_exit = cfg.p_exit;
  bc.angle_rad = cfg.inlet_angle_rad();

  // Cold starts ease in: the back pressure begins at the value that puts
  // the inlet near Mach 0.5 (mild enough that a sudden start cannot choke
  // the passage, fast enough that the total-condition inlet stays well
  // conditioned; its gain is singular as M -> 0) and is lowered to its
  // target over p_exit_ramp_iters while the CFL ramps up. An impulsive
  // start at a transonic design point otherwise slams a choke wave
  // upstream and can lock onto a spurious low-flow equilibrium. Warm
  // restarts are assumed near a solution already and skip both ramps.
  const bool cold = (warm_start == nullptr);
  const double gm = cfg.gamma;
  const double p_half =
      cfg.p01 * std::pow(1.0 + (gm - 1.0) / 8.0, -gm / (gm - 1.0));
  const double p_start = std::max(cfg.p_exit, p_half);
  const int p_ramp = cold && p_start > cfg.p_exit + 1e-12 * cfg.p01
                         ? cfg.p_exit_ramp_iters
                         : 0;
  const int cfl_ramp = cold ? cfg.cfl_ramp_iters : 0;
  const int settle_start = std::max(p_ramp, cfl_ramp);
  if (cfg.max_iters <= settle_start)
    throw ConfigError("max_iters " + std::to_string(cfg.max_iters) +
                      " leaves no iterations after the " +
                      std::to_string(settle_start) + "-step startup ramp");
  auto p_exit_at = [&](int it) {
    if (p_ramp <= 0 || it >= p_ramp) return cfg.p_exit;
    const double s = (it + 0.5) / p_ramp;
    return p_start + s * (cfg.p_exit - p_start);
  };

  FlowSolution sol;
  sol.state = cold ? initial_state(cfg, ncells, p_exit_at(0)) : *warm_start;
  if (sol.state.size() != ncells)
    throw DimensionMismatchError("warm start has " +
                                 std::to_string(sol.state.size()) +
                                 " cells, grid has " + std::to_string(ncells));
  check_physical(cfg, sol.state);

  State4<double> U0, R;
  double target = cfg.abs_target;
  bool measured = false;
  sol.residual_history.reserve(256);

  for (int it = 0; it < cfg.max_iters; ++it) {
    const double frac =
        cfl_ramp > 0 ? std::min(1.0, (it + 1.0) / cfl_ramp) : 1.0;
    const double cfl = cold ? cfg.cfl * (0.05 + 0.95 * frac) : cfg.cfl;
    bc.p_exit = p_exit_at(it);

    const std::vector<double> dt =
        local_time_steps(cfg, ni, nj, fg, m, sol.state, cfl);
    U0 = sol.state;

    double l1 = 0.0;
    for (int stage = 0; stage < 4; ++stage) {
      eval_residual(cfg, ni, nj, fg, bc, sol.state, R);
      if (stage == 0) l1 = residual_l1(R);
      const double alpha = kRkAlpha[stage];
      for (std::size_t c = 0; c < ncells; ++c) {
        const double s = alpha * dt[c] / m.volume[c];
        sol.state.rho[c] = U0.rho[c] - s * R.rho[c];
        sol.state.mx[c] = U0.mx[c] - s * R.mx[c];
        sol.state.my[c] = U0.my[c] - s * R.my[c];
        sol.state.e[c] = U0.e[c] - s * R.e[c];
      }
    }
    check_physical(cfg, sol.state);

    sol.residual_history.push_back(l1);
    sol.l1_final = l1;
    sol.iterations_used = it + 1;
    // Convergence is judged against the first residual after the ramps are
    // done; during the ramp the equations themselves are still moving.
    if (it < settle_start) continue;
    if (!measured) {
      measured = true;
      sol.l1_first = l1;
      if (!(cfg.abs_target > 0.0))
        target = l1 * std::pow(10.0, -cfg.drop_orders);
      // Roundoff floor: an already-converged start (warm restart, uniform
      // flow in a flat channel) must not chase an unreachable drop.
      target = std::max(target, 1e-13 * double(ncells));
    }
    if (l1 <= target) {
      sol.converged = true;
      break;
    }
  }

  if (!sol.converged)
    throw PrimalNotConvergedError(
        "residual " + std::to_string(sol.l1_final) + " above target " +
        std::to_string(target) + " after " +
        std::to_string(sol.iterations_used) + " iterations");

  sol.stations = station_averages(cfg, g, m, sol.state);
  return sol;
}

StationAverages station_averages(const FlowConfig& cfg, const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m,
                                 const State4<double>& U) {
  BcValues<double> bc;
  bc.p01 = cfg.p01;
  bc.t01 = cfg.t01;
  bc.p_exit = cfg.p_exit;
  bc.angle_rad = cfg.inlet_angle_rad();
  const FaceGeometry<double> fg = face_geometry(m);
  const StationSums<double> s = station_sums(cfg, g.ni, g.nj, fg, bc, U);
  StationAverages a;
  a.p0_in = s.p0_in;
  a.p0_out = s.p0_out;
  a.p_static_out = s.p_out;
  a.h0_in = s.h0_in;
  a.h0_out = s.h0_out;
  a.mdot_in = s.mdot_in;
  a.mdot_out = s.mdot_out;
  return a;
}

double isentropic_efficiency(double h01, double h02, double h02_is) {
  const double den = h02_is - h01;
  if (std::abs(den) < 1e-14 * std::max(std::abs(h01), 1.0))
    throw DegenerateDenominatorError("isentropic enthalpy change vanishes");
  return (h02 - h01) / den;
}

namespace {
constexpr char kSolMagic[8] = {'M', 'V', 'I', 'S', 'O', 'L', 'B', '1'};
}

void write_solution(const std::filesystem::path& path, std::size_t ni,
                    std::size_t nj, const State4<double>& U,
                    const std::string& mesh_hash) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(kSolMagic, sizeof(kSolMagic));
  const std::uint64_t dims[2] = {ni, nj};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const std::uint64_t hl = mesh_hash.size();
  f.write(reinterpret_cast<const char*>(&hl), sizeof(hl));
  f.write(mesh_hash.data(), static_cast<std::streamsize>(hl));
  auto blk = [&](const std::vector<double>& v) {
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  blk(U.rho);
  blk(U.mx);
  blk(U.my);
  blk(U.e);
  if (!f) throw Error("failed writing " + path.string());
}

State4<double> read_solution(const std::filesystem::path& path, std::size_t& ni,
                             std::size_t& nj, std::string& mesh_hash,
                             const std::string& expect_mesh_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kSolMagic, sizeof(magic)) != 0)
    throw ParseError(path.string(), 0, "not a solution file");
  std::uint64_t dims[2];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  ni = dims[0];
  nj = dims[1];
  if (ni < 2 || nj < 2 || ni > 100000 || nj > 100000)
    throw ParseError(path.string(), 0, "implausible dimensions");
  std::uint64_t hl = 0;
  f.read(reinterpret_cast<char*>(&hl), sizeof(hl));
  if (hl > 1024) throw ParseError(path.string(), 0, "oversized hash field");
  mesh_hash.resize(hl);
  f.read(mesh_hash.data(), static_cast<std::streamsize>(hl));
  if (!expect_mesh_hash.empty() && mesh_hash != expect_mesh_hash)
    throw Error("solution " + path.string() + " was computed on mesh " +
                mesh_hash + ", expected " + expect_mesh_hash);
  const std::size_t ncells = (ni - 1) * (nj - 1);
  State4<double> U;
  U.resize(ncells);
  auto blk = [&](std::vector<double>& v) {
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  blk(U.rho);
  blk(U.mx);
  blk(U.my);
  blk(U.e);
  if (!f) throw ParseError(path.string(), 0, "truncated state block");
  return U;
}

void write_convergence_csv(const std::filesystem::path& path,
                           const std::vector<double>& history) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << "iteration,l1_density_residual\n";
  char buf[64];
  for (std::size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i + 1, history[i]);
    f << buf;
  }
}

}  // namespace mvi::euler
