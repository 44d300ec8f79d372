#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "mvi/errors.hpp"
#include "mvi/euler.hpp"
#include "mvi/grid.hpp"

using namespace mvi;
using namespace mvi::euler;

namespace {

grid::StructuredGrid flat_channel(std::size_t ni, std::size_t nj) {
  geometry::BladeParams p;
  p.stagger_deg = 0.0;
  p.max_thickness = 0.0;
  const auto profile = geometry::generate_profile(p, 33);
  grid::GridOptions o;
  o.wall_beta = 0.0;
  return grid::generate_grid(profile, ni, nj, o);
}

grid::StructuredGrid bump_channel(std::size_t ni, std::size_t nj,
                                  std::size_t n_profile) {
  geometry::BladeParams p;
  const auto profile = geometry::generate_profile(p, n_profile);
  return grid::generate_grid(profile, ni, nj);
}

detail::Prim<double> prim(double rho, double u, double v, double p) {
  return {rho, u, v, p};
}

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("uniform flow is preserved on a distorted interior mesh") {
  grid::StructuredGrid g = flat_channel(41, 17);
  // Wiggle interior nodes; boundaries stay put so the BCs remain consistent.
  // Amplitudes follow the local gaps (the wall profile clusters points near
  // the blade edges), keeping every cell positively oriented.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> jit(-0.2, 0.2);
  const std::vector<double> x0 = g.x, y0 = g.y;
  for (std::size_t j = 1; j + 1 < g.nj; ++j)
    for (std::size_t i = 1; i + 1 < g.ni; ++i) {
      const double gx = std::min(x0[g.node(i, j)] - x0[g.node(i - 1, j)],
                                 x0[g.node(i + 1, j)] - x0[g.node(i, j)]);
      const double gy = std::min(y0[g.node(i, j)] - y0[g.node(i, j - 1)],
                                 y0[g.node(i, j + 1)] - y0[g.node(i, j)]);
      g.x[g.node(i, j)] += jit(rng) * gx;
      g.y[g.node(i, j)] += jit(rng) * gy;
    }
  const grid::CellMetrics m = grid::compute_metrics(g);

  FlowConfig cfg;
  const State4<double> U = initial_state(cfg, g.num_cells());

  FaceGeometry<double> fg = face_geometry(m);
  BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit, cfg.inlet_angle_rad()};
  State4<double> R;
  eval_residual(cfg, g.ni, g.nj, fg, bc, U, R);
  double rmax = 0.0;
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    rmax = std::max(rmax, std::abs(R.rho[c]));
    rmax = std::max(rmax, std::abs(R.mx[c]));
    rmax = std::max(rmax, std::abs(R.my[c]));
    rmax = std::max(rmax, std::abs(R.e[c]));
  }
  CHECK(rmax < 1e-11);
}

TEST_CASE("inflow boundary state reproduces a consistent uniform stream") {
  FlowConfig cfg;
  const State4<double> U = initial_state(cfg, 1);
  const auto w_in = detail::cell_prim(U, 0, cfg.gamma);
  BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit, 0.0};
  const auto wb = detail::inlet_state(w_in, bc, cfg.gamma);
  CHECK(wb.rho == doctest::Approx(w_in.rho).epsilon(1e-12));
  CHECK(wb.u == doctest::Approx(w_in.u).epsilon(1e-12));
  CHECK(wb.v == doctest::Approx(w_in.v).epsilon(1e-12));
  CHECK(wb.p == doctest::Approx(w_in.p).epsilon(1e-12));

  // The imposed totals are recovered from the boundary state.
  const double c2 = cfg.gamma * wb.p / wb.rho;
  const double m2 = (wb.u * wb.u + wb.v * wb.v) / c2;
  const double p0 = wb.p * std::pow(1.0 + 0.2 * m2, 3.5);
  const double t0 = (wb.p / wb.rho) * (1.0 + 0.2 * m2);
  CHECK(p0 == doctest::Approx(cfg.p01).epsilon(1e-12));
  CHECK(t0 == doctest::Approx(cfg.t01).epsilon(1e-12));
}

TEST_CASE("inflow boundary state honors a nonzero flow angle") {
  FlowConfig cfg;
  cfg.inlet_angle_deg = 8.0;
  const State4<double> U = initial_state(cfg, 1);
  const auto w_in = detail::cell_prim(U, 0, cfg.gamma);
  BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit, cfg.inlet_angle_rad()};
  const auto wb = detail::inlet_state(w_in, bc, cfg.gamma);
  CHECK(wb.v / wb.u == doctest::Approx(std::tan(bc.angle_rad)).epsilon(1e-12));
  // The interior static pressure is the one convected-out datum.
  CHECK(wb.p == doctest::Approx(w_in.p).epsilon(1e-12));
  // Total enthalpy of the boundary state equals the reservoir value exactly.
  const double h0 =
      cfg.gamma / (cfg.gamma - 1.0) * (wb.p / wb.rho) +
      0.5 * (wb.u * wb.u + wb.v * wb.v);
  const double h0_res = cfg.gamma / (cfg.gamma - 1.0) * cfg.t01;
  CHECK(h0 == doctest::Approx(h0_res).epsilon(1e-13));
}

TEST_CASE("inflow boundary state responds stably to off-design interiors") {
  FlowConfig cfg;
  BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit, 0.0};

  // A starved interior (low static pressure) draws more inflow.
  auto w_lo = detail::cell_prim(initial_state(cfg, 1), 0, cfg.gamma);
  w_lo.p *= 0.8;
  const auto wb_lo = detail::inlet_state(w_lo, bc, cfg.gamma);
  const auto wb_ref = detail::inlet_state(
      detail::cell_prim(initial_state(cfg, 1), 0, cfg.gamma), bc, cfg.gamma);
  CHECK(wb_lo.rho * wb_lo.u > wb_ref.rho * wb_ref.u);

  // The feed saturates at sonic: no matter how hard the vacuum pulls, the
  // boundary Mach number stays capped at one.
  auto w_vac = w_lo;
  w_vac.p = 0.05;
  const auto wb_vac = detail::inlet_state(w_vac, bc, cfg.gamma);
  const double m_vac =
      wb_vac.u / std::sqrt(cfg.gamma * wb_vac.p / wb_vac.rho);
  CHECK(m_vac <= 1.0 + 1e-6);
  CHECK(m_vac > 0.999);

  // An over-pressured interior shuts the inlet toward the quiescent
  // reservoir rather than producing a complex state.
  auto w_hi = w_lo;
  w_hi.p = 1.2 * cfg.p01;
  const auto wb_hi = detail::inlet_state(w_hi, bc, cfg.gamma);
  CHECK(std::isfinite(wb_hi.u));
  CHECK(std::abs(wb_hi.u) < 1e-3);
  CHECK(wb_hi.p == doctest::Approx(cfg.p01).epsilon(1e-6));
}

TEST_CASE("numerical flux is consistent, conservative and upwind") {
  FlowConfig cfg;
  const double gamma = cfg.gamma;
  std::array<double, 4> f1, f2, fa;

  const auto L = prim(1.1, 0.7, -0.2, 0.9);
  const auto R = prim(0.9, 0.5, 0.1, 1.05);
  const double nx = 0.023, ny = 0.011;

  SUBCASE("equal states recover the analytic flux") {
    detail::roe_flux(L, L, nx, ny, gamma, 0.05, f1);
    detail::analytic_flux(L, nx, ny, gamma, fa);
    for (int k = 0; k < 4; ++k)
      CHECK(f1[k] == doctest::Approx(fa[k]).epsilon(1e-13));
  }

  SUBCASE("flux is antisymmetric under orientation flip") {
    detail::roe_flux(L, R, nx, ny, gamma, 0.05, f1);
    const double mnx = -nx, mny = -ny;
    detail::roe_flux(R, L, mnx, mny, gamma, 0.05, f2);
    for (int k = 0; k < 4; ++k)
      CHECK(f1[k] == doctest::Approx(-f2[k]).epsilon(1e-12));
  }

  SUBCASE("supersonic pairs take the upstream flux exactly") {
    // All wave speeds positive; with no smoothing the scheme must reduce to
    // pure upwinding, which pins down the wave decomposition.
    const auto Ls = prim(1.0, 3.0, 0.4, 1.0);
    const auto Rs = prim(1.08, 2.9, 0.35, 1.1);
    detail::roe_flux(Ls, Rs, 0.02, 0.001, gamma, 0.0, f1);
    detail::analytic_flux(Ls, 0.02, 0.001, gamma, fa);
    for (int k = 0; k < 4; ++k)
      CHECK(f1[k] == doctest::Approx(fa[k]).epsilon(1e-10));
  }
}

TEST_CASE("flat channel converges immediately to the uniform solution") {
  const grid::StructuredGrid g = flat_channel(41, 17);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  cfg.p_exit = 0.845;  // inlet Mach just under 0.5: no back-pressure ramp
  cfg.cfl_ramp_iters = 10;
  const FlowSolution sol = solve_flow(cfg, g, m);
  CHECK(sol.converged);
  // Uniform isentropic flow is an exact discrete solution here; the solver
  // only has to coast through the short CFL ramp.
  CHECK(sol.iterations_used <= cfg.cfl_ramp_iters + 2);
  CHECK(sol.stations.p0_in == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.stations.p0_out == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.stations.p_static_out == doctest::Approx(cfg.p_exit).epsilon(1e-12));
  CHECK(sol.stations.mdot_in ==
        doctest::Approx(sol.stations.mdot_out).epsilon(1e-10));
}

TEST_CASE("bump channel converges and conserves mass") {
  const grid::StructuredGrid g = bump_channel(61, 21, 33);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  cfg.drop_orders = 5.0;
  cfg.max_iters = 30000;
  const FlowSolution sol = solve_flow(cfg, g, m);
  CHECK(sol.converged);
  CHECK(sol.l1_final <= sol.l1_first * 1e-5 + 1e-12);
  const FaceGeometry<double> fg = face_geometry(m);
  BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit, 0.0};
  // Discrete conservation: the face-flux mass flows telescope through the
  // converged continuity residuals.
  const double mdot_out = objective_mass_flow(cfg, g.ni, g.nj, fg, bc, sol.state);
  const double mdot_in = inlet_mass_flow(cfg, g.ni, g.nj, fg, bc, sol.state);
  CHECK(mdot_in == doctest::Approx(mdot_out).epsilon(1e-5));
  // Station averages are boundary-state diagnostics; they track the flux
  // value to truncation order only.
  CHECK(sol.stations.mdot_out == doctest::Approx(mdot_out).epsilon(1e-2));
  // Total pressure can only drop through the passage.
  CHECK(sol.stations.p0_out < sol.stations.p0_in);
  const double y =
      objective_pressure_loss(cfg, g.ni, g.nj, fg, bc, sol.state);
  CHECK(y > 0.0);
  CHECK(y < 0.2);
  // Exact face-flux energy totals telescope the same way mass does.
  const auto bf = boundary_flux_sums(cfg, g.ni, g.nj, fg, bc, sol.state);
  CHECK(bf.energy_in == doctest::Approx(bf.energy_out).epsilon(1e-5));
  // Mean total enthalpy carried through either plane matches the reservoir
  // to truncation order (the face flux blends boundary and cell states).
  const double h0_res = cfg.gamma / (cfg.gamma - 1.0) * cfg.t01;
  CHECK(bf.energy_in / bf.mass_in == doctest::Approx(h0_res).epsilon(1e-3));
  CHECK(bf.energy_out / bf.mass_out == doctest::Approx(h0_res).epsilon(1e-3));
  // The passage is choked: a supersonic pocket sits over the bump.
  double mach_max = 0.0;
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    const auto w = detail::cell_prim(sol.state, c, cfg.gamma);
    const double m2 = (w.u * w.u + w.v * w.v) / (cfg.gamma * w.p / w.rho);
    mach_max = std::max(mach_max, std::sqrt(m2));
  }
  CHECK(mach_max > 1.0);
  CHECK(mach_max < 1.6);
}

TEST_CASE("abs target warm restart converges in one sweep") {
  const grid::StructuredGrid g = flat_channel(41, 17);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  cfg.p_exit = 0.845;
  cfg.cfl_ramp_iters = 10;
  const FlowSolution first = solve_flow(cfg, g, m);
  FlowConfig again = cfg;
  again.abs_target = std::max(first.l1_final, 1e-300);
  const FlowSolution second = solve_flow(again, g, m, &first.state);
  CHECK(second.converged);
  CHECK(second.iterations_used == 1);
}

TEST_CASE("solver failure modes raise typed errors") {
  const grid::StructuredGrid g = bump_channel(61, 21, 33);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  cfg.max_iters = 3;
  cfg.cfl_ramp_iters = 0;
  cfg.p_exit_ramp_iters = 0;
  CHECK_THROWS_AS(solve_flow(cfg, g, m), PrimalNotConvergedError);

  // A budget that cannot outlast the startup ramp is a configuration error.
  FlowConfig cramped;
  cramped.max_iters = 100;
  CHECK_THROWS_AS(solve_flow(cramped, g, m), ConfigError);

  FlowConfig bad;
  bad.cfl = -1.0;
  CHECK_THROWS_AS(solve_flow(bad, g, m), ConfigError);

  FlowConfig ok;
  State4<double> poison = initial_state(ok, g.num_cells());
  poison.rho[7] = -poison.rho[7];
  CHECK_THROWS_AS(solve_flow(ok, g, m, &poison), NonPhysicalStateError);
}

TEST_CASE("time steps are positive and scale linearly with the CFL number") {
  const grid::StructuredGrid g = bump_channel(61, 21, 33);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  const State4<double> U = initial_state(cfg, g.num_cells());
  const FaceGeometry<double> fg = face_geometry(m);
  const auto dt1 = local_time_steps(cfg, g.ni, g.nj, fg, m, U, 1.0);
  const auto dt2 = local_time_steps(cfg, g.ni, g.nj, fg, m, U, 2.0);
  for (std::size_t c = 0; c < dt1.size(); ++c) {
    CHECK(dt1[c] > 0.0);
    CHECK(dt2[c] == doctest::Approx(2.0 * dt1[c]).epsilon(1e-15));
  }
}

TEST_CASE("solution files are keyed to their mesh") {
  const grid::StructuredGrid g = flat_channel(41, 17);
  const grid::CellMetrics m = grid::compute_metrics(g);
  FlowConfig cfg;
  const FlowSolution sol = solve_flow(cfg, g, m);

  const auto mesh_path = temp_file("mvi_sol_mesh.dat");
  grid::write_mesh(g, mesh_path.string(), grid::MeshFormat::Binary);
  const std::string h = grid::file_hash(mesh_path.string());

  const auto sol_path = temp_file("mvi_sol_state.dat");
  write_solution(sol_path.string(), g.ni, g.nj, sol.state, h);

  std::size_t ni = 0, nj = 0;
  std::string hash_read;
  const State4<double> back =
      read_solution(sol_path.string(), ni, nj, hash_read, h);
  CHECK(ni == g.ni);
  CHECK(nj == g.nj);
  CHECK(hash_read == h);
  for (std::size_t c = 0; c < g.num_cells(); ++c) {
    CHECK(back.rho[c] == sol.state.rho[c]);
    CHECK(back.e[c] == sol.state.e[c]);
  }
  CHECK_THROWS_AS(
      read_solution(sol_path.string(), ni, nj, hash_read, "deadbeef"), Error);
  std::filesystem::remove(sol_path);
  std::filesystem::remove(mesh_path);
  std::filesystem::remove(mesh_path.string() + ".tags.json");
}

TEST_CASE("isentropic efficiency guards its denominator") {
  CHECK(isentropic_efficiency(1.0, 1.2, 1.25) == doctest::Approx(0.8));
  CHECK_THROWS_AS(isentropic_efficiency(1.0, 1.2, 1.0),
                  DegenerateDenominatorError);
}
