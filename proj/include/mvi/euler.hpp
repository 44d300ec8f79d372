#pragma once

#include <filesystem>
#include <vector>

#include "mvi/euler_scheme.hpp"
#include "mvi/flow.hpp"
#include "mvi/grid.hpp"

namespace mvi::euler {

/// Plain-double face geometry from grid metrics.
FaceGeometry<double> face_geometry(const grid::CellMetrics& m);

/// Uniform initial guess from an isentropic expansion of the inlet total
/// conditions to the exit pressure.
// Uniform isentropic expansion of the inlet totals to p_static
// (default: cfg.p_exit when p_static <= 0).
State4<double> initial_state(const FlowConfig& cfg, std::size_t ncells,
                             double p_static = 0.0);

/// Explicit four-stage Runge-Kutta pseudo-time march with local time
/// stepping. Converges the L1 density residual either by drop_orders below
/// its initial value or, if cfg.abs_target > 0, to that absolute level.
/// Throws NonPhysicalStateError on negative density or pressure and
/// PrimalNotConvergedError if the target is not reached in max_iters.
FlowSolution solve_flow(const FlowConfig& cfg, const grid::StructuredGrid& g,
                        const grid::CellMetrics& m,
                        const State4<double>* warm_start = nullptr);

/// Local pseudo-time steps used by the RK march: dt_c = cfl * V_c /
/// sum(|vn| + c area) over the faces of c. Shared with the adjoint march.
std::vector<double> local_time_steps(const FlowConfig& cfg, std::size_t ni,
                                     std::size_t nj,
                                     const FaceGeometry<double>& fg,
                                     const grid::CellMetrics& m,
                                     const State4<double>& U, double cfl);

/// Mass-flux-weighted station averages of the converged state.
StationAverages station_averages(const FlowConfig& cfg, const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m, const State4<double>& U);

// Stage coefficients of the pseudo-time integrator.
inline constexpr double kRkAlpha[4] = {0.25, 1.0 / 3.0, 0.5, 1.0};

// Solution file I/O. Binary layout: magic, cell counts, source mesh hash,
// then the four conserved fields. Reading verifies the stored mesh hash
// against `expect_mesh_hash` when non-empty.
void write_solution(const std::filesystem::path& path, std::size_t ni,
                    std::size_t nj, const State4<double>& U,
                    const std::string& mesh_hash);
State4<double> read_solution(const std::filesystem::path& path, std::size_t& ni,
                             std::size_t& nj, std::string& mesh_hash,
                             const std::string& expect_mesh_hash = "");

void write_convergence_csv(const std::filesystem::path& path,
                           const std::vector<double>& history);

}  // namespace mvi::euler
