#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mvi/euler.hpp"
#include "mvi/flow.hpp"
#include "mvi/grid.hpp"
#include "mvi/morph.hpp"
#include "mvi/tape.hpp"

// Adjoint solves for the steady flow problem, two ways.
//
// The AD variant tapes one full pseudo-time step U -> Phi(U) (all four RK
// stages with the converged local time steps frozen as constants) together
// with the objectives, then iterates the transposed step
//
//   lambda <- Phi_U^T lambda + dJ/dU^T
//
// by reverse sweeps of that one tape. The iteration contracts exactly when
// the primal step does, and at its fixed point one more sweep reads off the
// total derivative of the objective w.r.t. every node coordinate and
// boundary parameter: the tape carries the full metric chain, so mesh
// sensitivities cost one extra sweep.
//
// Taped sweeps cost an order of magnitude more than a compiled primal
// iteration, so by default the AD solve wraps the same preconditioned
// update in restarted GMRES: the matvec is one transposed-step sweep, the
// Krylov space is built from exactly the updates the plain relaxation would
// take, and the converged lambda (hence every gradient) is identical. Set
// krylov_restart = 0 to run the plain relaxation.
//
// The HD variant assembles the flux Jacobian by hand instead: one-sided
// finite differences of the first-order flux stencils with the Roe
// dissipation coefficients frozen at the baseline state. The same RK-shaped
// fixed point relaxes the transposed system. Its gradient error (frozen
// coefficients, first-order stencils against a second-order primal) and its
// tendency to stagnate are properties under study, deliberately not fixed;
// stagnation is reported, never hidden.

namespace mvi::adjoint {

enum class ObjectiveId { MassFlow, PressureLossY };
enum class Variant { AD, HD };

std::string to_string(ObjectiveId id);
std::string to_string(Variant v);

struct AdjointConfig {
  int max_iters = 40000;
  double drop_orders = 5.0;  // L1 of the fixed-point update must fall this far
  double abs_target = 0.0;   // if > 0: absolute update target instead
  // AD only: GMRES restart length over the transposed-step sweeps; 0 runs
  // the plain fixed-point relaxation. HD always relaxes plainly so its
  // stagnation behavior stays observable.
  int krylov_restart = 40;
  // HD stagnation detector: stalled when the trailing-window minimum update
  // stops improving on the window before it by at least this factor.
  int stagnation_window = 300;
  double stagnation_factor = 0.95;
  bool freeze_dissipation = true;  // HD: hold Roe coefficients at baseline
  double fd_step = 1e-7;           // HD: relative one-sided FD step
};

struct AdjointSolution {
  euler::State4<double> lambda;  // per-cell, per-equation
  ObjectiveId objective_id = ObjectiveId::MassFlow;
  Variant variant = Variant::AD;
  std::vector<double> residual_history;  // L1 of the update per iteration
  bool converged = false;
  bool stagnated = false;  // HD only; mutually exclusive with converged
  int iterations_used = 0;
  double objective_value = 0.0;  // objective at the primal state
};

/// Total objective derivatives: per node coordinate and per boundary
/// parameter. Computed from the converged adjoint in one reverse sweep.
struct SensitivityField {
  std::vector<double> dJ_dx, dJ_dy;  // per node, index j*ni + i
  double dJ_dp_exit = 0.0, dJ_dp01 = 0.0, dJ_dt01 = 0.0;
};

/// Objective gradient w.r.t. surface-node displacement, after pulling the
/// volume sensitivities back through the morph operator. g_normal is the
/// signed projection on the outward (into-flow) surface normal: positive
/// means outward movement increases the objective.
struct SurfaceSensitivity {
  std::vector<double> gx, gy;
  std::vector<double> g_normal;
  std::vector<double> arc_fraction;
};

/// One recorded pseudo-time step plus both objectives, reusable for any
/// number of reverse sweeps. Input order on the tape: conserved state
/// (field-major: rho, mx, my, e), node coordinates (x block, y block), then
/// p_exit, p01, t01. Outputs: updated state in the same layout, then the
/// mass flow and loss objectives. Record at a converged state: only there do
/// the frozen time steps drop out of the derivatives exactly.
class TapedStep {
 public:
  TapedStep(const euler::FlowConfig& cfg, const grid::StructuredGrid& g,
            const grid::CellMetrics& m, const euler::State4<double>& state);

  struct Pullback {
    euler::State4<double> state;          // Phi_U^T lambda + w dJ/dU^T
    std::vector<double> coord_x, coord_y; // Phi_X^T lambda + w dJ/dX^T
    double p_exit = 0.0, p01 = 0.0, t01 = 0.0;
  };

  /// One reverse sweep: seed the updated-state outputs with `lambda` and the
  /// selected objective with `weight`. The result stays valid until the next
  /// call.
  const Pullback& pull_back(const euler::State4<double>& lambda,
                            ObjectiveId objective, double weight);

  double objective_value(ObjectiveId id) const;
  std::size_t ncells() const { return ncells_; }
  std::size_t nnodes() const { return nnodes_; }
  tape::TapeStats stats() const { return tape_.stats(); }
  const tape::Tape& tape() const { return tape_; }

 private:
  std::size_t ncells_ = 0, nnodes_ = 0;
  double j_mass_ = 0.0, j_loss_ = 0.0;
  tape::Tape tape_;
  tape::SweepWorkspace ws_;
  std::vector<double> seed_, grad_;
  Pullback pb_;
};

/// Fixed-point adjoint on a shared tape. Throws AdjointNotConvergedError if
/// the update target is missed within max_iters or the iteration leaves the
/// finite range.
AdjointSolution solve_adjoint_ad(TapedStep& step, ObjectiveId objective,
                                 const AdjointConfig& acfg = {});

/// Convenience wrapper: checks the primal converged, tapes one step, solves.
AdjointSolution solve_adjoint_ad(const euler::FlowConfig& cfg,
                                 const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m,
                                 const euler::FlowSolution& primal,
                                 ObjectiveId objective,
                                 const AdjointConfig& acfg = {});

/// Hand-differenced variant. Never throws on stagnation: the solution comes
/// back with converged/stagnated set honestly. Throws only when the
/// iteration diverges to non-finite values.
AdjointSolution solve_adjoint_hd(const euler::FlowConfig& cfg,
                                 const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m,
                                 const euler::FlowSolution& primal,
                                 ObjectiveId objective,
                                 const AdjointConfig& acfg = {});

/// Total dJ/dX per node plus boundary-parameter derivatives, by one reverse
/// sweep at the accepted adjoint. AD solutions must be converged; HD
/// solutions are accepted as-is (their status was reported by the solve).
SensitivityField mesh_sensitivities(TapedStep& step,
                                    const AdjointSolution& adj);

/// Pull volume sensitivities back to the surface: g = M^T dJ/dX through the
/// given morph operator, or the plain surface rows when `smoother` is null
/// (identity operator). Nodes pinned by the inlet/outlet planes never enter:
/// the operator's surface range excludes them.
SurfaceSensitivity surface_sensitivities(const SensitivityField& field,
                                         const grid::StructuredGrid& g,
                                         const morph::MorphOperator* smoother);

/// Linear impact prediction <g, d> over the surface displacement components.
double predict_delta(const SurfaceSensitivity& g,
                     const morph::DeformationField& d);

/// (dF_nonlinear - dF_adjoint) / dF_nonlinear * 100. objective_scale sets
/// the degeneracy cutoff: |dF_nonlinear| below 1e-14 of it means the
/// nonlinear delta drowned in solver noise and the sample must be excluded.
double deviation_pct(double df_nonlinear, double df_adjoint,
                     double objective_scale);

}  // namespace mvi::adjoint
