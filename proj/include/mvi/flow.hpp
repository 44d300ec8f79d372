#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mvi::euler {

/// Working fluid and boundary data. Nondimensional with gas constant R = 1:
/// c^2 = gamma * T, rho = p / T.
struct FlowConfig {
  double gamma = 1.4;
  double p01 = 1.0;             // inlet total pressure
  double t01 = 1.0;             // inlet total temperature
  double inlet_angle_deg = 0.0; // flow angle against +x
  double p_exit = 0.72;         // outlet static pressure

  double cfl = 1.5;
  int max_iters = 40000;
  double drop_orders = 6.0;     // converged when L1(rho residual) fell this much
  double abs_target = 0.0;      // if > 0: absolute L1 target instead of drop
  int cfl_ramp_iters = 300;
  // Cold starts begin near stagnation and lower the back pressure to p_exit
  // over this many iterations, so the passage chokes quasi-steadily instead
  // of being hit by an impulsive start. Warm restarts skip all ramps.
  int p_exit_ramp_iters = 600;

  bool first_order = false;     // disable reconstruction (diagnostics)
  double limiter_eps2 = 1e-8;   // van Albada smoothing, squared slope scale
  double entropy_fix = 0.10;    // wave-speed smoothing as fraction of c
  double inlet_angle_rad() const;

  void validate() const;
};

/// Conservative cell state, one array per equation. Generic over the scalar
/// so the same layout serves the solver and the taped residual.
template <class S>
struct State4 {
  std::vector<S> rho, mx, my, e;

  std::size_t size() const { return rho.size(); }
  void resize(std::size_t n) {
    rho.assign(n, S(0.0));
    mx.assign(n, S(0.0));
    my.assign(n, S(0.0));
    e.assign(n, S(0.0));
  }
};

using ConservativeState = State4<double>;

/// Mass-flux-weighted totals and area-weighted static pressure at the inlet
/// and outlet planes, evaluated from the boundary-face states.
struct StationAverages {
  double p0_in = 0.0, p0_out = 0.0;
  double p_static_out = 0.0;
  double h0_in = 0.0, h0_out = 0.0;
  double mdot_in = 0.0, mdot_out = 0.0;
};

struct FlowSolution {
  ConservativeState state;
  std::vector<double> residual_history;  // L1 density residual per iteration
  bool converged = false;
  int iterations_used = 0;
  double l1_first = 0.0, l1_final = 0.0;
  StationAverages stations;
};

/// eta = (h02 - h01) / (h02_is - h01). Degenerate when the denominator
/// vanishes.
double isentropic_efficiency(double h01, double h02, double h02_is);

}  // namespace mvi::euler
