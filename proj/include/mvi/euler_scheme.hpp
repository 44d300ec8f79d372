#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mvi/errors.hpp"
#include "mvi/flow.hpp"
#include "mvi/tape.hpp"

// Spatial discretization of the 2D Euler equations, written once over a
// generic scalar so the identical arithmetic runs untraced (double) and
// traced (tape::Var). Second-order MUSCL reconstruction of primitive
// variables with a smooth van Albada limiter, Roe flux with a smoothed
// absolute value acting as entropy fix, characteristic total-condition
// inflow, static-pressure outflow, slip walls. The residual of a cell is the
// net outward flux sum, not scaled by cell volume.

namespace mvi::euler {

template <class S>
struct FaceGeometry {
  std::vector<S> inx, iny;  // i-face area-weighted normals, +i orientation
  std::vector<S> jnx, jny;  // j-face area-weighted normals, +j orientation
};

/// Boundary data, traced alongside the state when recording.
template <class S>
struct BcValues {
  S p01, t01, p_exit;
  double angle_rad = 0.0;
};

namespace detail {

using std::cos;
using std::pow;
using std::sin;
using std::sqrt;
using tape::cos;
using tape::pow;
using tape::sin;
using tape::sqrt;

inline double sabs(double x, double w) { return std::sqrt(x * x + w * w); }
using tape::sabs;

using tape::value;

template <class S>
struct Prim {
  S rho, u, v, p;
};

template <class S>
S total_enthalpy(const Prim<S>& w, double gamma) {
  return (gamma / (gamma - 1.0)) * w.p / w.rho + 0.5 * (w.u * w.u + w.v * w.v);
}

/// Smooth van Albada slope average; exact average for equal slopes, tends to
/// the smaller slope near extrema. eps2 keeps it differentiable at 0.
template <class S>
S limited_slope(const S& a, const S& b, double eps2) {
  return (a * (b * b + eps2) + b * (a * a + eps2)) / (a * a + b * b + 2.0 * eps2);
}

/// Roe flux through one face, scaled by the face area. nx, ny is the
/// area-weighted normal.
template <class S>
void roe_flux(const Prim<S>& L, const Prim<S>& R, const S& nx, const S& ny,
              double gamma, double efix, std::array<S, 4>& f) {
  const S area = sqrt(nx * nx + ny * ny);
  const S ux = nx / area, uy = ny / area;

  const S vnL = L.u * ux + L.v * uy;
  const S vnR = R.u * ux + R.v * uy;
  const S hL = total_enthalpy(L, gamma);
  const S hR = total_enthalpy(R, gamma);

  // Roe averages.
  const S srL = sqrt(L.rho), srR = sqrt(R.rho);
  const S inv = 1.0 / (srL + srR);
  const S ru = (srL * L.u + srR * R.u) * inv;
  const S rv = (srL * L.v + srR * R.v) * inv;
  const S rh = (srL * hL + srR * hR) * inv;
  const S rq2 = ru * ru + rv * rv;
  const S rc2 = (gamma - 1.0) * (rh - 0.5 * rq2);
  const S rc = sqrt(rc2);
  const S rvn = ru * ux + rv * uy;
  const S rrho = srL * srR;

  const S drho = R.rho - L.rho;
  const S du = R.u - L.u;
  const S dv = R.v - L.v;
  const S dp = R.p - L.p;
  const S dvn = du * ux + dv * uy;

  // Smoothed wave speeds; the width delta plays the entropy-fix role.
  const double delta = efix * value(rc);
  const S l1 = sabs(rvn - rc, delta);
  const S l2 = sabs(rvn, delta);
  const S l3 = sabs(rvn + rc, delta);

  const S a1 = (dp - rrho * rc * dvn) / (2.0 * rc2);
  const S a3 = (dp + rrho * rc * dvn) / (2.0 * rc2);
  const S a2 = drho - dp / rc2;

  std::array<S, 4> diss;
  diss[0] = l1 * a1 + l2 * a2 + l3 * a3;
  diss[1] = l1 * a1 * (ru - rc * ux) + l2 * (a2 * ru + rrho * (du - dvn * ux)) +
            l3 * a3 * (ru + rc * ux);
  diss[2] = l1 * a1 * (rv - rc * uy) + l2 * (a2 * rv + rrho * (dv - dvn * uy)) +
            l3 * a3 * (rv + rc * uy);
  diss[3] = l1 * a1 * (rh - rc * rvn) +
            l2 * (a2 * 0.5 * rq2 + rrho * (ru * du + rv * dv - rvn * dvn)) +
            l3 * a3 * (rh + rc * rvn);

  const S fmL = L.rho * vnL, fmR = R.rho * vnR;
  f[0] = 0.5 * (area * (fmL + fmR) - area * diss[0]);
  f[1] = 0.5 * (area * (fmL * L.u + fmR * R.u + (L.p + R.p) * ux) - area * diss[1]);
  f[2] = 0.5 * (area * (fmL * L.v + fmR * R.v + (L.p + R.p) * uy) - area * diss[2]);
  f[3] = 0.5 * (area * (fmL * hL + fmR * hR) - area * diss[3]);
}

/// Analytic Euler flux of one state, scaled by the face area.
template <class S>
void analytic_flux(const Prim<S>& w, const S& nx, const S& ny, double gamma,
                   std::array<S, 4>& f) {
  const S vn = w.u * nx + w.v * ny;  // area-weighted normal velocity
  const S h = total_enthalpy(w, gamma);
  f[0] = w.rho * vn;
  f[1] = w.rho * vn * w.u + w.p * nx;
  f[2] = w.rho * vn * w.v + w.p * ny;
  f[3] = w.rho * vn * h;
}

/// Subsonic total-condition inflow: total pressure, total temperature and
/// flow angle are imposed, the static pressure is taken from the interior
/// cell (the one outgoing characteristic). The boundary state carries the
/// reservoir's total enthalpy exactly, and the inflow grows as the interior
/// pressure drops, so a starved passage always refills; invariant-based
/// closures instead collapse to a stagnant boundary state under the same
/// conditions and can freeze a spurious low-flow equilibrium.
///
/// Two smooth caps handle transients far from the operating point: the Mach
/// number saturates at sonic (a reservoir cannot feed a passage faster than
/// choked), and an interior over-pressure (p > P01) shuts the inlet toward
/// the quiescent reservoir instead of turning the isentropic ratio complex.
template <class S>
Prim<S> inlet_state(const Prim<S>& in, const BcValues<S>& bc, double gamma) {
  const double K = 2.0 / (gamma - 1.0);
  const double g1g = (gamma - 1.0) / gamma;
  const S x = pow(bc.p01 / in.p, g1g) - 1.0;
  const S m2_raw = K * 0.5 * (x + sabs(x, 1e-8));          // K * smax(x, 0)
  const S m2c = 0.5 * (m2_raw + 1.0 - sabs(m2_raw - 1.0, 1e-6));  // smin(., 1)
  // The smooth min undershoots below zero near m2_raw = 0; pull it back up
  // so the square root stays real.
  const S m2 = 0.5 * (m2c + sabs(m2c, 1e-9));
  const S tb = bc.t01 / (1.0 + m2 / K);
  const S pb = bc.p01 * pow(tb / bc.t01, 1.0 / g1g);
  const S qb = sqrt(m2 * gamma * tb + 1e-30);
  const double dx = std::cos(bc.angle_rad), dy = std::sin(bc.angle_rad);
  Prim<S> w;
  w.rho = pb / tb;
  w.u = qb * dx;
  w.v = qb * dy;
  w.p = pb;
  return w;
}

/// Subsonic static-pressure outflow: convected quantities from the interior,
/// pressure imposed.
template <class S>
Prim<S> outlet_state(const Prim<S>& in, const BcValues<S>& bc) {
  Prim<S> w = in;
  w.p = bc.p_exit;
  return w;
}

template <class S>
Prim<S> cell_prim(const State4<S>& U, std::size_t c, double gamma) {
  Prim<S> w;
  w.rho = U.rho[c];
  const S ir = 1.0 / U.rho[c];
  w.u = U.mx[c] * ir;
  w.v = U.my[c] * ir;
  w.p = (gamma - 1.0) * (U.e[c] - 0.5 * (U.mx[c] * w.u + U.my[c] * w.v));
  return w;
}

}  // namespace detail

namespace detail {

/// Inlet face flux at row j: the characteristic boundary state fed through
/// the same Roe flux as interior faces, so a transient supersonic interior
/// cannot balance against an imposed subsonic state.
template <class S>
void inlet_face_flux(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                     const FaceGeometry<S>& fg, const BcValues<S>& bc,
                     const State4<S>& U, std::size_t j, std::array<S, 4>& f) {
  (void)nj;
  const std::size_t nci = ni - 1;
  const S& nx = fg.inx[j * ni + 0];
  const S& ny = fg.iny[j * ni + 0];
  const Prim<S> wi = cell_prim(U, j * nci + 0, cfg.gamma);
  const Prim<S> wb = inlet_state(wi, bc, cfg.gamma);
  roe_flux(wb, wi, nx, ny, cfg.gamma, cfg.entropy_fix, f);
}

/// Outlet face flux at row j, imposed weakly the same way.
template <class S>
void outlet_face_flux(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                      const FaceGeometry<S>& fg, const BcValues<S>& bc,
                      const State4<S>& U, std::size_t j, std::array<S, 4>& f) {
  (void)nj;
  const std::size_t nci = ni - 1;
  const S& nx = fg.inx[j * ni + nci];
  const S& ny = fg.iny[j * ni + nci];
  const Prim<S> wi = cell_prim(U, j * nci + nci - 1, cfg.gamma);
  const Prim<S> wb = outlet_state(wi, bc);
  roe_flux(wi, wb, nx, ny, cfg.gamma, cfg.entropy_fix, f);
}

}  // namespace detail

/// Net outward flux sum per cell. fg must match the (ni, nj) node counts; U
/// and R are cell arrays of size (ni-1)*(nj-1).
template <class S>
void eval_residual(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                   const FaceGeometry<S>& fg, const BcValues<S>& bc,
                   const State4<S>& U, State4<S>& R) {
  using namespace detail;
  const double gamma = cfg.gamma;
  const double efix = cfg.entropy_fix;
  const double eps2 = cfg.limiter_eps2;
  const bool second = !cfg.first_order;
  const std::size_t nci = ni - 1, ncj = nj - 1;
  const std::size_t ncells = nci * ncj;

  // Cell primitives, computed once.
  std::vector<Prim<S>> W(ncells);
  for (std::size_t c = 0; c < ncells; ++c) W[c] = cell_prim(U, c, gamma);

  R.resize(ncells);
  std::array<S, 4> f;

  auto add = [&](std::size_t c, double sgn, const std::array<S, 4>& fl) {
    R.rho[c] += sgn * fl[0];
    R.mx[c] += sgn * fl[1];
    R.my[c] += sgn * fl[2];
    R.e[c] += sgn * fl[3];
  };

  // Reconstruction toward a face from cell cm (missing far neighbor cmm
  // drops the face to first order there).
  auto recon = [&](const Prim<S>& wmm, const Prim<S>& wm, const Prim<S>& wp,
                   bool have_far, Prim<S>& out) {
    if (!second || !have_far) {
      out = wm;
      return;
    }
    auto lim = [&](const S& a, const S& b, const S& base) {
      return base + 0.5 * limited_slope(a, b, eps2);
    };
    out.rho = lim(wm.rho - wmm.rho, wp.rho - wm.rho, wm.rho);
    out.u = lim(wm.u - wmm.u, wp.u - wm.u, wm.u);
    out.v = lim(wm.v - wmm.v, wp.v - wm.v, wm.v);
    out.p = lim(wm.p - wmm.p, wp.p - wm.p, wm.p);
  };

  // i-faces.
  for (std::size_t j = 0; j < ncj; ++j) {
    for (std::size_t I = 0; I <= nci; ++I) {
      const S& nx = fg.inx[j * ni + I];
      const S& ny = fg.iny[j * ni + I];
      if (I == 0) {
        inlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
        add(j * nci + 0, -1.0, f);
      } else if (I == nci) {
        outlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
        add(j * nci + nci - 1, +1.0, f);
      } else {
        const std::size_t cl = j * nci + I - 1, cr = j * nci + I;
        Prim<S> wl, wr;
        recon(W[cl - (I >= 2 ? 1 : 0)], W[cl], W[cr], I >= 2, wl);
        // Mirrored stencil for the right state.
        if (second && I + 1 < nci) {
          const Prim<S>& wp = W[cr + 1];
          auto lim = [&](const S& a, const S& b, const S& base) {
            return base - 0.5 * limited_slope(a, b, eps2);
          };
          wr.rho = lim(wp.rho - W[cr].rho, W[cr].rho - W[cl].rho, W[cr].rho);
          wr.u = lim(wp.u - W[cr].u, W[cr].u - W[cl].u, W[cr].u);
          wr.v = lim(wp.v - W[cr].v, W[cr].v - W[cl].v, W[cr].v);
          wr.p = lim(wp.p - W[cr].p, W[cr].p - W[cl].p, W[cr].p);
        } else {
          wr = W[cr];
        }
        roe_flux(wl, wr, nx, ny, gamma, efix, f);
        add(cl, +1.0, f);
        add(cr, -1.0, f);
      }
    }
  }

  // j-faces.
  for (std::size_t J = 0; J <= ncj; ++J) {
    for (std::size_t i = 0; i < nci; ++i) {
      const S& nx = fg.jnx[J * nci + i];
      const S& ny = fg.jny[J * nci + i];
      if (J == 0) {
        // Lower wall: pressure flux only (slip).
        const Prim<S>& w = W[0 * nci + i];
        f[0] = S(0.0);
        f[1] = w.p * nx;
        f[2] = w.p * ny;
        f[3] = S(0.0);
        add(i, -1.0, f);
      } else if (J == ncj) {
        const Prim<S>& w = W[(ncj - 1) * nci + i];
        f[0] = S(0.0);
        f[1] = w.p * nx;
        f[2] = w.p * ny;
        f[3] = S(0.0);
        add((ncj - 1) * nci + i, +1.0, f);
      } else {
        const std::size_t cl = (J - 1) * nci + i, cr = J * nci + i;
        Prim<S> wl, wr;
        recon(W[cl - (J >= 2 ? nci : 0)], W[cl], W[cr], J >= 2, wl);
        if (second && J + 1 < ncj) {
          const Prim<S>& wp = W[cr + nci];
          auto lim = [&](const S& a, const S& b, const S& base) {
            return base - 0.5 * limited_slope(a, b, eps2);
          };
          wr.rho = lim(wp.rho - W[cr].rho, W[cr].rho - W[cl].rho, W[cr].rho);
          wr.u = lim(wp.u - W[cr].u, W[cr].u - W[cl].u, W[cr].u);
          wr.v = lim(wp.v - W[cr].v, W[cr].v - W[cl].v, W[cr].v);
          wr.p = lim(wp.p - W[cr].p, W[cr].p - W[cl].p, W[cr].p);
        } else {
          wr = W[cr];
        }
        roe_flux(wl, wr, nx, ny, gamma, efix, f);
        add(cl, +1.0, f);
        add(cr, -1.0, f);
      }
    }
  }
}

/// Mass flow leaving through the outlet plane, summed from the exact face
/// fluxes the residual uses; at a converged state it telescopes against the
/// inlet value through the continuity residuals.
template <class S>
S objective_mass_flow(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                      const FaceGeometry<S>& fg, const BcValues<S>& bc,
                      const State4<S>& U) {
  const std::size_t ncj = nj - 1;
  std::array<S, 4> f;
  S mdot(0.0);
  for (std::size_t j = 0; j < ncj; ++j) {
    detail::outlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
    mdot += f[0];
  }
  return mdot;
}

/// Mass flow entering through the inlet plane (positive for inflow), from
/// the residual's own face fluxes.
template <class S>
S inlet_mass_flow(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                  const FaceGeometry<S>& fg, const BcValues<S>& bc,
                  const State4<S>& U) {
  const std::size_t ncj = nj - 1;
  std::array<S, 4> f;
  S mdot(0.0);
  for (std::size_t j = 0; j < ncj; ++j) {
    detail::inlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
    mdot += f[0];
  }
  return mdot;
}

/// Exact mass and energy flux totals through both open boundaries, summed
/// from the same face fluxes the residual uses (in: positive into the
/// domain, out: positive out of it). The slip walls carry neither, so at a
/// converged state in equals out for both pairs up to the residual level.
template <class S>
struct BoundaryFluxSums {
  S mass_in, mass_out, energy_in, energy_out;
};

template <class S>
BoundaryFluxSums<S> boundary_flux_sums(const FlowConfig& cfg, std::size_t ni,
                                       std::size_t nj,
                                       const FaceGeometry<S>& fg,
                                       const BcValues<S>& bc,
                                       const State4<S>& U) {
  const std::size_t ncj = nj - 1;
  std::array<S, 4> f;
  BoundaryFluxSums<S> s{S(0.0), S(0.0), S(0.0), S(0.0)};
  for (std::size_t j = 0; j < ncj; ++j) {
    detail::inlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
    s.mass_in += f[0];
    s.energy_in += f[3];
    detail::outlet_face_flux(cfg, ni, nj, fg, bc, U, j, f);
    s.mass_out += f[0];
    s.energy_out += f[3];
  }
  return s;
}

/// Station quantities entering the loss coefficient, all from boundary-face
/// states: mass-flux-weighted total pressures and area-weighted outlet static
/// pressure.
template <class S>
struct StationSums {
  S p0_in, p0_out, p_out, h0_in, h0_out, mdot_in, mdot_out;
};

template <class S>
StationSums<S> station_sums(const FlowConfig& cfg, std::size_t ni,
                            std::size_t nj, const FaceGeometry<S>& fg,
                            const BcValues<S>& bc, const State4<S>& U) {
  using namespace detail;
  const double gamma = cfg.gamma;
  const std::size_t nci = ni - 1, ncj = nj - 1;
  const double gexp = gamma / (gamma - 1.0);

  auto total_p = [&](const Prim<S>& w) {
    const S c2 = gamma * w.p / w.rho;
    const S m2 = (w.u * w.u + w.v * w.v) / c2;
    return w.p * pow(1.0 + 0.5 * (gamma - 1.0) * m2, gexp);
  };

  S w_in(0.0), w_out(0.0), p0_in(0.0), p0_out(0.0), h0_in(0.0), h0_out(0.0);
  S area_out(0.0), ps_out(0.0);
  for (std::size_t j = 0; j < ncj; ++j) {
    {
      const S& nx = fg.inx[j * ni + 0];
      const S& ny = fg.iny[j * ni + 0];
      // The +i face normal points into the domain here, so the plain flux is
      // already positive for inflow.
      const Prim<S> wb = inlet_state(cell_prim(U, j * nci + 0, gamma), bc, gamma);
      const S w = wb.rho * (wb.u * nx + wb.v * ny);
      w_in += w;
      p0_in += w * total_p(wb);
      h0_in += w * total_enthalpy(wb, gamma);
    }
    {
      const S& nx = fg.inx[j * ni + nci];
      const S& ny = fg.iny[j * ni + nci];
      const S area = sqrt(nx * nx + ny * ny);
      const Prim<S> wb = outlet_state(cell_prim(U, j * nci + nci - 1, gamma), bc);
      const S w = wb.rho * (wb.u * nx + wb.v * ny);
      w_out += w;
      p0_out += w * total_p(wb);
      h0_out += w * total_enthalpy(wb, gamma);
      area_out += area;
      ps_out += area * wb.p;
    }
  }
  StationSums<S> s;
  s.mdot_in = w_in;
  s.mdot_out = w_out;
  s.p0_in = p0_in / w_in;
  s.p0_out = p0_out / w_out;
  s.h0_in = h0_in / w_in;
  s.h0_out = h0_out / w_out;
  s.p_out = ps_out / area_out;
  return s;
}

/// Total pressure loss coefficient Y = (P01 - P02) / (P02 - p2).
template <class S>
S objective_pressure_loss(const FlowConfig& cfg, std::size_t ni, std::size_t nj,
                          const FaceGeometry<S>& fg, const BcValues<S>& bc,
                          const State4<S>& U) {
  const StationSums<S> s = station_sums(cfg, ni, nj, fg, bc, U);
  const S den = s.p0_out - s.p_out;
  if (!(detail::value(den) > 1e-10 * detail::value(s.p0_in)))
    throw DegenerateDenominatorError(
        "outlet dynamic head " + std::to_string(detail::value(den)) +
        " too small for the loss coefficient");
  return (s.p0_in - s.p0_out) / den;
}

}  // namespace mvi::euler
