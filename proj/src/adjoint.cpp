#include "mvi/adjoint.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mvi/errors.hpp"

namespace mvi::adjoint {

std::string to_string(ObjectiveId id) {
  return id == ObjectiveId::MassFlow ? "mass_flow" : "pressure_loss_y";
}

std::string to_string(Variant v) { return v == Variant::AD ? "ad" : "hd"; }

namespace {

void validate_acfg(const AdjointConfig& acfg) {
  if (acfg.max_iters < 1)
    throw ConfigError("adjoint max_iters must be at least 1");
  if (!(acfg.drop_orders > 0.0) && !(acfg.abs_target > 0.0))
    throw ConfigError("either drop_orders or abs_target must be positive");
  if (acfg.krylov_restart < 0)
    throw ConfigError("krylov_restart must be non-negative");
  if (acfg.stagnation_window < 10)
    throw ConfigError("stagnation_window must be at least 10");
  if (!(acfg.fd_step > 0.0)) throw ConfigError("fd_step must be positive");
}

double update_l1(const euler::State4<double>& a, const euler::State4<double>& b) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    s += std::abs(a.rho[c] - b.rho[c]) + std::abs(a.mx[c] - b.mx[c]) +
         std::abs(a.my[c] - b.my[c]) + std::abs(a.e[c] - b.e[c]);
  }
  return s;
}

void flatten(const euler::State4<double>& U, std::vector<double>& out) {
  const std::size_t n = U.size();
  out.resize(4 * n);
  std::copy(U.rho.begin(), U.rho.end(), out.begin());
  std::copy(U.mx.begin(), U.mx.end(), out.begin() + n);
  std::copy(U.my.begin(), U.my.end(), out.begin() + 2 * n);
  std::copy(U.e.begin(), U.e.end(), out.begin() + 3 * n);
}

void unflatten(const std::vector<double>& v, euler::State4<double>& U) {
  const std::size_t n = v.size() / 4;
  U.rho.assign(v.begin(), v.begin() + n);
  U.mx.assign(v.begin() + n, v.begin() + 2 * n);
  U.my.assign(v.begin() + 2 * n, v.begin() + 3 * n);
  U.e.assign(v.begin() + 3 * n, v.begin() + 4 * n);
}

double vec_l1(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s;
}

double vec_l2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Restarted GMRES on (I - Phi^T) lambda = dJ/dU^T, matvec = one reverse
// sweep of the taped step. Solves the exact linear system whose Richardson
// form is the plain relaxation, so the converged adjoint is the same; only
// the combination coefficients of the sweeps differ. Residual bookkeeping
// stays in the relaxation's units: the true L1 of the update (== the linear
// residual) is evaluated at every restart and gates convergence; per-sweep
// history entries in between are the Givens 2-norm estimate rescaled to the
// L1 seen at the restart head.
AdjointSolution solve_ad_gmres(TapedStep& step, ObjectiveId objective,
                               const AdjointConfig& acfg) {
  AdjointSolution sol;
  sol.objective_id = objective;
  sol.variant = Variant::AD;
  sol.objective_value = step.objective_value(objective);
  sol.lambda.resize(step.ncells());

  const std::size_t n4 = 4 * step.ncells();
  euler::State4<double> scratch;
  scratch.resize(step.ncells());
  int sweeps = 0;
  // out = v - Phi^T v (objective weight 0 keeps the sweep homogeneous).
  auto matvec = [&](const std::vector<double>& v, std::vector<double>& out) {
    unflatten(v, scratch);
    const auto& pb = step.pull_back(scratch, objective, 0.0);
    ++sweeps;
    std::vector<double> phit;
    flatten(pb.state, phit);
    out.resize(n4);
    for (std::size_t k = 0; k < n4; ++k) out[k] = v[k] - phit[k];
    for (double x : out)
      if (!std::isfinite(x))
        throw AdjointNotConvergedError(
            "adjoint sweep became non-finite at sweep " +
            std::to_string(sweeps));
  };

  std::vector<double> b;
  {
    euler::State4<double> zero;
    zero.resize(step.ncells());
    const auto& pb = step.pull_back(zero, objective, 1.0);
    ++sweeps;
    flatten(pb.state, b);
  }
  const double b_l1 = vec_l1(b);
  sol.iterations_used = sweeps;
  if (b_l1 == 0.0) {  // zero objective seed: the origin is the fixed point
    sol.residual_history.push_back(0.0);
    sol.converged = true;
    return sol;
  }
  const double target = acfg.abs_target > 0.0
                            ? acfg.abs_target
                            : b_l1 * std::pow(10.0, -acfg.drop_orders);

  const int m = std::max(1, std::min(acfg.krylov_restart, acfg.max_iters));
  std::vector<std::vector<double>> V(m + 1);
  std::vector<double> H((m + 1) * m, 0.0);
  std::vector<double> cs(m, 0.0), sn(m, 0.0), gvec(m + 1, 0.0), y(m, 0.0);
  std::vector<double> x(n4, 0.0), r = b, w;
  double r_l1 = b_l1;

  while (!sol.converged && sweeps < acfg.max_iters) {
    const double beta = vec_l2(r);
    if (beta == 0.0) {
      sol.converged = true;
      break;
    }
    V[0] = r;
    for (double& v : V[0]) v /= beta;
    std::fill(gvec.begin(), gvec.end(), 0.0);
    gvec[0] = beta;
    std::fill(H.begin(), H.end(), 0.0);

    int j = 0;
    bool inner_done = false;
    while (j < m && sweeps < acfg.max_iters && !inner_done) {
      matvec(V[j], w);
      for (int i = 0; i <= j; ++i) {
        double h = 0.0;
        for (std::size_t k = 0; k < n4; ++k) h += w[k] * V[i][k];
        H[i * m + j] = h;
        for (std::size_t k = 0; k < n4; ++k) w[k] -= h * V[i][k];
      }
      const double hnext = vec_l2(w);
      H[(j + 1) * m + j] = hnext;
      const bool breakdown = hnext <= 1e-14 * beta;
      if (!breakdown) {
        V[j + 1] = w;
        for (double& v : V[j + 1]) v /= hnext;
      }
      for (int i = 0; i < j; ++i) {  // previously accumulated rotations
        const double t = cs[i] * H[i * m + j] + sn[i] * H[(i + 1) * m + j];
        H[(i + 1) * m + j] =
            -sn[i] * H[i * m + j] + cs[i] * H[(i + 1) * m + j];
        H[i * m + j] = t;
      }
      const double denom = std::hypot(H[j * m + j], H[(j + 1) * m + j]);
      cs[j] = denom == 0.0 ? 1.0 : H[j * m + j] / denom;
      sn[j] = denom == 0.0 ? 0.0 : H[(j + 1) * m + j] / denom;
      H[j * m + j] = denom;
      H[(j + 1) * m + j] = 0.0;
      gvec[j + 1] = -sn[j] * gvec[j];
      gvec[j] *= cs[j];
      const double gamma = std::abs(gvec[j + 1]);  // 2-norm residual estimate
      sol.residual_history.push_back(r_l1 * gamma / beta);
      ++j;
      // Aim past the target before paying the true-residual check; the
      // factor absorbs the L1/L2 shape difference.
      if (breakdown || r_l1 * gamma / beta <= 0.25 * target) inner_done = true;
    }

    for (int i = j - 1; i >= 0; --i) {  // back-substitute H y = g
      double s = gvec[i];
      for (int k = i + 1; k < j; ++k) s -= H[i * m + k] * y[k];
      y[i] = s / H[i * m + i];
    }
    for (int i = 0; i < j; ++i)
      for (std::size_t k = 0; k < n4; ++k) x[k] += y[i] * V[i][k];

    matvec(x, w);  // true residual gates convergence across restarts
    for (std::size_t k = 0; k < n4; ++k) r[k] = b[k] - w[k];
    r_l1 = vec_l1(r);
    sol.residual_history.push_back(r_l1);
    sol.iterations_used = sweeps;
    if (r_l1 <= target) sol.converged = true;
  }

  sol.iterations_used = sweeps;
  if (!sol.converged)
    throw AdjointNotConvergedError(
        "adjoint residual " + std::to_string(r_l1) + " above target " +
        std::to_string(target) + " after " + std::to_string(sweeps) +
        " sweeps");
  unflatten(x, sol.lambda);
  return sol;
}

}  // namespace

TapedStep::TapedStep(const euler::FlowConfig& cfg, const grid::StructuredGrid& g,
                     const grid::CellMetrics& m,
                     const euler::State4<double>& state) {
  cfg.validate();
  const std::size_t ni = g.ni, nj = g.nj;
  ncells_ = (ni - 1) * (nj - 1);
  nnodes_ = ni * nj;
  if (state.size() != ncells_)
    throw DimensionMismatchError("state has " + std::to_string(state.size()) +
                                 " cells, grid has " + std::to_string(ncells_));

  // Local time steps of the converged march, frozen as constants. At a fixed
  // point every appearance of dt multiplies a vanishing residual, so the
  // frozen step map has the exact derivatives of the live one.
  const euler::FaceGeometry<double> fgd = euler::face_geometry(m);
  const std::vector<double> dt =
      euler::local_time_steps(cfg, ni, nj, fgd, m, state, cfg.cfl);

  // ~2.5k records per cell for the four-stage step plus objectives; headroom
  // avoids a capacity doubling that would briefly double resident tape memory.
  tape_.reserve(ncells_ * 2800 + 8192);
  tape::Recording rec(tape_);

  euler::State4<tape::Var> U;
  U.rho.reserve(ncells_);
  U.mx.reserve(ncells_);
  U.my.reserve(ncells_);
  U.e.reserve(ncells_);
  for (std::size_t c = 0; c < ncells_; ++c) U.rho.push_back(tape::input(state.rho[c]));
  for (std::size_t c = 0; c < ncells_; ++c) U.mx.push_back(tape::input(state.mx[c]));
  for (std::size_t c = 0; c < ncells_; ++c) U.my.push_back(tape::input(state.my[c]));
  for (std::size_t c = 0; c < ncells_; ++c) U.e.push_back(tape::input(state.e[c]));

  std::vector<tape::Var> xv, yv;
  xv.reserve(nnodes_);
  yv.reserve(nnodes_);
  for (std::size_t n = 0; n < nnodes_; ++n) xv.push_back(tape::input(g.x[n]));
  for (std::size_t n = 0; n < nnodes_; ++n) yv.push_back(tape::input(g.y[n]));

  euler::BcValues<tape::Var> bc;
  bc.p_exit = tape::input(cfg.p_exit);
  bc.p01 = tape::input(cfg.p01);
  bc.t01 = tape::input(cfg.t01);
  bc.angle_rad = cfg.inlet_angle_rad();

  // Face normals recomputed from the traced coordinates: the whole metric
  // chain lands on the tape, so coordinate slots receive total derivatives.
  euler::FaceGeometry<tape::Var> fg;
  grid::detail::face_normals<tape::Var>(ni, nj, xv, yv, fg.inx, fg.iny, fg.jnx,
                                        fg.jny);

  // Objectives at the input state, before the step.
  tape::Var jm = euler::objective_mass_flow(cfg, ni, nj, fg, bc, U);
  tape::Var jy = euler::objective_pressure_loss(cfg, ni, nj, fg, bc, U);
  j_mass_ = jm.v;
  j_loss_ = jy.v;

  euler::State4<tape::Var> S = U, R;
  for (int stage = 0; stage < 4; ++stage) {
    euler::eval_residual(cfg, ni, nj, fg, bc, S, R);
    const double alpha = euler::kRkAlpha[stage];
    for (std::size_t c = 0; c < ncells_; ++c) {
      const double s = alpha * dt[c] / m.volume[c];
      S.rho[c] = U.rho[c] - s * R.rho[c];
      S.mx[c] = U.mx[c] - s * R.mx[c];
      S.my[c] = U.my[c] - s * R.my[c];
      S.e[c] = U.e[c] - s * R.e[c];
    }
  }

  auto mark = [&](const tape::Var& v) {
    std::int32_t id = v.id;
    if (id == 0) id = tape_.push(tape::Op::AddC, 0, 0, 0.0, v.v, v.v);
    tape_.mark_output(id);
  };
  for (std::size_t c = 0; c < ncells_; ++c) mark(S.rho[c]);
  for (std::size_t c = 0; c < ncells_; ++c) mark(S.mx[c]);
  for (std::size_t c = 0; c < ncells_; ++c) mark(S.my[c]);
  for (std::size_t c = 0; c < ncells_; ++c) mark(S.e[c]);
  mark(jm);
  mark(jy);
}

double TapedStep::objective_value(ObjectiveId id) const {
  return id == ObjectiveId::MassFlow ? j_mass_ : j_loss_;
}

const TapedStep::Pullback& TapedStep::pull_back(
    const euler::State4<double>& lambda, ObjectiveId objective, double weight) {
  if (lambda.size() != ncells_)
    throw DimensionMismatchError("lambda has " + std::to_string(lambda.size()) +
                                 " cells, tape has " + std::to_string(ncells_));
  const std::size_t n4 = 4 * ncells_;
  seed_.assign(n4 + 2, 0.0);
  std::copy(lambda.rho.begin(), lambda.rho.end(), seed_.begin());
  std::copy(lambda.mx.begin(), lambda.mx.end(), seed_.begin() + ncells_);
  std::copy(lambda.my.begin(), lambda.my.end(), seed_.begin() + 2 * ncells_);
  std::copy(lambda.e.begin(), lambda.e.end(), seed_.begin() + 3 * ncells_);
  seed_[n4 + (objective == ObjectiveId::MassFlow ? 0 : 1)] = weight;

  grad_.resize(tape_.num_inputs());
  tape_.sweep(seed_, ws_, grad_);

  const double* gp = grad_.data();
  pb_.state.rho.assign(gp, gp + ncells_);
  pb_.state.mx.assign(gp + ncells_, gp + 2 * ncells_);
  pb_.state.my.assign(gp + 2 * ncells_, gp + 3 * ncells_);
  pb_.state.e.assign(gp + 3 * ncells_, gp + n4);
  pb_.coord_x.assign(gp + n4, gp + n4 + nnodes_);
  pb_.coord_y.assign(gp + n4 + nnodes_, gp + n4 + 2 * nnodes_);
  pb_.p_exit = gp[n4 + 2 * nnodes_ + 0];
  pb_.p01 = gp[n4 + 2 * nnodes_ + 1];
  pb_.t01 = gp[n4 + 2 * nnodes_ + 2];
  return pb_;
}

AdjointSolution solve_adjoint_ad(TapedStep& step, ObjectiveId objective,
                                 const AdjointConfig& acfg) {
  validate_acfg(acfg);
  if (acfg.krylov_restart > 0) return solve_ad_gmres(step, objective, acfg);
  AdjointSolution sol;
  sol.objective_id = objective;
  sol.variant = Variant::AD;
  sol.objective_value = step.objective_value(objective);
  sol.lambda.resize(step.ncells());
  sol.residual_history.reserve(256);

  double target = acfg.abs_target;
  bool measured = false;
  for (int it = 0; it < acfg.max_iters; ++it) {
    const auto& pb = step.pull_back(sol.lambda, objective, 1.0);
    const double inc = update_l1(pb.state, sol.lambda);
    if (!std::isfinite(inc))
      throw AdjointNotConvergedError(
          "adjoint update became non-finite at iteration " +
          std::to_string(it + 1));
    sol.lambda = pb.state;
    sol.residual_history.push_back(inc);
    sol.iterations_used = it + 1;
    if (!measured) {
      measured = true;
      if (inc == 0.0) {  // zero seed: the origin is already the fixed point
        sol.converged = true;
        break;
      }
      if (!(acfg.abs_target > 0.0))
        target = inc * std::pow(10.0, -acfg.drop_orders);
    }
    if (inc <= target) {
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged)
    throw AdjointNotConvergedError(
        "adjoint update " + std::to_string(sol.residual_history.back()) +
        " above target " + std::to_string(target) + " after " +
        std::to_string(sol.iterations_used) + " iterations");
  return sol;
}

AdjointSolution solve_adjoint_ad(const euler::FlowConfig& cfg,
                                 const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m,
                                 const euler::FlowSolution& primal,
                                 ObjectiveId objective,
                                 const AdjointConfig& acfg) {
  if (!primal.converged)
    throw PrimalNotConvergedError("adjoint requested on an unconverged primal");
  TapedStep step(cfg, g, m, primal.state);
  return solve_adjoint_ad(step, objective, acfg);
}

// ---------------------------------------------------------------------------
// Hand-differenced variant.
//
// The Jacobian comes from one-sided finite differences of first-order flux
// stencils. In frozen mode the Roe average and its wave structure are held
// at the baseline state and only the interface jumps are differentiated (the
// constant-coefficient analog); with freezing off everything but the
// entropy-fix width is differentiated, which is exactly what the tape sees
// for a first-order scheme.

namespace {

using euler::detail::Prim;

struct RoeFrozen {
  double ux = 0, uy = 0, area = 0;
  double l1 = 0, l2 = 0, l3 = 0;
  double ru = 0, rv = 0, rh = 0, rc = 0, rc2 = 0, rrho = 0, rvn = 0, rq2 = 0;
  double delta = 0;
};

double total_h(const Prim<double>& w, double gamma) {
  return gamma / (gamma - 1.0) * w.p / w.rho + 0.5 * (w.u * w.u + w.v * w.v);
}

RoeFrozen roe_coeffs(const Prim<double>& L, const Prim<double>& R, double nx,
                     double ny, double gamma, double efix) {
  RoeFrozen z;
  z.area = std::sqrt(nx * nx + ny * ny);
  z.ux = nx / z.area;
  z.uy = ny / z.area;
  const double hL = total_h(L, gamma), hR = total_h(R, gamma);
  const double srL = std::sqrt(L.rho), srR = std::sqrt(R.rho);
  const double inv = 1.0 / (srL + srR);
  z.ru = (srL * L.u + srR * R.u) * inv;
  z.rv = (srL * L.v + srR * R.v) * inv;
  z.rh = (srL * hL + srR * hR) * inv;
  z.rq2 = z.ru * z.ru + z.rv * z.rv;
  z.rc2 = (gamma - 1.0) * (z.rh - 0.5 * z.rq2);
  z.rc = std::sqrt(z.rc2);
  z.rvn = z.ru * z.ux + z.rv * z.uy;
  z.rrho = srL * srR;
  z.delta = efix * z.rc;
  auto sab = [&](double x) { return std::sqrt(x * x + z.delta * z.delta); };
  z.l1 = sab(z.rvn - z.rc);
  z.l2 = sab(z.rvn);
  z.l3 = sab(z.rvn + z.rc);
  return z;
}

/// First-order Roe flux with a choice of coefficient treatment. The central
/// part is always evaluated live; `freeze` keeps the dissipation operator at
/// the baseline coefficients in `fz`. With freeze off the coefficients are
/// recomputed from L and R, except the entropy-fix width, which stays at its
/// recorded value to match the taped derivative semantics.
void hd_flux(const Prim<double>& L, const Prim<double>& R, const RoeFrozen& fz,
             bool freeze, double gamma, double f[4]) {
  const double ux = fz.ux, uy = fz.uy, area = fz.area;
  const double vnL = L.u * ux + L.v * uy;
  const double vnR = R.u * ux + R.v * uy;
  const double hL = total_h(L, gamma), hR = total_h(R, gamma);

  RoeFrozen live;
  const RoeFrozen* c = &fz;
  if (!freeze) {
    live = fz;
    const double srL = std::sqrt(L.rho), srR = std::sqrt(R.rho);
    const double inv = 1.0 / (srL + srR);
    live.ru = (srL * L.u + srR * R.u) * inv;
    live.rv = (srL * L.v + srR * R.v) * inv;
    live.rh = (srL * hL + srR * hR) * inv;
    live.rq2 = live.ru * live.ru + live.rv * live.rv;
    live.rc2 = (gamma - 1.0) * (live.rh - 0.5 * live.rq2);
    live.rc = std::sqrt(live.rc2);
    live.rvn = live.ru * ux + live.rv * uy;
    live.rrho = srL * srR;
    auto sab = [&](double x) { return std::sqrt(x * x + fz.delta * fz.delta); };
    live.l1 = sab(live.rvn - live.rc);
    live.l2 = sab(live.rvn);
    live.l3 = sab(live.rvn + live.rc);
    c = &live;
  }

  const double drho = R.rho - L.rho;
  const double du = R.u - L.u;
  const double dv = R.v - L.v;
  const double dp = R.p - L.p;
  const double dvn = du * ux + dv * uy;

  const double a1 = (dp - c->rrho * c->rc * dvn) / (2.0 * c->rc2);
  const double a3 = (dp + c->rrho * c->rc * dvn) / (2.0 * c->rc2);
  const double a2 = drho - dp / c->rc2;

  double diss[4];
  diss[0] = c->l1 * a1 + c->l2 * a2 + c->l3 * a3;
  diss[1] = c->l1 * a1 * (c->ru - c->rc * ux) +
            c->l2 * (a2 * c->ru + c->rrho * (du - dvn * ux)) +
            c->l3 * a3 * (c->ru + c->rc * ux);
  diss[2] = c->l1 * a1 * (c->rv - c->rc * uy) +
            c->l2 * (a2 * c->rv + c->rrho * (dv - dvn * uy)) +
            c->l3 * a3 * (c->rv + c->rc * uy);
  diss[3] = c->l1 * a1 * (c->rh - c->rc * c->rvn) +
            c->l2 * (a2 * 0.5 * c->rq2 +
                     c->rrho * (c->ru * du + c->rv * dv - c->rvn * dvn)) +
            c->l3 * a3 * (c->rh + c->rc * c->rvn);

  const double fmL = L.rho * vnL, fmR = R.rho * vnR;
  f[0] = 0.5 * (area * (fmL + fmR) - area * diss[0]);
  f[1] = 0.5 * (area * (fmL * L.u + fmR * R.u + (L.p + R.p) * ux) - area * diss[1]);
  f[2] = 0.5 * (area * (fmL * L.v + fmR * R.v + (L.p + R.p) * uy) - area * diss[2]);
  f[3] = 0.5 * (area * (fmL * hL + fmR * hR) - area * diss[3]);
}

Prim<double> prim_of(const double u[4], double gamma) {
  Prim<double> w;
  w.rho = u[0];
  w.u = u[1] / u[0];
  w.v = u[2] / u[0];
  w.p = (gamma - 1.0) * (u[3] - 0.5 * (u[1] * w.u + u[2] * w.v));
  return w;
}

/// Sparse Jacobian of the first-order residual, stored face-wise: the face
/// flux contributes +f to cell cl and -f to cell cr (either may be absent on
/// a boundary).
struct FaceBlock {
  std::int32_t cl = -1, cr = -1;
  double dL[4][4] = {};  // df/dU[cl]
  double dR[4][4] = {};  // df/dU[cr]
};

struct HdJacobian {
  std::vector<FaceBlock> faces;
  std::size_t ncells = 0;

  /// out += A^T w, accumulated face by face.
  void add_transpose_product(const std::vector<double>& w,
                             std::vector<double>& out) const {
    for (const FaceBlock& b : faces) {
      double s[4];
      for (int k = 0; k < 4; ++k) {
        double v = 0.0;
        if (b.cl >= 0) v += w[4 * b.cl + k];
        if (b.cr >= 0) v -= w[4 * b.cr + k];
        s[k] = v;
      }
      if (b.cl >= 0)
        for (int mcol = 0; mcol < 4; ++mcol) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += b.dL[k][mcol] * s[k];
          out[4 * b.cl + mcol] += acc;
        }
      if (b.cr >= 0)
        for (int mcol = 0; mcol < 4; ++mcol) {
          double acc = 0.0;
          for (int k = 0; k < 4; ++k) acc += b.dR[k][mcol] * s[k];
          out[4 * b.cr + mcol] += acc;
        }
    }
  }
};

/// Assemble by one-sided FD of the face flux over the conservative inputs.
HdJacobian assemble_hd_jacobian(const euler::FlowConfig& cfg,
                                const grid::StructuredGrid& g,
                                const grid::CellMetrics& m,
                                const euler::State4<double>& U,
                                const AdjointConfig& acfg) {
  const std::size_t ni = g.ni, nj = g.nj;
  const std::size_t nci = ni - 1, ncj = nj - 1;
  const double gamma = cfg.gamma;
  HdJacobian jac;
  jac.ncells = nci * ncj;
  jac.faces.reserve(ni * ncj + nci * nj);

  euler::BcValues<double> bc;
  bc.p01 = cfg.p01;
  bc.t01 = cfg.t01;
  bc.p_exit = cfg.p_exit;
  bc.angle_rad = cfg.inlet_angle_rad();

  auto cons_of = [&](std::size_t c, double u[4]) {
    u[0] = U.rho[c];
    u[1] = U.mx[c];
    u[2] = U.my[c];
    u[3] = U.e[c];
  };
  auto step_of = [&](double v) {
    return acfg.fd_step * std::max(std::abs(v), 1e-3);
  };

  // d(flux)/d(cons of one cell) by one-sided differences; eval must map the
  // 4-vector of that cell to the 4 flux components.
  auto fd_block = [&](const double base[4], auto&& eval, double out[4][4]) {
    double f0[4];
    eval(base, f0);
    double up[4];
    for (int comp = 0; comp < 4; ++comp) {
      std::memcpy(up, base, sizeof(up));
      const double h = step_of(base[comp]);
      up[comp] += h;
      double fp[4];
      eval(up, fp);
      for (int k = 0; k < 4; ++k) out[k][comp] = (fp[k] - f0[k]) / h;
    }
  };

  // i-faces.
  for (std::size_t j = 0; j < ncj; ++j) {
    for (std::size_t I = 0; I <= nci; ++I) {
      const double nx = m.iface_nx[j * ni + I];
      const double ny = m.iface_ny[j * ni + I];
      FaceBlock b;
      if (I == 0) {
        const std::size_t c0 = j * nci;
        b.cr = std::int32_t(c0);  // residual takes -f at the inlet cell
        double u0[4];
        cons_of(c0, u0);
        const Prim<double> wi0 = prim_of(u0, gamma);
        const Prim<double> wb0 = euler::detail::inlet_state(wi0, bc, gamma);
        const RoeFrozen fz = roe_coeffs(wb0, wi0, nx, ny, gamma, cfg.entropy_fix);
        fd_block(u0,
                 [&](const double u[4], double f[4]) {
                   const Prim<double> wi = prim_of(u, gamma);
                   const Prim<double> wb = euler::detail::inlet_state(wi, bc, gamma);
                   hd_flux(wb, wi, fz, acfg.freeze_dissipation, gamma, f);
                 },
                 b.dR);
      } else if (I == nci) {
        const std::size_t cl = j * nci + nci - 1;
        b.cl = std::int32_t(cl);
        double u0[4];
        cons_of(cl, u0);
        const Prim<double> wi0 = prim_of(u0, gamma);
        const Prim<double> wb0 = euler::detail::outlet_state(wi0, bc);
        const RoeFrozen fz = roe_coeffs(wi0, wb0, nx, ny, gamma, cfg.entropy_fix);
        fd_block(u0,
                 [&](const double u[4], double f[4]) {
                   const Prim<double> wi = prim_of(u, gamma);
                   const Prim<double> wb = euler::detail::outlet_state(wi, bc);
                   hd_flux(wi, wb, fz, acfg.freeze_dissipation, gamma, f);
                 },
                 b.dL);
      } else {
        const std::size_t cl = j * nci + I - 1, cr = j * nci + I;
        b.cl = std::int32_t(cl);
        b.cr = std::int32_t(cr);
        double ul[4], ur[4];
        cons_of(cl, ul);
        cons_of(cr, ur);
        const RoeFrozen fz = roe_coeffs(prim_of(ul, gamma), prim_of(ur, gamma),
                                        nx, ny, gamma, cfg.entropy_fix);
        fd_block(ul,
                 [&](const double u[4], double f[4]) {
                   hd_flux(prim_of(u, gamma), prim_of(ur, gamma), fz,
                           acfg.freeze_dissipation, gamma, f);
                 },
                 b.dL);
        fd_block(ur,
                 [&](const double u[4], double f[4]) {
                   hd_flux(prim_of(ul, gamma), prim_of(u, gamma), fz,
                           acfg.freeze_dissipation, gamma, f);
                 },
                 b.dR);
      }
      jac.faces.push_back(b);
    }
  }

  // j-faces; walls carry the pressure flux only.
  for (std::size_t J = 0; J <= ncj; ++J) {
    for (std::size_t i = 0; i < nci; ++i) {
      const double nx = m.jface_nx[J * nci + i];
      const double ny = m.jface_ny[J * nci + i];
      FaceBlock b;
      auto wall_eval = [&](const double u[4], double f[4]) {
        const Prim<double> w = prim_of(u, gamma);
        f[0] = 0.0;
        f[1] = w.p * nx;
        f[2] = w.p * ny;
        f[3] = 0.0;
      };
      if (J == 0) {
        const std::size_t c = i;
        b.cr = std::int32_t(c);
        double u0[4];
        cons_of(c, u0);
        fd_block(u0, wall_eval, b.dR);
      } else if (J == ncj) {
        const std::size_t c = (ncj - 1) * nci + i;
        b.cl = std::int32_t(c);
        double u0[4];
        cons_of(c, u0);
        fd_block(u0, wall_eval, b.dL);
      } else {
        const std::size_t cl = (J - 1) * nci + i, cr = J * nci + i;
        b.cl = std::int32_t(cl);
        b.cr = std::int32_t(cr);
        double ul[4], ur[4];
        cons_of(cl, ul);
        cons_of(cr, ur);
        const RoeFrozen fz = roe_coeffs(prim_of(ul, gamma), prim_of(ur, gamma),
                                        nx, ny, gamma, cfg.entropy_fix);
        fd_block(ul,
                 [&](const double u[4], double f[4]) {
                   hd_flux(prim_of(u, gamma), prim_of(ur, gamma), fz,
                           acfg.freeze_dissipation, gamma, f);
                 },
                 b.dL);
        fd_block(ur,
                 [&](const double u[4], double f[4]) {
                   hd_flux(prim_of(ul, gamma), prim_of(u, gamma), fz,
                           acfg.freeze_dissipation, gamma, f);
                 },
                 b.dR);
      }
      jac.faces.push_back(b);
    }
  }
  return jac;
}

double objective_eval(const euler::FlowConfig& cfg, std::size_t ni,
                      std::size_t nj, const euler::FaceGeometry<double>& fg,
                      const euler::BcValues<double>& bc,
                      const euler::State4<double>& U, ObjectiveId obj) {
  return obj == ObjectiveId::MassFlow
             ? euler::objective_mass_flow(cfg, ni, nj, fg, bc, U)
             : euler::objective_pressure_loss(cfg, ni, nj, fg, bc, U);
}

/// dJ/dU by one-sided FD over every cell component. The objectives only read
/// the boundary columns, but differencing everything keeps this correct for
/// any functional of the state.
euler::State4<double> objective_grad_fd(const euler::FlowConfig& cfg,
                                        std::size_t ni, std::size_t nj,
                                        const euler::FaceGeometry<double>& fg,
                                        const euler::BcValues<double>& bc,
                                        const euler::State4<double>& U,
                                        ObjectiveId obj,
                                        const AdjointConfig& acfg) {
  const double j0 = objective_eval(cfg, ni, nj, fg, bc, U, obj);
  euler::State4<double> grad;
  grad.resize(U.size());
  euler::State4<double> Up = U;
  auto diff = [&](std::vector<double>& field, std::vector<double>& gfield) {
    for (std::size_t c = 0; c < field.size(); ++c) {
      const double save = field[c];
      const double h = acfg.fd_step * std::max(std::abs(save), 1e-3);
      field[c] = save + h;
      gfield[c] = (objective_eval(cfg, ni, nj, fg, bc, Up, obj) - j0) / h;
      field[c] = save;
    }
  };
  diff(Up.rho, grad.rho);
  diff(Up.mx, grad.mx);
  diff(Up.my, grad.my);
  diff(Up.e, grad.e);
  return grad;
}

}  // namespace

AdjointSolution solve_adjoint_hd(const euler::FlowConfig& cfg,
                                 const grid::StructuredGrid& g,
                                 const grid::CellMetrics& m,
                                 const euler::FlowSolution& primal,
                                 ObjectiveId objective,
                                 const AdjointConfig& acfg) {
  if (!primal.converged)
    throw PrimalNotConvergedError("adjoint requested on an unconverged primal");
  cfg.validate();
  validate_acfg(acfg);
  const std::size_t ni = g.ni, nj = g.nj;
  const std::size_t ncells = (ni - 1) * (nj - 1);
  if (primal.state.size() != ncells)
    throw DimensionMismatchError("primal state does not match the grid");

  const euler::FaceGeometry<double> fg = euler::face_geometry(m);
  euler::BcValues<double> bc;
  bc.p01 = cfg.p01;
  bc.t01 = cfg.t01;
  bc.p_exit = cfg.p_exit;
  bc.angle_rad = cfg.inlet_angle_rad();

  const HdJacobian jac = assemble_hd_jacobian(cfg, g, m, primal.state, acfg);
  const std::vector<double> dt =
      euler::local_time_steps(cfg, ni, nj, fg, m, primal.state, cfg.cfl);
  std::vector<double> dov(ncells);  // dt over volume, the frozen diagonal
  for (std::size_t c = 0; c < ncells; ++c) dov[c] = dt[c] / m.volume[c];

  const euler::State4<double> jbar =
      objective_grad_fd(cfg, ni, nj, fg, bc, primal.state, objective, acfg);

  AdjointSolution sol;
  sol.objective_id = objective;
  sol.variant = Variant::HD;
  sol.objective_value = objective_eval(cfg, ni, nj, fg, bc, primal.state, objective);
  sol.lambda.resize(ncells);
  sol.residual_history.reserve(256);

  // Flat [cell*4 + comp] work vectors for the face-wise transpose products.
  const std::size_t n4 = 4 * ncells;
  std::vector<double> lam(n4, 0.0), ubar(n4), cur(n4), tmp(n4), nxt(n4);
  std::vector<double> jflat(n4);
  for (std::size_t c = 0; c < ncells; ++c) {
    jflat[4 * c + 0] = jbar.rho[c];
    jflat[4 * c + 1] = jbar.mx[c];
    jflat[4 * c + 2] = jbar.my[c];
    jflat[4 * c + 3] = jbar.e[c];
  }

  double target = acfg.abs_target;
  bool measured = false;
  for (int it = 0; it < acfg.max_iters; ++it) {
    // Transpose of the four-stage step: the stage chain unwinds with the
    // coefficients in reverse order, each step one A^T (dt/V .) product.
    ubar = lam;
    cur = lam;
    for (int k = 3; k >= 0; --k) {
      const double alpha = euler::kRkAlpha[k];
      for (std::size_t c = 0; c < ncells; ++c) {
        const double s = alpha * dov[c];
        for (int comp = 0; comp < 4; ++comp) tmp[4 * c + comp] = s * cur[4 * c + comp];
      }
      std::fill(nxt.begin(), nxt.end(), 0.0);
      jac.add_transpose_product(tmp, nxt);
      for (std::size_t q = 0; q < n4; ++q) cur[q] = -nxt[q];
      for (std::size_t q = 0; q < n4; ++q) ubar[q] += cur[q];
    }

    double inc = 0.0;
    for (std::size_t q = 0; q < n4; ++q) {
      const double next = ubar[q] + jflat[q];
      inc += std::abs(next - lam[q]);
      lam[q] = next;
    }
    if (!std::isfinite(inc))
      throw AdjointNotConvergedError(
          "hand-differenced adjoint diverged at iteration " +
          std::to_string(it + 1));
    sol.residual_history.push_back(inc);
    sol.iterations_used = it + 1;
    if (!measured) {
      measured = true;
      if (inc == 0.0) {
        sol.converged = true;
        break;
      }
      if (!(acfg.abs_target > 0.0))
        target = inc * std::pow(10.0, -acfg.drop_orders);
    }
    if (inc <= target) {
      sol.converged = true;
      break;
    }
    // Stagnation: the trailing window stopped improving on the one before.
    const int w = acfg.stagnation_window;
    const int n = int(sol.residual_history.size());
    if (n >= 2 * w && n % w == 0) {
      const auto lo = sol.residual_history.begin();
      const double recent = *std::min_element(lo + (n - w), lo + n);
      const double before = *std::min_element(lo + (n - 2 * w), lo + (n - w));
      if (recent >= acfg.stagnation_factor * before) {
        sol.stagnated = true;
        break;
      }
    }
  }

  for (std::size_t c = 0; c < ncells; ++c) {
    sol.lambda.rho[c] = lam[4 * c + 0];
    sol.lambda.mx[c] = lam[4 * c + 1];
    sol.lambda.my[c] = lam[4 * c + 2];
    sol.lambda.e[c] = lam[4 * c + 3];
  }
  return sol;
}

SensitivityField mesh_sensitivities(TapedStep& step, const AdjointSolution& adj) {
  if (adj.variant == Variant::AD && !adj.converged)
    throw AdjointNotConvergedError(
        "mesh sensitivities need a converged adjoint (hand-differenced "
        "solutions are accepted with their reported status)");
  const auto& pb = step.pull_back(adj.lambda, adj.objective_id, 1.0);
  SensitivityField f;
  f.dJ_dx = pb.coord_x;
  f.dJ_dy = pb.coord_y;
  f.dJ_dp_exit = pb.p_exit;
  f.dJ_dp01 = pb.p01;
  f.dJ_dt01 = pb.t01;
  return f;
}

SurfaceSensitivity surface_sensitivities(const SensitivityField& field,
                                         const grid::StructuredGrid& g,
                                         const morph::MorphOperator* smoother) {
  if (field.dJ_dx.size() != g.num_nodes() || field.dJ_dy.size() != g.num_nodes())
    throw DimensionMismatchError("sensitivity field does not match the grid");
  SurfaceSensitivity s;
  if (smoother != nullptr) {
    s.gx = smoother->transpose(field.dJ_dx);
    s.gy = smoother->transpose(field.dJ_dy);
  } else {
    s.gx.reserve(g.num_surface_nodes());
    s.gy.reserve(g.num_surface_nodes());
    for (std::size_t i = g.surf_begin; i <= g.surf_end; ++i) {
      s.gx.push_back(field.dJ_dx[g.node(i, 0)]);
      s.gy.push_back(field.dJ_dy[g.node(i, 0)]);
    }
  }
  const geometry::SurfacePolyline poly = g.surface_polyline();
  if (poly.size() != s.gx.size())
    throw DimensionMismatchError("surface polyline does not match the operator");
  s.g_normal.resize(s.gx.size());
  for (std::size_t k = 0; k < s.gx.size(); ++k)
    s.g_normal[k] = s.gx[k] * poly.normals[k].x + s.gy[k] * poly.normals[k].y;
  s.arc_fraction = g.surface_arc_fraction;
  return s;
}

double predict_delta(const SurfaceSensitivity& g,
                     const morph::DeformationField& d) {
  if (g.gx.size() != d.size())
    throw DimensionMismatchError(
        "sensitivity map has " + std::to_string(g.gx.size()) +
        " surface nodes, deformation has " + std::to_string(d.size()));
  double s = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k)
    s += g.gx[k] * d.dx[k] + g.gy[k] * d.dy[k];
  return s;
}

double deviation_pct(double df_nonlinear, double df_adjoint,
                     double objective_scale) {
  if (!(std::abs(df_nonlinear) > 1e-14 * std::abs(objective_scale)))
    throw DegenerateBaselineDeltaError(
        "nonlinear delta " + std::to_string(df_nonlinear) +
        " is below the noise cutoff for objective scale " +
        std::to_string(objective_scale));
  return (df_nonlinear - df_adjoint) / df_nonlinear * 100.0;
}

}  // namespace mvi::adjoint
