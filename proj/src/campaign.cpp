#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <optional>
#include <thread>

#include "mvi/errors.hpp"
#include "mvi/stats.hpp"
#include "mvi/toolchain.hpp"
#include "toolchain_internal.hpp"

// The validation campaign and the cost benchmark. Both run the same
// per-sample pipeline: build a surface deformation, morph the baseline mesh,
// re-solve the flow warm from the baseline state, and compare the measured
// objective deltas against the linear adjoint predictions.

namespace mvi::toolchain {

using detail::ojson;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

const double kNan = std::numeric_limits<double>::quiet_NaN();

struct SampleSpec {
  int id = 0;
  std::string label;
  double xi = 0.0;  // parametric suite only; 0 marks a scan sample
  morph::DeformationField d;
  bool clamp = false;
};

// Deformation of one CAD variation: the varied profile minus the baseline,
// sampled at the shared surface nodes. Never clamped; stagger rotations move
// the bump ends and clamping would erase exactly the displacement under test.
morph::DeformationField variation_deformation(const RunConfig& cfg,
                                              const geometry::SurfacePolyline& base,
                                              const geometry::VariationSpec& spec) {
  const geometry::BladeParams varied = geometry::apply_variation(cfg.blade, spec);
  const geometry::SurfacePolyline target =
      geometry::generate_profile(varied, base.size());
  morph::DeformationField d;
  d.dx.resize(base.size());
  d.dy.resize(base.size());
  for (std::size_t k = 0; k < base.size(); ++k) {
    d.dx[k] = target.points[k].x - base.points[k].x;
    d.dy[k] = target.points[k].y - base.points[k].y;
  }
  return d;
}

// Deformation measured from one synthetic scan: synthesize, intersect node
// normals, map back onto the same nodes.
morph::DeformationField scan_deformation(const RunConfig& cfg,
                                         const geometry::SurfacePolyline& surface,
                                         int sample_id) {
  mva::PerturbationModel model = cfg.perturbation;
  model.seed = cfg.perturbation.seed + static_cast<std::uint64_t>(sample_id);
  const mva::ScanSurface scan = mva::synthesize_scan(surface, model);
  const mva::DeviationResult dev = mva::deviation_analysis(surface, scan);
  std::vector<double> arcs(surface.arc_fraction.begin(),
                           surface.arc_fraction.end());
  mva::MappedDeviations mapped = mva::map_deviations(dev.deviation, arcs, surface);
  mapped.field.clamp_lo = cfg.campaign.clamp_lo;
  mapped.field.clamp_hi = cfg.campaign.clamp_hi;
  return mapped.field;
}

struct PipelineContext {
  const Baseline& base;
  const std::vector<SurfaceMap>& maps;
  double abs_target = 0.0;  // re-solve depth: the baseline's converged level
  std::string fd_mode;
  int inject_failure = -1;
};

// Morph + re-solve both objectives on the deformed mesh. Warm start from the
// baseline state; a cold ramped start is retried once before giving up.
std::pair<double, double> resolve_objectives(const PipelineContext& ctx,
                                             const morph::DeformationField& d,
                                             int* iters_out) {
  const grid::StructuredGrid morphed = morph::morph_mesh(ctx.base.grid, d);
  const grid::CellMetrics metrics = grid::compute_metrics(morphed);
  euler::FlowConfig fcfg = ctx.base.cfg.flow;
  fcfg.abs_target = ctx.abs_target;
  fcfg.drop_orders = 0.0;
  euler::FlowSolution sol;
  try {
    sol = euler::solve_flow(fcfg, morphed, metrics, &ctx.base.primal.state);
  } catch (const Error&) {
    sol = euler::solve_flow(fcfg, morphed, metrics);  // cold, ramps active
  }
  if (iters_out) *iters_out += sol.iterations_used;
  return measure_objectives(ctx.base.cfg.flow, morphed, metrics, sol.state);
}

std::vector<SampleOutcome> run_sample(const PipelineContext& ctx,
                                      const SampleSpec& spec) {
  const RunConfig& cfg = ctx.base.cfg;
  std::vector<SampleOutcome> rows;
  auto blank_row = [&](adjoint::ObjectiveId o, adjoint::Variant v) {
    SampleOutcome r;
    r.sample_id = spec.id;
    r.label = spec.label;
    r.objective = adjoint::to_string(o);
    r.variant = adjoint::to_string(v);
    r.f_baseline = objective_value(ctx.base, o);
    r.df_adjoint = r.df_nonlinear = r.deviation_pct = kNan;
    r.max_disp = kNan;
    return r;
  };
  auto fail_all = [&](const std::string& status, const std::string& why,
                      double max_disp) {
    rows.clear();
    for (adjoint::ObjectiveId o : cfg.campaign.objectives)
      for (adjoint::Variant v : cfg.campaign.variants) {
        SampleOutcome r = blank_row(o, v);
        r.status = status;
        r.detail = why;
        r.max_disp = max_disp;
        rows.push_back(std::move(r));
      }
  };

  morph::DeformationField d =
      spec.clamp ? morph::clamp(spec.d, ctx.base.grid) : spec.d;
  const double max_disp = d.max_abs();
  int iters = 0;

  try {
    if (spec.id == ctx.inject_failure)
      throw Error("injected failure (test hook)");
    auto [jp_mass, jp_loss] = resolve_objectives(ctx, d, &iters);
    double df_mass = jp_mass - ctx.base.j_mass;
    double df_loss = jp_loss - ctx.base.j_loss;
    if (ctx.fd_mode == "central") {
      morph::DeformationField neg = d;
      for (double& v : neg.dx) v = -v;
      for (double& v : neg.dy) v = -v;
      auto [jm_mass, jm_loss] = resolve_objectives(ctx, neg, &iters);
      df_mass = 0.5 * (jp_mass - jm_mass);
      df_loss = 0.5 * (jp_loss - jm_loss);
    }

    for (adjoint::ObjectiveId o : cfg.campaign.objectives) {
      const double df_nl =
          o == adjoint::ObjectiveId::MassFlow ? df_mass : df_loss;
      for (adjoint::Variant v : cfg.campaign.variants) {
        SampleOutcome r = blank_row(o, v);
        r.max_disp = max_disp;
        r.resolve_iters = iters;
        r.df_nonlinear = df_nl;
        for (const SurfaceMap& map : ctx.maps)
          if (map.objective == o && map.variant == v)
            r.df_adjoint = adjoint::predict_delta(map.g, d);
        try {
          r.deviation_pct = adjoint::deviation_pct(
              df_nl, r.df_adjoint, std::abs(objective_value(ctx.base, o)));
          r.status = "ok";
        } catch (const DegenerateBaselineDeltaError& e) {
          r.status = "excluded_degenerate";
          r.deviation_pct = kNan;
          r.detail = e.what();
        }
        rows.push_back(std::move(r));
      }
    }
  } catch (const NegativeVolumeError& e) {
    fail_all("failed_morph", e.what(), max_disp);
  } catch (const Error& e) {
    fail_all("failed_solve", e.what(), max_disp);
  }
  return rows;
}

// Maps come from disk when a prior adjoint command left them; anything
// missing for the requested objective x variant set is solved now (one
// shared tape) and persisted for the next command.
std::vector<SurfaceMap> load_or_compute_maps(const Baseline& base) {
  std::vector<SurfaceMap> maps;
  std::vector<std::pair<adjoint::ObjectiveId, adjoint::Variant>> missing;
  for (adjoint::ObjectiveId o : base.cfg.campaign.objectives)
    for (adjoint::Variant v : base.cfg.campaign.variants) {
      try {
        maps.push_back(read_surface_map(base.paths, o, v, base.mesh_hash));
      } catch (const ConfigError&) {
        missing.emplace_back(o, v);
      }
    }
  if (!missing.empty()) {
    // One compute pass per variant set keeps the tape shared.
    std::vector<adjoint::ObjectiveId> objs;
    std::vector<adjoint::Variant> vars;
    for (auto [o, v] : missing) {
      if (std::find(objs.begin(), objs.end(), o) == objs.end())
        objs.push_back(o);
      if (std::find(vars.begin(), vars.end(), v) == vars.end())
        vars.push_back(v);
    }
    for (SurfaceMap& m : compute_adjoint_maps(base, objs, vars)) {
      const bool have =
          std::any_of(maps.begin(), maps.end(), [&](const SurfaceMap& x) {
            return x.objective == m.objective && x.variant == m.variant;
          });
      if (!have) maps.push_back(std::move(m));
    }
  }
  return maps;
}

ojson group_statistics(const std::vector<SampleOutcome>& rows,
                       const std::string& objective,
                       const std::string& variant,
                       const std::vector<double>& xi_by_sample) {
  std::vector<double> devs, devs_near, df_nl, df_adj;
  int excluded = 0, failed = 0;
  for (const SampleOutcome& r : rows) {
    if (r.objective != objective || r.variant != variant) continue;
    if (r.status == "ok") {
      devs.push_back(r.deviation_pct);
      df_nl.push_back(r.df_nonlinear);
      df_adj.push_back(r.df_adjoint);
      if (!xi_by_sample.empty()) {
        const double xi = xi_by_sample[static_cast<std::size_t>(r.sample_id)];
        if (std::abs(xi - 1.0) < 0.021) devs_near.push_back(r.deviation_pct);
      }
    } else if (r.status == "excluded_degenerate") {
      ++excluded;
    } else {
      ++failed;
    }
  }
  ojson out = {{"n_ok", devs.size()},
               {"n_excluded", excluded},
               {"n_failed", failed}};
  if (!devs.empty()) {
    std::vector<double> abs_devs = devs;
    for (double& v : abs_devs) v = std::abs(v);
    out["median_abs_dev_pct"] = stats::median(abs_devs);
    out["mean_dev_pct"] = stats::mean(devs);
    out["max_abs_dev_pct"] = stats::max_abs(devs);
    std::size_t within = 0;
    for (double v : abs_devs)
      if (v <= 10.0) ++within;
    out["frac_within_10pct"] =
        static_cast<double>(within) / static_cast<double>(devs.size());
    if (!devs_near.empty()) {
      std::vector<double> near_abs = devs_near;
      for (double& v : near_abs) v = std::abs(v);
      out["max_abs_dev_pct_near_nominal"] = stats::max_abs(near_abs);
    }
    if (devs.size() >= 2) {
      try {
        const stats::LinearFit fit = stats::least_squares(df_nl, df_adj);
        out["slope"] = fit.slope;
        out["intercept"] = fit.intercept;
        out["r2"] = fit.r2;
      } catch (const ConfigError&) {
        // degenerate x variance: leave the fit fields out
      }
    }
  }
  return out;
}

}  // namespace

int cmd_validate(const std::filesystem::path& run_dir,
                 const ValidateOptions& opt) {
  if (opt.suite != "scan" && opt.suite != "parametric")
    throw ConfigError("unknown suite \"" + opt.suite +
                      "\" (expected scan or parametric)");
  const double t_start = now_s();
  Baseline base = ensure_baseline(run_dir);
  const RunConfig& cfg = base.cfg;
  const std::vector<SurfaceMap> maps = load_or_compute_maps(base);
  const geometry::SurfacePolyline surface = base.grid.surface_polyline();

  PipelineContext ctx{base, maps, std::max(base.primal.l1_final, 1e-300),
                      cfg.campaign.fd_mode, opt.inject_failure};

  const bool clamp = opt.suite == "parametric"
                         ? false
                         : (opt.clamp_override < 0 ? cfg.campaign.clamp
                                                   : opt.clamp_override > 0);
  std::vector<SampleSpec> specs;
  std::vector<double> xi_by_sample;
  if (opt.suite == "parametric") {
    const auto suite = geometry::variation_suite();
    for (std::size_t k = 0; k < suite.size(); ++k) {
      SampleSpec s;
      s.id = static_cast<int>(k);
      s.label = suite[k].label();
      s.xi = suite[k].xi;
      s.d = variation_deformation(cfg, surface, suite[k]);
      s.clamp = false;
      specs.push_back(std::move(s));
      xi_by_sample.push_back(suite[k].xi);
    }
  } else {
    const int n = opt.samples > 0 ? opt.samples : cfg.campaign.samples;
    for (int k = 0; k < n; ++k) {
      SampleSpec s;
      s.id = k;
      s.label = "seed-" + std::to_string(cfg.perturbation.seed +
                                         static_cast<std::uint64_t>(k));
      s.d = scan_deformation(cfg, surface, k);
      s.clamp = clamp;
      specs.push_back(std::move(s));
    }
  }

  // Per-sample worker pool. Records land indexed by sample id, so the output
  // order never depends on completion order.
  const int hw = static_cast<int>(std::thread::hardware_concurrency());
  int workers = cfg.campaign.workers == 0 ? std::max(1, hw)
                                          : cfg.campaign.workers;
  workers = std::min<int>(workers, static_cast<int>(specs.size()));
  std::vector<std::vector<SampleOutcome>> results(specs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex io_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= specs.size()) return;
      results[k] = run_sample(ctx, specs[k]);
      const std::size_t d = done.fetch_add(1) + 1;
      std::lock_guard<std::mutex> lock(io_mutex);
      std::fprintf(stderr, "[%zu/%zu] %s: %s\n", d, specs.size(),
                   specs[k].label.c_str(), results[k].front().status.c_str());
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();

  std::vector<SampleOutcome> rows;
  for (auto& r : results)
    for (auto& row : r) rows.push_back(std::move(row));
  write_records_csv(base.paths.records(), rows);

  std::size_t ok = 0, excluded = 0, failed_rows = 0;
  for (const SampleOutcome& r : rows) {
    if (r.status == "ok")
      ++ok;
    else if (r.status == "excluded_degenerate")
      ++excluded;
    else
      ++failed_rows;
  }

  ojson groups = ojson::object();
  for (adjoint::ObjectiveId o : cfg.campaign.objectives)
    for (adjoint::Variant v : cfg.campaign.variants) {
      const std::string key =
          adjoint::to_string(o) + "_" + adjoint::to_string(v);
      groups[key] = group_statistics(rows, adjoint::to_string(o),
                                     adjoint::to_string(v), xi_by_sample);
    }
  ojson section = {{"suite", opt.suite},
                   {"samples", specs.size()},
                   {"clamp", clamp},
                   {"fd_mode", cfg.campaign.fd_mode},
                   {"workers", workers},
                   {"rows_ok", ok},
                   {"rows_excluded", excluded},
                   {"rows_failed", failed_rows},
                   {"objectives", groups},
                   {"wall_s", now_s() - t_start}};
  detail::merge_summary(base.paths.summary(), "campaign_" + opt.suite, section);

  std::printf("campaign %s: %zu samples, %zu rows ok, %zu excluded, %zu "
              "failed (%.1f s)\n",
              opt.suite.c_str(), specs.size(), ok, excluded, failed_rows,
              now_s() - t_start);
  if (ok == 0) return kExitNumerical;
  if (excluded + failed_rows > 0) return kExitPartial;
  return kExitOk;
}

void cmd_bench(const std::filesystem::path& run_dir, const BenchOptions& opt) {
  auto [cfg, paths] = open_case(run_dir);
  if (!std::filesystem::exists(paths.baseline_mesh()))
    throw ConfigError("run is missing " + paths.baseline_mesh().string() +
                      "; create the case first");
  const grid::StructuredGrid g = grid::read_mesh(paths.baseline_mesh().string());
  const std::string mesh_hash = grid::file_hash(paths.baseline_mesh().string());
  const grid::CellMetrics metrics = grid::compute_metrics(g);

  // Cold primal, timed. The benchmark always re-solves: reusing a cached
  // solution would leave the headline ratio resting on an unmeasured cost.
  auto r0 = detail::resource_sample();
  double t0 = now_s();
  euler::FlowSolution primal = euler::solve_flow(cfg.flow, g, metrics);
  const double primal_wall = now_s() - t0;
  auto r1 = detail::resource_sample();
  const double primal_cpu = r1.cpu_s - r0.cpu_s;
  euler::write_solution(paths.baseline_solution(), g.ni, g.nj, primal.state,
                        mesh_hash);

  Baseline base;
  base.cfg = cfg;
  base.paths = paths;
  base.grid = g;
  base.metrics = metrics;
  base.mesh_hash = mesh_hash;
  base.primal = primal;
  base.stations = euler::station_averages(cfg.flow, g, metrics, primal.state);
  std::tie(base.j_mass, base.j_loss) =
      measure_objectives(cfg.flow, g, metrics, primal.state);
  detail::merge_summary(
      paths.summary(), "baseline",
      {{"mass_flow", base.j_mass},
       {"pressure_loss_y", base.j_loss},
       {"iterations", primal.iterations_used},
       {"l1_first", primal.l1_first},
       {"l1_final", primal.l1_final},
       {"mesh_hash", mesh_hash},
       {"stations",
        {{"p0_in", base.stations.p0_in},
         {"p0_out", base.stations.p0_out},
         {"p_static_out", base.stations.p_static_out},
         {"h0_in", base.stations.h0_in},
         {"h0_out", base.stations.h0_out},
         {"mdot_in", base.stations.mdot_in},
         {"mdot_out", base.stations.mdot_out}}}});

  t0 = now_s();
  adjoint::TapedStep step(cfg.flow, g, metrics, primal.state);
  const double tape_wall = now_s() - t0;
  const tape::TapeStats tstats = step.stats();
  auto r2 = detail::resource_sample();

  const morph::MorphOperator smoother(g);
  struct AdjointCost {
    std::string key;
    double wall = 0.0, cpu = 0.0;
    int iterations = 0;
    bool converged = false, stagnated = false;
  };
  std::vector<AdjointCost> adjoint_costs;
  double adjoint_wall_total = 0.0;
  for (adjoint::ObjectiveId o : cfg.campaign.objectives)
    for (adjoint::Variant v : cfg.campaign.variants) {
      auto ra = detail::resource_sample();
      t0 = now_s();
      adjoint::AdjointSolution sol =
          v == adjoint::Variant::AD
              ? adjoint::solve_adjoint_ad(step, o, cfg.adjoint)
              : adjoint::solve_adjoint_hd(cfg.flow, g, metrics, primal, o,
                                          cfg.adjoint);
      const adjoint::SensitivityField field =
          adjoint::mesh_sensitivities(step, sol);
      SurfaceMap map;
      map.objective = o;
      map.variant = v;
      map.g = adjoint::surface_sensitivities(field, g, &smoother);
      map.converged = sol.converged;
      map.stagnated = sol.stagnated;
      map.iterations = sol.iterations_used;
      map.objective_value = sol.objective_value;
      map.dJ_dp_exit = field.dJ_dp_exit;
      map.dJ_dp01 = field.dJ_dp01;
      map.dJ_dt01 = field.dJ_dt01;
      map.mesh_hash = mesh_hash;
      write_surface_map(paths, map);
      AdjointCost c;
      c.key = adjoint::to_string(o) + "_" + adjoint::to_string(v);
      c.wall = now_s() - t0;
      auto rb = detail::resource_sample();
      c.cpu = rb.cpu_s - ra.cpu_s;
      c.iterations = sol.iterations_used;
      c.converged = sol.converged;
      c.stagnated = sol.stagnated;
      adjoint_wall_total += c.wall;
      adjoint_costs.push_back(std::move(c));
    }
  auto r3 = detail::resource_sample();

  // Per-sample costs, serial so each number is clean.
  const std::vector<SurfaceMap> maps = load_or_compute_maps(base);
  const geometry::SurfacePolyline surface = g.surface_polyline();
  const int n = opt.samples > 0 ? opt.samples : cfg.campaign.samples;
  double morph_wall = 0.0, predict_wall = 0.0, resolve_wall = 0.0;
  long resolve_iters = 0;
  int failed = 0;
  for (int k = 0; k < n; ++k) {
    try {
      t0 = now_s();
      morph::DeformationField d = scan_deformation(cfg, surface, k);
      if (cfg.campaign.clamp) d = morph::clamp(d, g);
      const grid::StructuredGrid morphed = morph::morph_mesh(g, d);
      const grid::CellMetrics mm = grid::compute_metrics(morphed);
      morph_wall += now_s() - t0;

      t0 = now_s();
      for (const SurfaceMap& map : maps) {
        volatile double guard = adjoint::predict_delta(map.g, d);
        (void)guard;
      }
      predict_wall += now_s() - t0;

      // Cold: each sample priced as a standalone nonlinear case, fresh from
      // free-stream with full ramps. validate() warm-starts instead; its
      // per-sample wall time lives in the campaign summary for comparison.
      t0 = now_s();
      const euler::FlowSolution s = euler::solve_flow(cfg.flow, morphed, mm);
      resolve_wall += now_s() - t0;
      resolve_iters += s.iterations_used;
      auto [jm, jl] = measure_objectives(cfg.flow, morphed, mm, s.state);
      (void)jm;
      (void)jl;
    } catch (const Error&) {
      ++failed;
    }
  }

  // Adjoint route: one primal, one tape, one adjoint per objective, then a
  // dot product per sample. Nonlinear route: one standalone solve per sample.
  // Morphing is common to both routes and stays out of the ratio.
  const double batch_adjoint =
      primal_wall + tape_wall + adjoint_wall_total + predict_wall;
  const double batch_nonlinear = resolve_wall;
  const double ratio = batch_adjoint / batch_nonlinear;
  const double state_bytes = static_cast<double>(primal.state.size()) * 4 * 8;

  ojson adjoints = ojson::object();
  for (const AdjointCost& c : adjoint_costs)
    adjoints[c.key] = {{"wall_s", c.wall},
                       {"cpu_s", c.cpu},
                       {"iterations", c.iterations},
                       {"converged", c.converged},
                       {"stagnated", c.stagnated},
                       {"cpu_over_primal", c.cpu / primal_cpu}};
  ojson section = {
      {"samples", n},
      {"failed_samples", failed},
      {"primal", {{"wall_s", primal_wall},
                  {"cpu_s", primal_cpu},
                  {"iterations", primal.iterations_used},
                  {"max_rss_kb", r1.max_rss_kb}}},
      {"tape", {{"build_wall_s", tape_wall},
                {"records", tstats.records},
                {"bytes", tstats.bytes},
                {"bytes_over_state", static_cast<double>(tstats.bytes) /
                                         state_bytes},
                {"max_rss_kb", r2.max_rss_kb}}},
      {"adjoints", adjoints},
      {"max_rss_after_adjoints_kb", r3.max_rss_kb},
      {"rss_over_primal", static_cast<double>(r3.max_rss_kb) /
                              static_cast<double>(r1.max_rss_kb)},
      {"per_sample", {{"morph_wall_s", morph_wall / n},
                      {"predict_wall_s", predict_wall / n},
                      {"resolve_mode", "cold"},
                      {"resolve_wall_s", resolve_wall / n},
                      {"resolve_iters_mean",
                       static_cast<double>(resolve_iters) / n}}},
      {"batch_adjoint_wall_s", batch_adjoint},
      {"batch_nonlinear_wall_s", batch_nonlinear},
      {"batch_ratio", ratio}};
  detail::merge_summary(paths.summary(), "bench", section);

  std::printf("primal        %8.2f s wall, %8.2f s cpu, %d iters\n",
              primal_wall, primal_cpu, primal.iterations_used);
  std::printf("tape          %8.2f s build, %zu records, %.1f MB (%.1fx state)\n",
              tape_wall, tstats.records,
              static_cast<double>(tstats.bytes) / 1048576.0,
              static_cast<double>(tstats.bytes) / state_bytes);
  for (const AdjointCost& c : adjoint_costs)
    std::printf("adjoint %-18s %8.2f s wall, %6d iters, cpu/primal %.2f%s\n",
                c.key.c_str(), c.wall, c.iterations, c.cpu / primal_cpu,
                c.stagnated ? " [stagnated]" : "");
  std::printf(
      "samples: %d  morph %.2f s/sample, cold re-solve %.2f s/sample\n", n,
      morph_wall / n, resolve_wall / n);
  std::printf("batch adjoint   %8.2f s  (primal + tape + adjoints + predicts)\n",
              batch_adjoint);
  std::printf("batch nonlinear %8.2f s  (standalone re-solves)\n",
              batch_nonlinear);
  std::printf("batch ratio     %8.4f\n", ratio);
}

}  // namespace mvi::toolchain
