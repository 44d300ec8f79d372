// mvimpact: manufacturing-variation impact toolchain.
//
// Subcommands cover the full pipeline: create a case, solve the baseline
// flow, build adjoint sensitivity maps, synthesize or ingest surface scans,
// turn deviations into mesh morphs and objective predictions, run the
// validation campaign, and render reports. Exit codes: 0 success, 2 bad
// configuration or input, 3 numerical failure, 4 campaign finished with
// excluded samples.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mvi/errors.hpp"
#include "mvi/toolchain.hpp"

namespace fs = std::filesystem;
using namespace mvi;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

std::vector<adjoint::ObjectiveId> objective_list(const std::string& name) {
  if (name == "all")
    return {adjoint::ObjectiveId::MassFlow, adjoint::ObjectiveId::PressureLossY};
  return {toolchain::parse_objective(name)};
}

std::vector<adjoint::Variant> variant_list(const std::string& name) {
  if (name == "all") return {adjoint::Variant::AD, adjoint::Variant::HD};
  return {toolchain::parse_variant(name)};
}

// Deviations CSV -> displacement field on the baseline surface nodes.
morph::DeformationField field_from_deviations(const toolchain::Baseline& base,
                                              const std::string& csv,
                                              bool clamp) {
  auto [arcs, dev] = mva::read_deviations_csv(csv);
  const geometry::SurfacePolyline surface = base.grid.surface_polyline();
  mva::MappedDeviations mapped = mva::map_deviations(dev.deviation, arcs, surface);
  mapped.field.clamp_lo = base.cfg.campaign.clamp_lo;
  mapped.field.clamp_hi = base.cfg.campaign.clamp_hi;
  if (clamp) return morph::clamp(mapped.field, base.grid);
  return mapped.field;
}

int dispatch(const std::function<int()>& run) {
  try {
    return run();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return toolchain::kExitConfig;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return toolchain::kExitConfig;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return toolchain::kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"manufacturing-variation impact toolchain"};
  app.require_subcommand(1);

  // gen-case
  std::string gen_out, gen_config;
  bool gen_print = false;
  auto* gen = app.add_subcommand(
      "gen-case", "create a run directory with config, profile, and mesh");
  gen->add_option("--out", gen_out, "run directory (default runs/<timestamp>)");
  gen->add_option("--config", gen_config, "JSON config file (default: defaults)");
  gen->add_flag("--print-config", gen_print,
                "print the fully-populated config and exit");

  // common --run option per subcommand
  auto add_run = [](CLI::App* cmd, std::string& run) {
    cmd->add_option("--run", run, "run directory")->required();
  };

  std::string solve_run;
  bool solve_force = false;
  auto* solve = app.add_subcommand("solve", "solve the baseline flow");
  add_run(solve, solve_run);
  solve->add_flag("--force", solve_force, "re-solve even if a solution is cached");

  std::string adj_run, adj_obj = "all", adj_var = "ad";
  auto* adj = app.add_subcommand(
      "adjoint", "solve adjoints and write surface sensitivity maps");
  add_run(adj, adj_run);
  adj->add_option("--objective", adj_obj,
                  "mass_flow | pressure_loss_y | all (default all)");
  adj->add_option("--variant", adj_var, "ad | hd | all (default ad)");

  std::string scan_run, scan_format = "binary";
  int scan_count = 1;
  auto* scan = app.add_subcommand(
      "scan-gen", "synthesize measurement scans of the baseline surface");
  add_run(scan, scan_run);
  scan->add_option("--count", scan_count, "number of scans (default 1)");
  scan->add_option("--format", scan_format, "ascii | binary (default binary)");

  std::string dev_run, dev_scan, dev_out;
  auto* dev = app.add_subcommand(
      "deviate", "measure signed normal deviations of a scan STL");
  add_run(dev, dev_run);
  dev->add_option("--scan", dev_scan, "scan STL file")->required();
  dev->add_option("--out", dev_out,
                  "deviations CSV (default <scan>.deviations.csv)");

  std::string morph_run, morph_dev, morph_out;
  bool morph_noclamp = false;
  auto* morph_cmd = app.add_subcommand(
      "morph", "morph the baseline mesh by mapped deviations");
  add_run(morph_cmd, morph_run);
  morph_cmd->add_option("--deviations", morph_dev, "deviations CSV")->required();
  morph_cmd->add_option("--out", morph_out,
                        "output mesh (default meshes/morphed.msh)");
  morph_cmd->add_flag("--no-clamp", morph_noclamp,
                      "skip the arc-window clamp from the config");

  std::string pred_run, pred_dev, pred_obj = "all", pred_var = "ad";
  bool pred_noclamp = false;
  auto* pred = app.add_subcommand(
      "predict", "linear objective-change prediction from stored adjoints");
  add_run(pred, pred_run);
  pred->add_option("--deviations", pred_dev, "deviations CSV")->required();
  pred->add_option("--objective", pred_obj, "mass_flow | pressure_loss_y | all");
  pred->add_option("--variant", pred_var, "ad | hd | all");
  pred->add_flag("--no-clamp", pred_noclamp, "skip the arc-window clamp");

  std::string val_run, val_suite = "scan";
  int val_samples = 0, val_inject = -1;
  bool val_clamp = false, val_noclamp = false;
  auto* val = app.add_subcommand(
      "validate", "campaign: morph, re-solve, and compare against predictions");
  add_run(val, val_run);
  val->add_option("--suite", val_suite,
                  "scan (synthetic population) | parametric (CAD variation "
                  "sweep, always unclamped)");
  val->add_option("--samples", val_samples, "override sample count (scan suite)");
  val->add_flag("--clamp", val_clamp, "force the deformation clamp on");
  val->add_flag("--no-clamp", val_noclamp, "force the deformation clamp off");
  val->add_option("--inject-failure", val_inject,
                  "test hook: fail this sample id on purpose")
      ->group("");  // hidden

  std::string rep_run;
  auto* rep = app.add_subcommand("report", "histograms, scatter, and fit stats");
  add_run(rep, rep_run);

  std::string bench_run;
  int bench_samples = 0;
  auto* bench = app.add_subcommand(
      "bench", "measure primal, adjoint, and campaign batch costs");
  add_run(bench, bench_run);
  bench->add_option("--samples", bench_samples, "override sample count");

  std::string sens_run, sens_obj = "mass_flow", sens_var = "ad";
  auto* sens = app.add_subcommand(
      "sensitivity-map", "annotated signed surface sensitivity along the arc");
  add_run(sens, sens_run);
  sens->add_option("--objective", sens_obj, "mass_flow | pressure_loss_y");
  sens->add_option("--variant", sens_var, "ad | hd");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : toolchain::kExitConfig;
  }

  if (gen->parsed()) {
    return dispatch([&] {
      std::string text;
      toolchain::RunConfig cfg;
      if (!gen_config.empty()) {
        text = read_file(gen_config);
        cfg = toolchain::parse_run_config(text, gen_config);
      } else {
        cfg = toolchain::RunConfig{};
        text = toolchain::dump_run_config(cfg);
      }
      if (gen_print) {
        std::fputs(toolchain::dump_run_config(cfg).c_str(), stdout);
        return 0;
      }
      const fs::path out = gen_out.empty()
                               ? fs::path("runs") / toolchain::default_run_id()
                               : fs::path(gen_out);
      const toolchain::RunPaths paths = toolchain::init_case(cfg, out, text);
      std::printf("%s\n", paths.root.c_str());
      return 0;
    });
  }
  if (solve->parsed()) {
    return dispatch([&] {
      const toolchain::Baseline b =
          toolchain::ensure_baseline(solve_run, solve_force);
      std::printf("%s mdot %.10g  Y %.10g  iters %d  residual %.3e%s\n",
                  b.solved_now ? "solved" : "cached", b.j_mass, b.j_loss,
                  b.primal.iterations_used, b.primal.l1_final,
                  b.solved_now ? "" : " (reused solutions/baseline.sol)");
      return 0;
    });
  }
  if (adj->parsed()) {
    return dispatch([&] {
      const toolchain::Baseline b = toolchain::ensure_baseline(adj_run);
      const auto maps = toolchain::compute_adjoint_maps(
          b, objective_list(adj_obj), variant_list(adj_var));
      for (const auto& m : maps)
        std::printf("%s_%s: %s in %d sweeps, dJ/dp_exit %.6g\n",
                    adjoint::to_string(m.objective).c_str(),
                    adjoint::to_string(m.variant).c_str(),
                    m.converged   ? "converged"
                    : m.stagnated ? "stagnated"
                                  : "unconverged",
                    m.iterations, m.dJ_dp_exit);
      return 0;
    });
  }
  if (scan->parsed()) {
    return dispatch([&] {
      if (scan_count < 1) throw ConfigError("--count must be at least 1");
      if (scan_format != "ascii" && scan_format != "binary")
        throw ConfigError("--format must be ascii or binary");
      const toolchain::Baseline b = toolchain::ensure_baseline(scan_run);
      const geometry::SurfacePolyline surface = b.grid.surface_polyline();
      for (int k = 0; k < scan_count; ++k) {
        mva::PerturbationModel model = b.cfg.perturbation;
        model.seed = b.cfg.perturbation.seed + static_cast<std::uint64_t>(k);
        const mva::ScanSurface s = mva::synthesize_scan(surface, model);
        char name[64];
        std::snprintf(name, sizeof name, "scan-%04d.stl", k);
        const fs::path path = b.paths.meshes() / name;
        mva::write_stl(path.string(), s,
                       scan_format == "ascii" ? mva::StlFormat::Ascii
                                              : mva::StlFormat::Binary);
        std::printf("%s seed %llu\n", path.c_str(),
                    static_cast<unsigned long long>(model.seed));
      }
      return 0;
    });
  }
  if (dev->parsed()) {
    return dispatch([&] {
      const toolchain::Baseline b = toolchain::ensure_baseline(dev_run);
      const mva::ScanSurface scan_surface = mva::read_stl(dev_scan);
      const geometry::SurfacePolyline surface = b.grid.surface_polyline();
      const mva::DeviationResult result =
          mva::deviation_analysis(surface, scan_surface);
      const std::string out =
          dev_out.empty() ? dev_scan + ".deviations.csv" : dev_out;
      mva::write_deviations_csv(out, surface, result);
      std::size_t projected = 0, ambiguous = 0;
      for (std::size_t k = 0; k < result.size(); ++k) {
        projected += result.projected[k];
        ambiguous += result.ambiguous[k];
      }
      std::printf("%s: %zu nodes, %zu projected, %zu ambiguous\n", out.c_str(),
                  result.size(), projected, ambiguous);
      return 0;
    });
  }
  if (morph_cmd->parsed()) {
    return dispatch([&] {
      const toolchain::Baseline b = toolchain::ensure_baseline(morph_run);
      const morph::DeformationField d =
          field_from_deviations(b, morph_dev, !morph_noclamp);
      const grid::StructuredGrid morphed = morph::morph_mesh(b.grid, d);
      const fs::path out = morph_out.empty()
                               ? b.paths.meshes() / "morphed.msh"
                               : fs::path(morph_out);
      grid::write_mesh(morphed, out.string(), grid::MeshFormat::Binary);
      std::printf("%s  max displacement %.6g\n", out.c_str(), d.max_abs());
      return 0;
    });
  }
  if (pred->parsed()) {
    return dispatch([&] {
      const toolchain::Baseline b = toolchain::ensure_baseline(pred_run);
      const morph::DeformationField d =
          field_from_deviations(b, pred_dev, !pred_noclamp);
      for (adjoint::ObjectiveId o : objective_list(pred_obj))
        for (adjoint::Variant v : variant_list(pred_var)) {
          const toolchain::SurfaceMap map =
              toolchain::read_surface_map(b.paths, o, v, b.mesh_hash);
          const double df = adjoint::predict_delta(map.g, d);
          const double f0 = toolchain::objective_value(b, o);
          std::printf("%s_%s: dF %.10g  (baseline %.10g, %+.4f%%)\n",
                      adjoint::to_string(o).c_str(),
                      adjoint::to_string(v).c_str(), df, f0, 100.0 * df / f0);
        }
      return 0;
    });
  }
  if (val->parsed()) {
    return dispatch([&] {
      if (val_clamp && val_noclamp)
        throw ConfigError("--clamp and --no-clamp are mutually exclusive");
      toolchain::ValidateOptions opt;
      opt.suite = val_suite;
      opt.samples = val_samples;
      opt.clamp_override = val_clamp ? 1 : val_noclamp ? 0 : -1;
      opt.inject_failure = val_inject;
      return toolchain::cmd_validate(val_run, opt);
    });
  }
  if (rep->parsed()) {
    return dispatch([&] {
      toolchain::cmd_report(rep_run);
      return 0;
    });
  }
  if (bench->parsed()) {
    return dispatch([&] {
      toolchain::BenchOptions opt;
      opt.samples = bench_samples;
      toolchain::cmd_bench(bench_run, opt);
      return 0;
    });
  }
  if (sens->parsed()) {
    return dispatch([&] {
      toolchain::cmd_sensitivity_map(sens_run,
                                     toolchain::parse_objective(sens_obj),
                                     toolchain::parse_variant(sens_var));
      return 0;
    });
  }
  return 0;
}
