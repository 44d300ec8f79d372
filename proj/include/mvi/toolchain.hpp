#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mvi/adjoint.hpp"
#include "mvi/euler.hpp"
#include "mvi/flow.hpp"
#include "mvi/geometry.hpp"
#include "mvi/grid.hpp"
#include "mvi/morph.hpp"
#include "mvi/mva.hpp"

// Campaign orchestration: run directories, the JSON run configuration, cached
// baseline solves and adjoint maps, the validation campaign (predicted vs
// re-solved objective deltas over a population of deformed meshes), report
// generation, and the cost benchmark. Everything a CLI subcommand does lives
// here so tests can drive it without a process boundary.
//
// A run directory is self-describing:
//
//   runs/<id>/
//     config.json      exact configuration bytes the run was created with
//     meshes/          baseline mesh + profile, scans, morphed meshes
//     solutions/       flow solutions keyed to their mesh by content hash
//     adjoints/        surface sensitivity maps + convergence metadata
//     records.csv      one row per (sample, objective, variant)
//     summary.json     aggregate results, merged section by section
//     report/          derived plots and tables

namespace mvi::toolchain {

// Process exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;     // bad configuration or input files
inline constexpr int kExitNumerical = 3;  // a solve, morph, or factorization failed
inline constexpr int kExitPartial = 4;    // campaign finished with exclusions

struct CampaignConfig {
  int samples = 102;
  int workers = 1;  // 0 = hardware concurrency
  bool clamp = true;
  double clamp_lo = 0.01, clamp_hi = 0.99;
  // "forward": dF_nonlinear = F(morphed) - F(baseline). "central" re-solves
  // the mirrored deformation too and halves the difference.
  std::string fd_mode = "forward";
  std::vector<adjoint::ObjectiveId> objectives = {
      adjoint::ObjectiveId::MassFlow, adjoint::ObjectiveId::PressureLossY};
  std::vector<adjoint::Variant> variants = {adjoint::Variant::AD};
};

struct ReportConfig {
  double bin_width_pct = 2.5;  // deviation histogram bin width
};

/// Full run configuration. JSON sections: case, flow, adjoint, perturbation,
/// campaign, report. Every key has the default below; unknown keys are
/// rejected rather than ignored.
struct RunConfig {
  geometry::BladeParams blade;
  int profile_points = 81;
  std::size_t ni = 121, nj = 41;
  grid::GridOptions grid_opts;
  euler::FlowConfig flow;
  adjoint::AdjointConfig adjoint;
  mva::PerturbationModel perturbation;
  CampaignConfig campaign;
  ReportConfig report;

  void validate() const;  // throws ConfigError
};

RunConfig parse_run_config(const std::string& text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully-populated JSON document; parsing it back reproduces the config.
std::string dump_run_config(const RunConfig& cfg);

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path meshes() const { return root / "meshes"; }
  std::filesystem::path solutions() const { return root / "solutions"; }
  std::filesystem::path adjoints() const { return root / "adjoints"; }
  std::filesystem::path records() const { return root / "records.csv"; }
  std::filesystem::path summary() const { return root / "summary.json"; }
  std::filesystem::path report_dir() const { return root / "report"; }

  std::filesystem::path profile() const { return meshes() / "profile.csv"; }
  std::filesystem::path baseline_mesh() const { return meshes() / "baseline.msh"; }
  std::filesystem::path baseline_solution() const {
    return solutions() / "baseline.sol";
  }
  std::filesystem::path adjoint_map(adjoint::ObjectiveId o,
                                    adjoint::Variant v) const;
  std::filesystem::path adjoint_meta(adjoint::ObjectiveId o,
                                     adjoint::Variant v) const;
};

/// UTC timestamp id, e.g. "20260314-092041".
std::string default_run_id();

/// Create the run directory tree, persist the configuration bytes exactly as
/// given, and write the baseline profile and mesh. Refuses a directory that
/// already holds a config.json.
RunPaths init_case(const RunConfig& cfg, const std::filesystem::path& run_dir,
                   const std::string& config_text);

/// Open an existing run directory (must contain config.json).
std::pair<RunConfig, RunPaths> open_case(const std::filesystem::path& run_dir);

/// Baseline working set shared by the downstream commands.
struct Baseline {
  RunConfig cfg;
  RunPaths paths;
  grid::StructuredGrid grid;
  grid::CellMetrics metrics;
  std::string mesh_hash;
  euler::FlowSolution primal;
  euler::StationAverages stations;
  double j_mass = 0.0, j_loss = 0.0;
  bool solved_now = false;  // false when reused from solutions/baseline.sol
};

/// Load the baseline mesh and solution, solving and caching the latter when
/// absent (or when force_resolve). Updates the "baseline" summary section
/// after a fresh solve.
Baseline ensure_baseline(const std::filesystem::path& run_dir,
                         bool force_resolve = false);

double objective_value(const Baseline& b, adjoint::ObjectiveId id);

/// Both objectives of a state on the given mesh.
std::pair<double, double> measure_objectives(const euler::FlowConfig& cfg,
                                             const grid::StructuredGrid& g,
                                             const grid::CellMetrics& m,
                                             const euler::State4<double>& U);

/// Persisted surface gradient of one objective under one adjoint variant,
/// smoothed through the morph operator, with the convergence record of the
/// solve that produced it.
struct SurfaceMap {
  adjoint::ObjectiveId objective = adjoint::ObjectiveId::MassFlow;
  adjoint::Variant variant = adjoint::Variant::AD;
  adjoint::SurfaceSensitivity g;
  bool converged = false, stagnated = false;
  int iterations = 0;
  double objective_value = 0.0;
  double dJ_dp_exit = 0.0, dJ_dp01 = 0.0, dJ_dt01 = 0.0;
  std::string mesh_hash;
};

/// Solve the requested adjoints against one shared tape of the baseline step,
/// write each map + metadata into adjoints/, and update the summary. AD
/// failures propagate; HD stagnation is recorded, not thrown.
std::vector<SurfaceMap> compute_adjoint_maps(
    const Baseline& base, const std::vector<adjoint::ObjectiveId>& objectives,
    const std::vector<adjoint::Variant>& variants);

void write_surface_map(const RunPaths& paths, const SurfaceMap& map);
/// Throws ConfigError naming the missing file; verifies the stored mesh hash
/// against expect_mesh_hash when non-empty.
SurfaceMap read_surface_map(const RunPaths& paths, adjoint::ObjectiveId o,
                            adjoint::Variant v,
                            const std::string& expect_mesh_hash = "");

/// One campaign record: a sample crossed with one objective and one variant.
/// Failed samples carry the failure in `detail` and NaNs in the numbers.
struct SampleOutcome {
  int sample_id = 0;
  std::string label;
  std::string objective, variant;
  std::string status;  // ok | excluded_degenerate | failed_morph | failed_solve
  double f_baseline = 0.0;
  double df_adjoint = 0.0, df_nonlinear = 0.0;
  double deviation_pct = 0.0;
  double max_disp = 0.0;
  int resolve_iters = 0;
  std::string detail;
};

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<SampleOutcome>& rows);
std::vector<SampleOutcome> read_records_csv(const std::filesystem::path& path);

struct ValidateOptions {
  // "scan": synthetic manufacturing population from the perturbation model.
  // "parametric": the fixed CAD variation suite (stagger and thickness
  // sweeps); always unclamped because those deformations move the bump ends.
  std::string suite = "scan";
  int samples = 0;        // 0 = config value (scan suite only)
  int clamp_override = -1;  // -1 config, 0 off, 1 on (scan suite only)
  int inject_failure = -1;  // test hook: this sample id throws mid-pipeline
};

/// Run the campaign: morph each sample, re-solve, compare against the linear
/// prediction from every requested adjoint map, write records.csv and the
/// summary section. Per-sample failures are recorded and excluded; the
/// campaign continues. Returns kExitOk, kExitPartial (some samples excluded
/// or failed), or kExitNumerical (no sample survived).
int cmd_validate(const std::filesystem::path& run_dir,
                 const ValidateOptions& opt = {});

/// Histograms, prediction-vs-measurement scatter with fit, and aggregate
/// statistics from records.csv. Throws ConfigError when there are no
/// records or no surviving samples.
void cmd_report(const std::filesystem::path& run_dir);

struct BenchOptions {
  int samples = 0;  // 0 = config value
};

/// Measure primal, tape, adjoint, morph+predict, and re-solve costs on this
/// case; write bench.json and print the comparison. All numbers are measured
/// in-process, never assumed.
void cmd_bench(const std::filesystem::path& run_dir,
               const BenchOptions& opt = {});

/// Signed surface sensitivity along the arc for one stored adjoint map:
/// CSV plus an annotated plot (red where outward displacement raises the
/// objective, blue where it lowers it).
void cmd_sensitivity_map(const std::filesystem::path& run_dir,
                         adjoint::ObjectiveId objective, adjoint::Variant v);

// Parsing helpers shared by the CLI and the config reader.
adjoint::ObjectiveId parse_objective(const std::string& name);
adjoint::Variant parse_variant(const std::string& name);

}  // namespace mvi::toolchain
