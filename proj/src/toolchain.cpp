#include "mvi/toolchain.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#include "mvi/errors.hpp"
#include "toolchain_internal.hpp"

namespace mvi::toolchain {

namespace detail {

ojson load_json(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    return ojson::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void save_json(const std::filesystem::path& path, const ojson& j) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

void merge_summary(const std::filesystem::path& summary_path,
                   const std::string& key, const ojson& value) {
  ojson doc = ojson::object();
  if (std::filesystem::exists(summary_path)) doc = load_json(summary_path);
  doc[key] = value;
  save_json(summary_path, doc);
}

ResourceSample resource_sample() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  auto sec = [](const timeval& t) {
    return static_cast<double>(t.tv_sec) + 1e-6 * static_cast<double>(t.tv_usec);
  };
  return {sec(ru.ru_utime) + sec(ru.ru_stime), ru.ru_maxrss};
}

}  // namespace detail

using detail::ojson;

adjoint::ObjectiveId parse_objective(const std::string& name) {
  if (name == "mass_flow") return adjoint::ObjectiveId::MassFlow;
  if (name == "pressure_loss_y") return adjoint::ObjectiveId::PressureLossY;
  throw ConfigError("unknown objective \"" + name +
                    "\" (expected mass_flow or pressure_loss_y)");
}

adjoint::Variant parse_variant(const std::string& name) {
  if (name == "ad") return adjoint::Variant::AD;
  if (name == "hd") return adjoint::Variant::HD;
  throw ConfigError("unknown adjoint variant \"" + name +
                    "\" (expected ad or hd)");
}

void RunConfig::validate() const {
  if (profile_points < 16)
    throw ConfigError("case.profile_points must be at least 16");
  if (campaign.samples < 1)
    throw ConfigError("campaign.samples must be at least 1");
  if (campaign.workers < 0)
    throw ConfigError("campaign.workers must be non-negative");
  if (campaign.fd_mode != "forward" && campaign.fd_mode != "central")
    throw ConfigError("campaign.fd_mode must be \"forward\" or \"central\"");
  if (!(campaign.clamp_lo >= 0.0 && campaign.clamp_lo < campaign.clamp_hi &&
        campaign.clamp_hi <= 1.0))
    throw ConfigError("campaign clamp window must satisfy 0 <= lo < hi <= 1");
  if (campaign.objectives.empty())
    throw ConfigError("campaign.objectives must not be empty");
  if (campaign.variants.empty())
    throw ConfigError("campaign.variants must not be empty");
  if (!(report.bin_width_pct > 0.0))
    throw ConfigError("report.bin_width_pct must be positive");
  flow.validate();
  perturbation.validate();
}

namespace {

// Strict section reader: every key must be known and of the right type.
class Section {
 public:
  Section(const ojson& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object())
      throw ConfigError("config section " + where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key " + where_ + "." + key +
                        " has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      (void)value;
      if (!seen_.count(key))
        throw ConfigError("unknown config key " + where_ + "." + key);
    }
  }

 private:
  const ojson& j_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_section(const ojson& doc, const char* name, std::set<std::string>& seen,
                  const std::function<void(Section&)>& fill) {
  seen.insert(name);
  auto it = doc.find(name);
  if (it == doc.end()) return;
  Section s(*it, name);
  fill(s);
  s.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  ojson doc;
  try {
    doc = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ": config must be an object");

  RunConfig c;
  std::set<std::string> seen;

  read_section(doc, "case", seen, [&](Section& s) {
    s.get("stagger_deg", c.blade.stagger_deg);
    s.get("max_thickness", c.blade.max_thickness);
    s.get("chord", c.blade.chord);
    s.get("bump_position", c.blade.bump_position);
    s.get("profile_points", c.profile_points);
    s.get("ni", c.ni);
    s.get("nj", c.nj);
    s.get("wall_beta", c.grid_opts.wall_beta);
    s.get("smooth_passes", c.grid_opts.smooth_passes);
  });
  read_section(doc, "flow", seen, [&](Section& s) {
    s.get("gamma", c.flow.gamma);
    s.get("p01", c.flow.p01);
    s.get("t01", c.flow.t01);
    s.get("inlet_angle_deg", c.flow.inlet_angle_deg);
    s.get("p_exit", c.flow.p_exit);
    s.get("cfl", c.flow.cfl);
    s.get("max_iters", c.flow.max_iters);
    s.get("drop_orders", c.flow.drop_orders);
    s.get("abs_target", c.flow.abs_target);
    s.get("cfl_ramp_iters", c.flow.cfl_ramp_iters);
    s.get("p_exit_ramp_iters", c.flow.p_exit_ramp_iters);
    s.get("first_order", c.flow.first_order);
    s.get("limiter_eps2", c.flow.limiter_eps2);
    s.get("entropy_fix", c.flow.entropy_fix);
  });
  read_section(doc, "adjoint", seen, [&](Section& s) {
    s.get("max_iters", c.adjoint.max_iters);
    s.get("drop_orders", c.adjoint.drop_orders);
    s.get("abs_target", c.adjoint.abs_target);
    s.get("stagnation_window", c.adjoint.stagnation_window);
    s.get("stagnation_factor", c.adjoint.stagnation_factor);
    s.get("freeze_dissipation", c.adjoint.freeze_dissipation);
    s.get("fd_step", c.adjoint.fd_step);
    s.get("krylov_restart", c.adjoint.krylov_restart);
  });
  read_section(doc, "perturbation", seen, [&](Section& s) {
    s.get("sigma_field", c.perturbation.sigma_field);
    s.get("correlation_length", c.perturbation.correlation_length);
    s.get("sigma_meas", c.perturbation.sigma_meas);
    s.get("seed", c.perturbation.seed);
  });
  read_section(doc, "campaign", seen, [&](Section& s) {
    s.get("samples", c.campaign.samples);
    s.get("workers", c.campaign.workers);
    s.get("clamp", c.campaign.clamp);
    s.get("clamp_lo", c.campaign.clamp_lo);
    s.get("clamp_hi", c.campaign.clamp_hi);
    s.get("fd_mode", c.campaign.fd_mode);
    std::vector<std::string> names;
    s.get("objectives", names);
    if (!names.empty()) {
      c.campaign.objectives.clear();
      for (const auto& n : names)
        c.campaign.objectives.push_back(parse_objective(n));
    }
    names.clear();
    s.get("variants", names);
    if (!names.empty()) {
      c.campaign.variants.clear();
      for (const auto& n : names) c.campaign.variants.push_back(parse_variant(n));
    }
  });
  read_section(doc, "report", seen, [&](Section& s) {
    s.get("bin_width_pct", c.report.bin_width_pct);
  });

  for (const auto& [key, value] : doc.items()) {
    (void)value;
    if (!seen.count(key))
      throw ConfigError(source + ": unknown config section \"" + key + "\"");
  }

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_run_config(os.str(), path.string());
}

std::string dump_run_config(const RunConfig& c) {
  ojson doc;
  doc["case"] = {{"stagger_deg", c.blade.stagger_deg},
                 {"max_thickness", c.blade.max_thickness},
                 {"chord", c.blade.chord},
                 {"bump_position", c.blade.bump_position},
                 {"profile_points", c.profile_points},
                 {"ni", c.ni},
                 {"nj", c.nj},
                 {"wall_beta", c.grid_opts.wall_beta},
                 {"smooth_passes", c.grid_opts.smooth_passes}};
  doc["flow"] = {{"gamma", c.flow.gamma},
                 {"p01", c.flow.p01},
                 {"t01", c.flow.t01},
                 {"inlet_angle_deg", c.flow.inlet_angle_deg},
                 {"p_exit", c.flow.p_exit},
                 {"cfl", c.flow.cfl},
                 {"max_iters", c.flow.max_iters},
                 {"drop_orders", c.flow.drop_orders},
                 {"abs_target", c.flow.abs_target},
                 {"cfl_ramp_iters", c.flow.cfl_ramp_iters},
                 {"p_exit_ramp_iters", c.flow.p_exit_ramp_iters},
                 {"first_order", c.flow.first_order},
                 {"limiter_eps2", c.flow.limiter_eps2},
                 {"entropy_fix", c.flow.entropy_fix}};
  doc["adjoint"] = {{"max_iters", c.adjoint.max_iters},
                    {"drop_orders", c.adjoint.drop_orders},
                    {"abs_target", c.adjoint.abs_target},
                    {"stagnation_window", c.adjoint.stagnation_window},
                    {"stagnation_factor", c.adjoint.stagnation_factor},
                    {"freeze_dissipation", c.adjoint.freeze_dissipation},
                    {"fd_step", c.adjoint.fd_step},
                    {"krylov_restart", c.adjoint.krylov_restart}};
  doc["perturbation"] = {{"sigma_field", c.perturbation.sigma_field},
                         {"correlation_length", c.perturbation.correlation_length},
                         {"sigma_meas", c.perturbation.sigma_meas},
                         {"seed", c.perturbation.seed}};
  ojson objectives = ojson::array();
  for (auto o : c.campaign.objectives) objectives.push_back(adjoint::to_string(o));
  ojson variants = ojson::array();
  for (auto v : c.campaign.variants) variants.push_back(adjoint::to_string(v));
  doc["campaign"] = {{"samples", c.campaign.samples},
                     {"workers", c.campaign.workers},
                     {"clamp", c.campaign.clamp},
                     {"clamp_lo", c.campaign.clamp_lo},
                     {"clamp_hi", c.campaign.clamp_hi},
                     {"fd_mode", c.campaign.fd_mode},
                     {"objectives", objectives},
                     {"variants", variants}};
  doc["report"] = {{"bin_width_pct", c.report.bin_width_pct}};
  return doc.dump(2) + "\n";
}

std::filesystem::path RunPaths::adjoint_map(adjoint::ObjectiveId o,
                                            adjoint::Variant v) const {
  return adjoints() /
         (adjoint::to_string(o) + "_" + adjoint::to_string(v) + ".csv");
}

std::filesystem::path RunPaths::adjoint_meta(adjoint::ObjectiveId o,
                                             adjoint::Variant v) const {
  return adjoints() /
         (adjoint::to_string(o) + "_" + adjoint::to_string(v) + ".json");
}

std::string default_run_id() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

RunPaths init_case(const RunConfig& cfg, const std::filesystem::path& run_dir,
                   const std::string& config_text) {
  cfg.validate();
  RunPaths paths{run_dir};
  if (std::filesystem::exists(paths.config()))
    throw ConfigError("run directory already initialized: " +
                      paths.config().string());

  // Geometry first: a config the grid generator rejects must not leave a
  // half-initialized directory behind.
  const geometry::SurfacePolyline profile =
      geometry::generate_profile(cfg.blade, cfg.profile_points);
  const grid::StructuredGrid g =
      grid::generate_grid(profile, cfg.ni, cfg.nj, cfg.grid_opts);

  std::filesystem::create_directories(paths.meshes());
  std::filesystem::create_directories(paths.solutions());
  std::filesystem::create_directories(paths.adjoints());
  std::filesystem::create_directories(paths.report_dir());
  {
    std::ofstream f(paths.config(), std::ios::binary);
    if (!f) throw ConfigError("cannot write " + paths.config().string());
    f << config_text;
  }
  geometry::write_profile_csv(profile, paths.profile().string());
  grid::write_mesh(g, paths.baseline_mesh().string(), grid::MeshFormat::Binary);
  return paths;
}

std::pair<RunConfig, RunPaths> open_case(const std::filesystem::path& run_dir) {
  RunPaths paths{run_dir};
  if (!std::filesystem::exists(paths.config()))
    throw ConfigError("not a run directory (missing " +
                      paths.config().string() + ")");
  return {load_run_config(paths.config()), paths};
}

std::pair<double, double> measure_objectives(const euler::FlowConfig& cfg,
                                             const grid::StructuredGrid& g,
                                             const grid::CellMetrics& m,
                                             const euler::State4<double>& U) {
  const euler::FaceGeometry<double> fg = euler::face_geometry(m);
  const euler::BcValues<double> bc{cfg.p01, cfg.t01, cfg.p_exit,
                                   cfg.inlet_angle_rad()};
  const double j_mass =
      euler::objective_mass_flow(cfg, g.ni, g.nj, fg, bc, U);
  const double j_loss =
      euler::objective_pressure_loss(cfg, g.ni, g.nj, fg, bc, U);
  return {j_mass, j_loss};
}

double objective_value(const Baseline& b, adjoint::ObjectiveId id) {
  return id == adjoint::ObjectiveId::MassFlow ? b.j_mass : b.j_loss;
}

Baseline ensure_baseline(const std::filesystem::path& run_dir,
                         bool force_resolve) {
  auto [cfg, paths] = open_case(run_dir);
  Baseline b;
  b.cfg = cfg;
  b.paths = paths;
  if (!std::filesystem::exists(paths.baseline_mesh()))
    throw ConfigError("run is missing " + paths.baseline_mesh().string() +
                      "; create the case first");
  b.grid = grid::read_mesh(paths.baseline_mesh().string());
  b.mesh_hash = grid::file_hash(paths.baseline_mesh().string());
  b.metrics = grid::compute_metrics(b.grid);

  // Reuse the cached solution only when its mesh hash matches and the solve
  // metadata survived; anything less and we re-solve rather than guess.
  bool reused = false;
  if (!force_resolve && std::filesystem::exists(paths.baseline_solution()) &&
      std::filesystem::exists(paths.summary())) {
    const ojson summary = detail::load_json(paths.summary());
    auto it = summary.find("baseline");
    if (it != summary.end() && it->contains("l1_final")) {
      std::size_t ni = 0, nj = 0;
      std::string hash;
      b.primal.state = euler::read_solution(paths.baseline_solution(), ni, nj,
                                            hash, b.mesh_hash);
      b.primal.converged = true;
      b.primal.iterations_used = it->value("iterations", 0);
      b.primal.l1_first = it->value("l1_first", 0.0);
      b.primal.l1_final = it->value("l1_final", 0.0);
      reused = true;
    }
  }
  if (!reused) {
    b.primal = euler::solve_flow(cfg.flow, b.grid, b.metrics);
    euler::write_solution(paths.baseline_solution(), b.grid.ni, b.grid.nj,
                          b.primal.state, b.mesh_hash);
    euler::write_convergence_csv(paths.solutions() / "baseline_convergence.csv",
                                 b.primal.residual_history);
    b.solved_now = true;
  }

  b.stations = euler::station_averages(cfg.flow, b.grid, b.metrics,
                                       b.primal.state);
  std::tie(b.j_mass, b.j_loss) =
      measure_objectives(cfg.flow, b.grid, b.metrics, b.primal.state);

  if (b.solved_now) {
    ojson section = {{"mass_flow", b.j_mass},
                     {"pressure_loss_y", b.j_loss},
                     {"iterations", b.primal.iterations_used},
                     {"l1_first", b.primal.l1_first},
                     {"l1_final", b.primal.l1_final},
                     {"mesh_hash", b.mesh_hash},
                     {"stations",
                      {{"p0_in", b.stations.p0_in},
                       {"p0_out", b.stations.p0_out},
                       {"p_static_out", b.stations.p_static_out},
                       {"h0_in", b.stations.h0_in},
                       {"h0_out", b.stations.h0_out},
                       {"mdot_in", b.stations.mdot_in},
                       {"mdot_out", b.stations.mdot_out}}}};
    detail::merge_summary(paths.summary(), "baseline", section);
  }
  return b;
}

namespace {

std::string map_key(adjoint::ObjectiveId o, adjoint::Variant v) {
  return adjoint::to_string(o) + "_" + adjoint::to_string(v);
}

}  // namespace

std::vector<SurfaceMap> compute_adjoint_maps(
    const Baseline& base, const std::vector<adjoint::ObjectiveId>& objectives,
    const std::vector<adjoint::Variant>& variants) {
  adjoint::TapedStep step(base.cfg.flow, base.grid, base.metrics,
                          base.primal.state);
  const morph::MorphOperator smoother(base.grid);

  std::vector<SurfaceMap> maps;
  ojson summary_section = ojson::object();
  if (std::filesystem::exists(base.paths.summary())) {
    const ojson doc = detail::load_json(base.paths.summary());
    if (doc.contains("adjoints")) summary_section = doc.at("adjoints");
  }

  for (adjoint::ObjectiveId o : objectives) {
    for (adjoint::Variant v : variants) {
      adjoint::AdjointSolution sol =
          v == adjoint::Variant::AD
              ? adjoint::solve_adjoint_ad(step, o, base.cfg.adjoint)
              : adjoint::solve_adjoint_hd(base.cfg.flow, base.grid,
                                          base.metrics, base.primal, o,
                                          base.cfg.adjoint);
      const adjoint::SensitivityField field =
          adjoint::mesh_sensitivities(step, sol);
      SurfaceMap map;
      map.objective = o;
      map.variant = v;
      map.g = adjoint::surface_sensitivities(field, base.grid, &smoother);
      map.converged = sol.converged;
      map.stagnated = sol.stagnated;
      map.iterations = sol.iterations_used;
      map.objective_value = sol.objective_value;
      map.dJ_dp_exit = field.dJ_dp_exit;
      map.dJ_dp01 = field.dJ_dp01;
      map.dJ_dt01 = field.dJ_dt01;
      map.mesh_hash = base.mesh_hash;
      write_surface_map(base.paths, map);
      summary_section[map_key(o, v)] = {
          {"converged", map.converged},
          {"stagnated", map.stagnated},
          {"iterations", map.iterations},
          {"objective_value", map.objective_value},
          {"dJ_dp_exit", map.dJ_dp_exit},
          {"tape_records", step.stats().records},
          {"tape_bytes", step.stats().bytes}};
      maps.push_back(std::move(map));
    }
  }
  detail::merge_summary(base.paths.summary(), "adjoints", summary_section);
  return maps;
}

void write_surface_map(const RunPaths& paths, const SurfaceMap& map) {
  std::filesystem::create_directories(paths.adjoints());
  const auto csv = paths.adjoint_map(map.objective, map.variant);
  std::ofstream f(csv);
  if (!f) throw ConfigError("cannot write " + csv.string());
  f << "k,arc_fraction,gx,gy,g_normal\n";
  f.precision(17);
  for (std::size_t k = 0; k < map.g.gx.size(); ++k)
    f << k << "," << map.g.arc_fraction[k] << "," << map.g.gx[k] << ","
      << map.g.gy[k] << "," << map.g.g_normal[k] << "\n";

  ojson meta = {{"objective", adjoint::to_string(map.objective)},
                {"variant", adjoint::to_string(map.variant)},
                {"converged", map.converged},
                {"stagnated", map.stagnated},
                {"iterations", map.iterations},
                {"objective_value", map.objective_value},
                {"dJ_dp_exit", map.dJ_dp_exit},
                {"dJ_dp01", map.dJ_dp01},
                {"dJ_dt01", map.dJ_dt01},
                {"mesh_hash", map.mesh_hash}};
  detail::save_json(paths.adjoint_meta(map.objective, map.variant), meta);
}

SurfaceMap read_surface_map(const RunPaths& paths, adjoint::ObjectiveId o,
                            adjoint::Variant v,
                            const std::string& expect_mesh_hash) {
  const auto csv = paths.adjoint_map(o, v);
  const auto meta_path = paths.adjoint_meta(o, v);
  if (!std::filesystem::exists(csv) || !std::filesystem::exists(meta_path))
    throw ConfigError("missing adjoint map " + csv.string() +
                      "; run the adjoint command for " + map_key(o, v));

  SurfaceMap map;
  map.objective = o;
  map.variant = v;
  const ojson meta = detail::load_json(meta_path);
  map.converged = meta.value("converged", false);
  map.stagnated = meta.value("stagnated", false);
  map.iterations = meta.value("iterations", 0);
  map.objective_value = meta.value("objective_value", 0.0);
  map.dJ_dp_exit = meta.value("dJ_dp_exit", 0.0);
  map.dJ_dp01 = meta.value("dJ_dp01", 0.0);
  map.dJ_dt01 = meta.value("dJ_dt01", 0.0);
  map.mesh_hash = meta.value("mesh_hash", std::string());
  if (!expect_mesh_hash.empty() && map.mesh_hash != expect_mesh_hash)
    throw ConfigError("adjoint map " + csv.string() +
                      " was computed for a different mesh; re-run the adjoint "
                      "command");

  std::ifstream f(csv);
  if (!f) throw ConfigError("cannot open " + csv.string());
  std::string line;
  std::getline(f, line);  // header
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::size_t k = 0;
    double arc = 0, gx = 0, gy = 0, gn = 0;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf", &k, &arc, &gx, &gy,
                    &gn) != 5)
      throw ParseError(csv.string(), lineno, "malformed sensitivity row");
    map.g.arc_fraction.push_back(arc);
    map.g.gx.push_back(gx);
    map.g.gy.push_back(gy);
    map.g.g_normal.push_back(gn);
  }
  if (map.g.gx.empty())
    throw ParseError(csv.string(), lineno, "no sensitivity rows");
  return map;
}

void write_records_csv(const std::filesystem::path& path,
                       const std::vector<SampleOutcome>& rows) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "sample_id,label,objective,variant,status,f_baseline,df_adjoint,"
       "df_nonlinear,deviation_pct,max_disp,resolve_iters,detail\n";
  f.precision(17);
  auto num = [&](double v) -> std::ostream& {
    if (std::isnan(v))
      f << "";
    else
      f << v;
    return f;
  };
  for (const SampleOutcome& r : rows) {
    std::string detail = r.detail;
    std::replace(detail.begin(), detail.end(), ',', ';');
    std::replace(detail.begin(), detail.end(), '\n', ' ');
    f << r.sample_id << "," << r.label << "," << r.objective << ","
      << r.variant << "," << r.status << ",";
    num(r.f_baseline) << ",";
    num(r.df_adjoint) << ",";
    num(r.df_nonlinear) << ",";
    num(r.deviation_pct) << ",";
    num(r.max_disp) << "," << r.resolve_iters << "," << detail << "\n";
  }
}

std::vector<SampleOutcome> read_records_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open records " + path.string());
  std::string line;
  if (!std::getline(f, line))
    throw ParseError(path.string(), 1, "empty records file");

  std::vector<SampleOutcome> rows;
  std::size_t lineno = 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    // First 11 commas delimit fixed fields; the detail keeps the remainder.
    for (int k = 0; k < 11; ++k) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos)
        throw ParseError(path.string(), lineno, "expected 12 columns");
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    fields.push_back(line.substr(start));

    auto to_num = [&](const std::string& s) {
      if (s.empty()) return nan;
      return std::stod(s);
    };
    SampleOutcome r;
    try {
      r.sample_id = std::stoi(fields[0]);
      r.label = fields[1];
      r.objective = fields[2];
      r.variant = fields[3];
      r.status = fields[4];
      r.f_baseline = to_num(fields[5]);
      r.df_adjoint = to_num(fields[6]);
      r.df_nonlinear = to_num(fields[7]);
      r.deviation_pct = to_num(fields[8]);
      r.max_disp = to_num(fields[9]);
      r.resolve_iters = fields[10].empty() ? 0 : std::stoi(fields[10]);
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "malformed record row");
    }
    r.detail = fields[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mvi::toolchain
