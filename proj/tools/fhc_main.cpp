#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "CLI11.hpp"
#include "json.hpp"

#include "fhc/config.hpp"
#include "fhc/io.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace fhc;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

ordered_json base_manifest(const ExperimentConfig& cfg, const std::string& command) {
  ordered_json j;
  j["command"] = command;
  j["config_hash"] = hex64(fnv1a64(cfg.raw_text));
  j["seed"] = cfg.seed;
  j["versions"]["fhc"] = "0.1.0";
  j["versions"]["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                           std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION);
  return j;
}

void write_manifest(const fs::path& outdir, const ordered_json& j) {
  write_text_file((outdir / "manifest.json").string(), j.dump(2) + "\n");
}

// wall time stays out of the manifest so reruns stay bitwise identical
void append_run_log(const fs::path& outdir, const std::string& command, double seconds) {
  std::ofstream log(outdir / "run.log", std::ios::app);
  log << command << " wall_seconds=" << seconds << "\n";
}

double state_l2(const SpaceTimeField& f, const RegionPartition& part) {
  const double cell = part.grid.cell_volume();
  const double dt = f.tg.dt();
  double acc = 0;
  for (int k = 1; k <= f.tg.steps; ++k)
    for (int node : part.interior) acc += cell * dt * f.values(k, node) * f.values(k, node);
  return std::sqrt(acc);
}

Vec gaussian_line(const Grid& grid, double center, double width) {
  Vec g(grid.points_per_axis);
  for (int i = 0; i < grid.points_per_axis; ++i) {
    const double x = grid.axis_coord(i);
    g[i] = std::exp(-(x - center) * (x - center) / (2 * width * width));
  }
  return g;
}

Vec gaussian_field(const Grid& grid, double cx, double cy, double width) {
  if (grid.dim == 1) return gaussian_line(grid, cx, width);
  Vec g(grid.num_nodes());
  for (int idx = 0; idx < grid.num_nodes(); ++idx) {
    const auto c = grid.coord(idx);
    const double r2 = (c[0] - cx) * (c[0] - cx) + (c[1] - cy) * (c[1] - cy);
    g[idx] = std::exp(-r2 / (2 * width * width));
  }
  return g;
}

ControlSetup make_setup(const ExperimentConfig& cfg, const FracOperator& op,
                        const RegionPartition& part, const TimeGrid& tg, const Cutoff& eta,
                        const TargetBundle& bundle, double epsilon) {
  ControlSetup s;
  s.op = &op;
  s.part = &part;
  s.tg = tg;
  s.equation = cfg.equation;
  s.eta = eta.values;
  s.target = bundle.field;
  s.epsilon = epsilon;
  s.target_h10 = bundle.h10;
  s.target_h20 = bundle.h20;
  s.opt = cfg.opt;
  return s;
}

void build_strip_from_config(StripOperator& strip, const ExperimentConfig& cfg,
                             const Grid& grid) {
  HalfStripGrid sg = build_strip(grid, default_strip_levels(cfg, grid),
                                 default_strip_height(cfg, grid), cfg.strip_gamma);
  build_strip_operator(strip, sg, cfg.s);
}

SpaceTimeField draw_dual_source(const RegionPartition& part, const TimeGrid& tg,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  const double a0 = nd(rng), a1 = nd(rng), a2 = nd(rng), a3 = nd(rng), a4 = nd(rng);
  SpaceTimeField v = SpaceTimeField::zeros(part.grid, tg);
  for (int node : part.interior) {
    const double x = part.grid.coord(node)[0];
    const double c = std::cos(M_PI * x / 2);
    for (int k = 0; k < tg.levels(); ++k) {
      const double t = tg.time(k);
      v.values(k, node) =
          c * c * (a0 + a1 * x + a2 * t + a3 * std::sin(M_PI * t) + a4 * x * t);
    }
  }
  return v;
}

int cmd_operator(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_operator(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  FracOperator op = assemble(grid, cfg.s);

  const double sym = (op.matrix - op.matrix.transpose()).cwiseAbs().maxCoeff();

  struct Probe {
    double cx, cy, width;
  };
  const Probe probes[] = {{0.0, 0.0, 0.4}, {0.8, -0.3, 0.5}, {-0.5, 0.6, 0.35}};
  std::string oracle_csv = "center_x,center_y,width,rel_error\n";
  double max_err = 0;
  for (const auto& p : probes) {
    Vec g = gaussian_field(grid, p.cx, grid.dim == 2 ? p.cy : 0.0, p.width);
    Vec ref = fft_reference_apply(g, grid, cfg.s, 4 * grid.half_width);
    Vec got = apply(op, g);
    double num = 0, den = 0;
    for (int idx = 0; idx < grid.num_nodes(); ++idx) {
      if (grid.radius(idx) > 2.0) continue;
      num += (got[idx] - ref[idx]) * (got[idx] - ref[idx]);
      den += ref[idx] * ref[idx];
    }
    const double err = std::sqrt(num / den);
    max_err = std::max(max_err, err);
    oracle_csv += format_g17(p.cx) + "," + format_g17(grid.dim == 2 ? p.cy : 0.0) + "," +
                  format_g17(p.width) + "," + format_g17(err) + "\n";
  }

  // one-level refinement check on the ground eigenvalue (needs regions-free
  // unit-ball interior only)
  std::vector<Box> no_w;
  RegionPartition part = partition(grid, no_w);
  DirichletSpectrum spectrum = dirichlet_spectrum(op, part, 1);
  double lam1 = spectrum.eigenvalues[0];
  double lam1_coarse = 0, lam1_gap = 0;
  const int nc = (grid.points_per_axis - 1) / 2 + 1;
  if (nc >= 17 && nc % 2 == 1) {
    Grid cg = build_grid(cfg.dim, cfg.half_width, nc);
    FracOperator cop = assemble(cg, cfg.s);
    RegionPartition cpart = partition(cg, no_w);
    lam1_coarse = dirichlet_spectrum(cop, cpart, 1).eigenvalues[0];
    lam1_gap = std::abs(lam1 - lam1_coarse) / lam1;
  }

  write_text_file((outdir / "fft_oracle.csv").string(), oracle_csv);
  if (cfg.dump_matrix)
    save_operator(op, (outdir / "operator.csv").string(), (outdir / "operator.json").string());

  ordered_json j = base_manifest(cfg, "operator");
  j["s"] = cfg.s;
  j["dim"] = cfg.dim;
  j["points"] = cfg.points;
  j["normalization"] = op.normalization;
  j["symmetry_residual"] = sym;
  j["fft_max_rel_error"] = max_err;
  j["lambda1"] = lam1;
  j["lambda1_coarse"] = lam1_coarse;
  j["lambda1_rel_gap"] = lam1_gap;
  write_manifest(outdir, j);
  append_run_log(outdir, "operator", timer.seconds());
  if (verbose)
    std::cerr << "operator: fft err " << max_err << ", lambda1 " << lam1 << "\n";
  return 0;
}

int cmd_control(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_control(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  RegionPartition part = partition(grid, cfg.w_boxes);
  TimeGrid tg = build_time_grid(cfg.time_steps);
  FracOperator op = assemble(grid, cfg.s);
  Cutoff eta = make_cutoff(part);
  TargetBundle bundle = build_target(cfg, op, part, tg);
  if (cfg.equation == Equation::Heat && !bundle.h10)
    std::cerr << "warning: target lacks the first-order boundary flags; cost bounds "
                 "may degrade\n";

  ControlSetup setup = make_setup(cfg, op, part, tg, eta, bundle, cfg.epsilon);
  ControlResult res = minimize(setup);
  VerifyReport vr = verify_approximation(setup, res);

  write_field_csv(res.control, (outdir / "control.csv").string());
  {
    std::string hist = "iteration,functional,step_rel,error_estimate\n";
    for (const auto& r : res.history)
      hist += std::to_string(r.iteration) + "," + format_g17(r.functional) + "," +
              format_g17(r.step_rel) + "," + format_g17(r.error_estimate) + "\n";
    write_text_file((outdir / "history.csv").string(), hist);
  }
  {
    // re-solve and store the miss u - h on the interior mask
    SpaceTimeField zero_src = SpaceTimeField::zeros(grid, tg);
    SpaceTimeField u;
    if (cfg.equation == Equation::Heat) {
      HeatProblem p;
      p.op = &op;
      p.part = &part;
      p.tg = tg;
      p.exterior = res.control;
      p.source = zero_src;
      u = solve_heat(p);
    } else {
      WaveProblem p;
      p.op = &op;
      p.part = &part;
      p.tg = tg;
      p.exterior = res.control;
      p.source = zero_src;
      u = solve_wave(p).displacement;
    }
    SpaceTimeField miss = SpaceTimeField::zeros(grid, tg);
    for (int node : part.interior)
      for (int k = 0; k < tg.levels(); ++k)
        miss.values(k, node) = u.values(k, node) - bundle.field.values(k, node);
    write_field_csv(miss, (outdir / "u_minus_h.csv").string());
  }

  ordered_json j = base_manifest(cfg, "control");
  j["equation"] = cfg.equation == Equation::Heat ? "heat" : "wave";
  j["epsilon"] = cfg.epsilon;
  j["target_norm"] = state_l2(bundle.field, part);
  j["achieved_error"] = vr.error;
  j["optimizer_error"] = res.achieved_error;
  j["weak_residual"] = vr.weak_residual;
  j["cost"] = res.cost;
  j["functional"] = res.functional_value;
  j["euler_residual"] = res.euler_residual;
  j["minus_two_j"] = res.minus_two_j;
  j["cost_sq_within_bound"] = res.cost * res.cost <= res.minus_two_j + 1e-12;
  j["operator_norm"] = res.operator_norm;
  j["iterations"] = res.iterations;
  j["converged"] = res.converged;

  if (cfg.has_extension && cfg.equation == Equation::Heat) {
    StripOperator strip;
    build_strip_from_config(strip, cfg, grid);
    const double cs = calibrate_cs(strip);
    ExtensionContext ext{&op, &part, tg, &strip, cs};
    double delta = cfg.aux_delta > 0 ? cfg.aux_delta : reference_delta(setup);
    delta = std::min(std::max(delta, 1e-6), 0.499);
    AuxGapReport gap = auxiliary_functional_gap(setup, res, delta, ext);
    j["aux_gap"]["delta"] = gap.delta;
    j["aux_gap"]["delta_ref"] = gap.delta_ref;
    j["aux_gap"]["lhs"] = gap.lhs;
    j["aux_gap"]["shift"] = gap.shift;
    j["aux_gap"]["positive"] = gap.lhs + gap.shift >= -1e-10;
    j["aux_gap"]["cs"] = cs;
  }
  write_manifest(outdir, j);
  append_run_log(outdir, "control", timer.seconds());
  if (verbose)
    std::cerr << "control: error " << vr.error << " (eps " << cfg.epsilon << "), cost "
              << res.cost << ", " << res.iterations << " iterations\n";
  return res.converged ? 0 : 3;
}

int cmd_sweep(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_sweep(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  RegionPartition part = partition(grid, cfg.w_boxes);
  TimeGrid tg = build_time_grid(cfg.time_steps);
  FracOperator op = assemble(grid, cfg.s);
  Cutoff eta = make_cutoff(part);
  TargetBundle bundle = build_target(cfg, op, part, tg);
  ControlSetup setup = make_setup(cfg, op, part, tg, eta, bundle, cfg.epsilon_list.front());

  std::ofstream csv(outdir / "sweep.csv");
  csv << "epsilon,cost,error,functional,iterations,converged\n" << std::flush;
  auto flush_row = [&](const SweepRow& r) {
    csv << format_g17(r.epsilon) << "," << format_g17(r.cost) << "," << format_g17(r.error)
        << "," << format_g17(r.functional) << "," << r.iterations << ","
        << (r.converged ? 1 : 0) << "\n"
        << std::flush;
    if (verbose)
      std::cerr << "sweep: eps " << r.epsilon << " -> cost " << r.cost << ", error "
                << r.error << "\n";
  };
  CostSweepResult sw = cost_sweep(setup, cfg.epsilon_list, flush_row);
  csv.close();

  ordered_json j = base_manifest(cfg, "sweep");
  j["equation"] = cfg.equation == Equation::Heat ? "heat" : "wave";
  j["target_norm"] = sw.target_norm;
  j["target_sobolev"] = sw.target_sobolev;
  j["rows"] = sw.rows.size();
  j["fit_valid"] = sw.fit_valid;
  j["fit_intercept"] = sw.fit_intercept;
  j["fit_slope"] = sw.fit_slope;
  j["fit_sigma"] = sw.fit_sigma;
  write_manifest(outdir, j);
  append_run_log(outdir, "sweep", timer.seconds());
  bool all = true;
  for (const auto& r : sw.rows) all = all && r.converged;
  return all ? 0 : 3;
}

int cmd_gramian(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_gramian(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  RegionPartition part = partition(grid, cfg.w_boxes);
  TimeGrid tg = build_time_grid(cfg.time_steps);
  FracOperator op = assemble(grid, cfg.s);
  Cutoff eta = make_cutoff(part);
  TargetBundle bundle = target_cos2(part, tg, 1.0); // placeholder target, unused by the SVD
  ControlSetup setup = make_setup(cfg, op, part, tg, eta, bundle, 1.0);

  Vec sv = gramian_singular_values(setup, 4096);
  std::string csv = "k,sigma,sigma_rel\n";
  int first_below = -1;
  for (int k = 0; k < sv.size(); ++k) {
    const double rel = sv[k] / sv[0];
    if (first_below < 0 && rel < 1e-8) first_below = k;
    csv += std::to_string(k) + "," + format_g17(sv[k]) + "," + format_g17(rel) + "\n";
  }
  write_text_file((outdir / "singular_values.csv").string(), csv);

  ordered_json j = base_manifest(cfg, "gramian");
  j["dimension"] = int(part.interior.size()) * tg.steps;
  j["count"] = int(sv.size());
  j["sigma1"] = sv[0];
  j["first_index_below_1e8"] = first_below;
  write_manifest(outdir, j);
  append_run_log(outdir, "gramian", timer.seconds());
  if (verbose)
    std::cerr << "gramian: sigma1 " << sv[0] << ", drops below 1e-8 at k=" << first_below
              << "\n";
  return 0;
}

int cmd_extension_check(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_extension_check(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  FracOperator op = assemble(grid, cfg.s);
  StripOperator strip;
  build_strip_from_config(strip, cfg, grid);
  const double cs = calibrate_cs(strip);

  // held-out bump, disjoint from the calibration family
  Vec datum = gaussian_line(grid, 0.4, 0.45);
  ExtensionField f = solve_extension(datum, strip);
  Vec tr_ext = neumann_trace(f, cfg.s, cs);
  Vec tr_op = apply(op, datum);
  double num = 0, den = 0;
  std::string csv = "x,datum,trace_extension,trace_operator\n";
  for (int i = 0; i < grid.points_per_axis; ++i) {
    const double x = grid.axis_coord(i);
    if (std::abs(x) <= 2.0) {
      num += (tr_ext[i] - tr_op[i]) * (tr_ext[i] - tr_op[i]);
      den += tr_op[i] * tr_op[i];
    }
    csv += format_g17(x) + "," + format_g17(datum[i]) + "," + format_g17(tr_ext[i]) + "," +
           format_g17(tr_op[i]) + "\n";
  }
  write_text_file((outdir / "trace_check.csv").string(), csv);
  const double heldout_err = std::sqrt(num / den);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd;
  Vec smooth = Vec::Zero(grid.points_per_axis);
  for (int mode = 1; mode <= 4; ++mode) {
    const double a = nd(rng);
    for (int i = 0; i < grid.points_per_axis; ++i) {
      const double x = grid.axis_coord(i);
      smooth[i] += a * std::exp(-x * x) * std::cos(mode * M_PI * x / grid.half_width);
    }
  }
  const double egap = energy_identity_gap(solve_extension(smooth, strip), strip, cs);

  ordered_json j = base_manifest(cfg, "extension-check");
  j["s"] = cfg.s;
  j["cs"] = cs;
  j["strip_levels"] = strip.strip.levels;
  j["strip_height"] = strip.strip.height;
  j["heldout_rel_error"] = heldout_err;
  j["energy_identity_gap"] = egap;
  write_manifest(outdir, j);
  append_run_log(outdir, "extension-check", timer.seconds());
  if (verbose)
    std::cerr << "extension-check: cs " << cs << ", held-out err " << heldout_err << "\n";
  return 0;
}

int cmd_smallness(const ExperimentConfig& cfg, const fs::path& outdir, bool verbose) {
  Timer timer;
  validate_for_smallness(cfg);
  Grid grid = build_grid(cfg.dim, cfg.half_width, cfg.points);
  RegionPartition part = partition(grid, cfg.w_boxes);
  TimeGrid tg = build_time_grid(cfg.time_steps);
  FracOperator op = assemble(grid, cfg.s);
  StripOperator strip;
  build_strip_from_config(strip, cfg, grid);
  const double cs = calibrate_cs(strip);
  ExtensionContext ext{&op, &part, tg, &strip, cs};

  std::mt19937_64 rng(cfg.seed);
  std::vector<SmallnessReport> reports;
  std::vector<ThreeBallsSample> balls;
  std::vector<BulkBoundaryTriple> triples;
  std::string csv = "draw,delta,trace_norm,flux_norm,boundary_norm,source_norm\n";
  for (int draw = 0; draw < cfg.draws; ++draw) {
    SpaceTimeField v = draw_dual_source(part, tg, rng);
    SmallnessReport rep = smallness_report(v, cfg.delta_list, cfg.ell, ext);
    for (std::size_t di = 0; di < rep.deltas.size(); ++di)
      csv += std::to_string(draw) + "," + format_g17(rep.deltas[di]) + "," +
             format_g17(rep.trace_norms[di]) + "," + format_g17(rep.flux_norms[di]) + "," +
             format_g17(rep.boundary_norm) + "," + format_g17(rep.source_norm) + "\n";
    reports.push_back(rep);

    // mid-time adjoint slice feeds the geometric diagnostics
    HeatStepper st(op, part, tg, 1.0);
    Mat vi(part.interior.size(), tg.levels());
    for (std::size_t i = 0; i < part.interior.size(); ++i)
      for (int k = 0; k < tg.levels(); ++k) vi(i, k) = v.values(k, part.interior[i]);
    Mat phi = st.adjoint(vi, tg.dt());
    Vec datum = Vec::Zero(grid.num_nodes());
    for (std::size_t i = 0; i < part.interior.size(); ++i)
      datum[part.interior[i]] = phi(i, tg.steps / 2);
    ExtensionField f = solve_extension(datum, strip);
    balls.push_back(three_balls_norms(f, cfg.s, 0.0, 1.5, 0.3));
    triples.push_back(bulk_boundary_ratio(f, strip, part, cfg.ell, cs));
  }
  write_text_file((outdir / "smallness.csv").string(), csv);

  SmallnessFit fit = fit_smallness_ensemble(reports);
  ThreeBallsFit tb = fit_three_balls_ensemble(balls);
  BulkBoundaryFit bb = fit_bulk_boundary_ensemble(triples);

  ordered_json j = base_manifest(cfg, "smallness");
  j["s"] = cfg.s;
  j["cs"] = cs;
  j["draws"] = cfg.draws;
  j["ell"] = cfg.ell;
  j["deltas"] = cfg.delta_list;
  j["chain_lengths"] = reports.front().chain_lengths;
  j["fit"]["c_hat"] = fit.c_hat;
  j["fit"]["mu_hat"] = fit.mu_hat;
  j["fit"]["sigma_hat"] = fit.sigma_hat;
  j["fit"]["feasible"] = fit.feasible;
  j["three_balls"]["alpha_hat"] = tb.alpha_hat;
  j["three_balls"]["c_hat"] = tb.c_hat;
  j["three_balls"]["feasible"] = tb.feasible;
  j["bulk_boundary"]["mu_hat"] = bb.mu_hat;
  j["bulk_boundary"]["c_hat"] = bb.c_hat;
  write_manifest(outdir, j);
  append_run_log(outdir, "smallness", timer.seconds());
  if (verbose)
    std::cerr << "smallness: C " << fit.c_hat << ", mu " << fit.mu_hat << ", sigma "
              << fit.sigma_hat << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"exterior control toolkit for fractional heat and wave equations"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_override;
  long long seed_override = -1;
  bool verbose = false;
  app.add_option("--config", config_path, "experiment config file")->required();
  app.add_option("--out", out_override, "override [output] directory");
  app.add_option("--seed", seed_override, "override [rng] seed");
  app.add_flag("--verbose", verbose, "progress notes on stderr");

  auto* c_operator = app.add_subcommand("operator", "assemble and cross-check the operator");
  auto* c_control = app.add_subcommand("control", "synthesize one control");
  auto* c_sweep = app.add_subcommand("sweep", "cost-of-approximation sweep over epsilon");
  auto* c_gramian = app.add_subcommand("gramian", "singular values of the control map");
  auto* c_ext = app.add_subcommand("extension-check", "strip solver cross-validation");
  auto* c_small = app.add_subcommand("smallness", "propagation-of-smallness diagnostics");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = parse_config_file(config_path);
    if (!out_override.empty()) cfg.output_dir = out_override;
    if (seed_override >= 0) {
      cfg.seed = std::uint64_t(seed_override);
      cfg.opt.seed = cfg.seed;
    }
    fs::path outdir(cfg.output_dir);
    fs::create_directories(outdir);

    if (c_operator->parsed()) return cmd_operator(cfg, outdir, verbose);
    if (c_control->parsed()) return cmd_control(cfg, outdir, verbose);
    if (c_sweep->parsed()) return cmd_sweep(cfg, outdir, verbose);
    if (c_gramian->parsed()) return cmd_gramian(cfg, outdir, verbose);
    if (c_ext->parsed()) return cmd_extension_check(cfg, outdir, verbose);
    if (c_small->parsed()) return cmd_smallness(cfg, outdir, verbose);
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  }
}
