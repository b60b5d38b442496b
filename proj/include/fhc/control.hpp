#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "fhc/evolution.hpp"
#include "fhc/extension.hpp"

namespace fhc {

enum class Equation { Heat, Wave };

struct OptimizerSettings {
  int max_iterations = 20000;
  double stop_tolerance = 1e-8; // relative fixed-point step
  int power_iterations = 200;
  int check_interval = 25; // certificate cadence, in iterations
  std::uint64_t seed = 20260823ull;
};

// Everything the synthesis pipeline needs. The target lives on the interior
// mask; eta is a per-node cutoff supported on W. The boundary flags record
// whether the target vanishes (to first/second order) at the mask edge and at
// t = +-1; the wave pipeline refuses targets without the second-order flag.
struct ControlSetup {
  const FracOperator* op = nullptr;
  const RegionPartition* part = nullptr;
  TimeGrid tg{2};
  Equation equation = Equation::Heat;
  Vec eta;
  SpaceTimeField target;
  double epsilon = 0;
  bool target_h10 = false;
  bool target_h20 = false;
  OptimizerSettings opt;
};

struct IterationRecord {
  int iteration = 0;
  double functional = 0;
  double step_rel = 0;
  double error_estimate = 0; // ||K*K v - h|| at the radially rescaled iterate
};

struct ControlResult {
  Mat vhat;               // interior x time levels, level 0 pinned to zero
  SpaceTimeField control; // f on W x T
  double achieved_error = 0;
  double cost = 0;
  double functional_value = 0;
  double euler_residual = 0; // relative; ~0 by the radial rescaling
  double minus_two_j = 0;
  double operator_norm = 0; // ||K|| estimate from power iteration
  int iterations = 0;
  bool converged = false;
  std::vector<IterationRecord> history;
};

SpaceTimeField apply_K(const ControlSetup& ctx, const SpaceTimeField& v);
SpaceTimeField apply_K_star(const ControlSetup& ctx, const SpaceTimeField& w);
double evaluate_functional(const ControlSetup& ctx, const SpaceTimeField& v);

// dominant singular value of K via power iteration on K*K (seeded)
double estimate_operator_norm(const ControlSetup& ctx);

// accelerated proximal gradient on J = 1/2||Kv||^2 - (h,v) + eps||v|| with the
// exact shrinkage prox. Terminating iterates are rescaled along their ray so
// the Euler identity holds to machine precision; the error estimate then
// approaches eps from above, quadratically in the remaining residual.
ControlResult minimize(const ControlSetup& ctx);

struct VerifyReport {
  double error = 0;         // ||P f - h|| from a fresh forward solve
  double weak_residual = 0; // sup over random probes of |(u-h, v)|/||v||
};

VerifyReport verify_approximation(const ControlSetup& ctx, const ControlResult& result);

struct SweepRow {
  double epsilon = 0, cost = 0, error = 0, functional = 0;
  int iterations = 0;
  bool converged = false;
};

struct CostSweepResult {
  std::vector<SweepRow> rows; // epsilon decreasing
  double fit_intercept = 0, fit_slope = 0, fit_sigma = 0; // log cost ~ a + b eps^(-sigma)
  bool fit_valid = false;
  double target_norm = 0;    // L2(B x T)
  double target_sobolev = 0; // H1 for heat targets, H2 for wave
};

// on_row, when set, sees each finished row before the next run starts (the
// runner uses it to flush partial sweeps)
CostSweepResult cost_sweep(const ControlSetup& ctx, const std::vector<double>& eps_list,
                           const std::function<void(const SweepRow&)>& on_row = {});

// singular values of K on the weighted spaces, dense SVD, descending
Vec gramian_singular_values(const ControlSetup& ctx, int rank_budget);

struct AuxGapReport {
  double lhs = 0;       // (eps/2)||vhat||
  double shift = 0;     // height-delta shift of the transport term, via the strip
  double delta = 0;
  double delta_ref = 0; // (eps/(||h||_H1 + 1))^(1/max(s,1-s))
};

AuxGapReport auxiliary_functional_gap(const ControlSetup& ctx, const ControlResult& result,
                                      double delta, const ExtensionContext& ext);

// the admissible-height scale (eps/(||h||_H1 + 1))^(1/max(s,1-s))
double reference_delta(const ControlSetup& ctx);

struct TargetBundle {
  SpaceTimeField field;
  bool h10 = false, h20 = false;
  std::optional<SpaceTimeField> generator; // reachable targets keep their f0
  double generator_cost = 0;
};

// separable profile cos^2(pi|x|/2) cos^2(pi t/2), zero to second order at the
// mask edge and at t = +-1
TargetBundle target_cos2(const RegionPartition& part, const TimeGrid& tg, double amplitude);
TargetBundle target_modal(const FracOperator& op, const RegionPartition& part,
                          const TimeGrid& tg, int mode, double amplitude);
// h = P f0 for a smooth bump f0 on W x T; not zero at t = +1, so the flags
// stay false and the bundle records f0 and its cost
TargetBundle target_reachable(const FracOperator& op, const RegionPartition& part,
                              const TimeGrid& tg, Equation equation, double amplitude);

} // namespace fhc
