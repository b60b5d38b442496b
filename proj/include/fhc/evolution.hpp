#pragma once

#include "fhc/fracops.hpp"
#include "fhc/lattice.hpp"

#include <Eigen/Cholesky>

#include <optional>

// Time stepping for the exterior-data heat and wave problems. Exterior values
// are eliminated as constraints: the interior block advances with the W nodes
// appearing as a load, and outputs copy the datum back verbatim. The adjoint
// solver is the exact algebraic transpose of the forward map under the
// uniform-weight level pairing, which makes the discrete duality identity
// hold to roundoff (see duality_residual).

namespace fhc {

enum class Direction { Forward, Adjoint };

struct HeatProblem {
  const FracOperator* op = nullptr;
  const RegionPartition* part = nullptr;
  TimeGrid tg;
  SpaceTimeField exterior; // datum on the control mask; ignored for Adjoint
  SpaceTimeField source;   // interior forcing F (forward) or dual source v (adjoint)
  std::optional<Vec> initial_interior; // values on part->interior, default zero
  Direction direction = Direction::Forward;
  double theta = 1.0; // 1: implicit Euler, 0.5: Crank-Nicolson
};

SpaceTimeField solve_heat(const HeatProblem& problem);

// eigenbasis backend: per-mode theta recursions, zero exterior datum only
SpaceTimeField solve_heat_galerkin(const HeatProblem& problem, const DirichletSpectrum& spectrum,
                                   int modes);

struct WaveProblem {
  const FracOperator* op = nullptr;
  const RegionPartition* part = nullptr;
  TimeGrid tg;
  SpaceTimeField exterior;
  SpaceTimeField source;
  std::optional<Vec> initial_interior;
  std::optional<Vec> initial_velocity;
};

struct WaveSolution {
  SpaceTimeField displacement;
  SpaceTimeField velocity; // stage velocity of the midpoint scheme (conserves energy)
};

// implicit midpoint on the first-order system; unconditionally stable and
// exactly energy conserving for the homogeneous problem
WaveSolution solve_wave(const WaveProblem& problem);

struct EnergyReport {
  double sup_l2 = 0;            // sup_t of the interior L2 norm
  double hs_energy = 0;         // sqrt(int_T u' A u), quadratic-form H^s energy
  double dt_dual_surrogate = 0; // time derivative in the A^{-1}-weighted surrogate norm
  double rhs_dual_surrogate = 0;
  double observed_constant = 0; // lhs over rhs, 0 when the source vanishes
};

EnergyReport energy_report(const SpaceTimeField& traj, const HeatProblem& problem);
EnergyReport energy_report(const WaveSolution& sol, const WaveProblem& problem);

// wave invariant E = (|p|^2 + u'Au)/2 per level, hx^d weighted
std::vector<double> wave_energy_trace(const WaveSolution& sol, const WaveProblem& problem);

// |(P f, v) + (f, trace pairing of the adjoint state)| / (|f| |v|), with the
// matched theta pairing; roundoff-size when the transposition is exact
double duality_residual(const SpaceTimeField& exterior_datum, const SpaceTimeField& dual_source,
                        const FracOperator& op, const RegionPartition& part, const TimeGrid& tg,
                        double theta = 1.0);

// Cached interior factorization shared by the evolution entry points and the
// control loops. Immutable after construction.
struct HeatStepper {
  const RegionPartition* part = nullptr;
  TimeGrid tg;
  double theta = 1.0;
  Mat a_ii, a_iw; // interior-interior block, interior-control block
  Mat rhs_mat;    // Id - (1-theta) dt A_II
  Eigen::LLT<Mat> lhs;

  HeatStepper(const FracOperator& op, const RegionPartition& part, const TimeGrid& tg,
              double theta);

  int interior_size() const { return static_cast<int>(part->interior.size()); }
  int control_size() const { return static_cast<int>(part->control.size()); }

  // columns are time levels 0..m
  Mat forward(const Mat& load, const Vec* u0) const;
  // transpose recursion with uniform source weight w per level
  Mat adjoint(const Mat& dual_source, double w) const;
  Mat exterior_load(const Mat& f_on_w) const;   // -A_IW f
  Mat w_trace(const Mat& interior_field) const; // rows of A f at the control nodes
};

struct WaveStepper {
  const RegionPartition* part = nullptr;
  TimeGrid tg;
  Mat a_ii, a_iw;
  Mat m_minus; // Id - (dt^2/4) A_II
  Eigen::LLT<Mat> lhs; // Id + (dt^2/4) A_II

  WaveStepper(const FracOperator& op, const RegionPartition& part, const TimeGrid& tg);

  int interior_size() const { return static_cast<int>(part->interior.size()); }

  struct Traj {
    Mat u, p;
  };
  Traj forward(const Mat& load_mid, const Vec* u0, const Vec* p0) const;
  // transpose pairing states: chi[k] couples the exterior datum level k to the
  // dual source; chi carries one factor of the trapezoid level weight
  Mat adjoint_chi(const Mat& dual_source, double w) const;
  Mat exterior_load_mid(const Mat& f_on_w) const; // midpoint averages of -A_IW f
  Mat w_trace(const Mat& interior_field) const;
};

} // namespace fhc
