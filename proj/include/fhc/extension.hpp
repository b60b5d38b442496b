#pragma once

#include <Eigen/Sparse>

#include "fhc/fracops.hpp"
#include "fhc/lattice.hpp"

namespace fhc {

// Truncated half-strip above the 1d line grid. Vertical levels are graded
// toward y = 0 so the y^{2s} boundary layer of the degenerate equation is
// resolved: y_j = Y (j/M)^gamma with y_1 <= hx^2 enforced.
struct HalfStripGrid {
  Grid line;
  int levels = 0;      // M
  double height = 0;   // Y
  double gamma = 2.0;
  std::vector<double> y; // size levels+1, y[0] = 0, y[levels] = height

  int num_nodes() const { return line.points_per_axis * (levels + 1); }
  int index(int ix, int j) const { return ix + line.points_per_axis * j; }
};

HalfStripGrid build_strip(const Grid& line, int levels, double height, double gamma);

// Finite-volume operator for div(y^{1-2s} grad u) = 0 on the strip with
// Dirichlet data on the line and zero on the lateral/top truncation edges.
// Edge conductances use exact integrals of the weight so the scheme stays
// well defined down to the degenerate edge y = 0.
struct StripOperator {
  HalfStripGrid strip;
  double s = 0.5;
  std::vector<int> unknown_of_node; // -1 for Dirichlet nodes
  std::vector<int> node_of_unknown;
  Eigen::SparseMatrix<double> a;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;
  // conductance of the vertical edge (ix, j)-(ix, j+1) is hx / resistance[j]
  std::vector<double> resistance;      // size levels
  std::vector<double> horizontal_coef; // per level j >= 1, Mw(y_{j-1/2}, y_{j+1/2}) / hx

  StripOperator() = default;
  StripOperator(const StripOperator&) = delete;
  StripOperator& operator=(const StripOperator&) = delete;
};

void build_strip_operator(StripOperator& out, const HalfStripGrid& strip, double s);

struct ExtensionField {
  HalfStripGrid strip;
  Mat values; // (levels+1) x points_per_axis, row 0 = boundary datum
};

// datum lives on the full line grid (one value per tangential node)
ExtensionField solve_extension(const Vec& boundary_datum, const StripOperator& op);

// linear interpolation between vertical levels at height y
Vec slice_at_height(const ExtensionField& f, double y);
// y^{1-2s} d_y f on the vertical edge containing height y (exact edge weight)
Vec flux_slice_at_height(const ExtensionField& f, double s, double y);

// s-Neumann trace via the two-level boundary fit f ~ datum + b y^{2s};
// returns cs * (-2s b), one value per tangential node
Vec neumann_trace(const ExtensionField& f, double s, double cs);

// least-squares scalar matching the raw (cs = 1) trace to the Fourier
// reference on a small family of Gaussian bumps; throws when the residual
// exceeds 10% (under-resolved strip)
double calibrate_cs(const StripOperator& op);

// relative gap of the discrete Green identity (datum, trace) = cs * energy
double energy_identity_gap(const ExtensionField& f, const StripOperator& op, double cs);

// discrete weighted Dirichlet energy of the field (squared seminorm)
double dirichlet_energy(const ExtensionField& f, const StripOperator& op);

struct ExtensionContext {
  const FracOperator* op = nullptr;
  const RegionPartition* part = nullptr;
  TimeGrid tg{2};
  const StripOperator* strip = nullptr;
  double cs = 1.0;
};

struct SmallnessReport {
  double s = 0.5;
  std::vector<double> deltas;
  double ell = 1.0;
  std::vector<double> trace_norms; // per delta, over B x T at height delta
  std::vector<double> flux_norms;  // per delta, dual-weight flux over B x T
  double boundary_norm = 0;        // s-Neumann trace over W x {0} x T
  double source_norm = 0;          // dual source over B x T
  double c_hat = 0, mu_hat = 0, sigma_hat = 0;
  bool inequalities_hold = false;
  std::vector<int> chain_lengths;  // ceil(|log delta|) per delta
};

// dual_source: values on interior mask per time level (full lattice field)
SmallnessReport smallness_report(const SpaceTimeField& dual_source,
                                 const std::vector<double>& deltas, double ell,
                                 const ExtensionContext& ctx);

struct SmallnessFit {
  double c_hat = 0, mu_hat = 0, sigma_hat = 0;
  bool feasible = false;
};

// single (C, mu, sigma) covering both height inequalities for every report
SmallnessFit fit_smallness_ensemble(const std::vector<SmallnessReport>& reports);

// weighted norms over concentric boxes Q_r, Q_2r, Q_4r centered at (x0, y0);
// requires y0 >= 5r and Q_4r inside the strip. Zero-denominator ratios come
// back as NaN.
std::pair<double, double> three_balls_ratio(const ExtensionField& f, double s, double x0,
                                            double y0, double r);

struct ThreeBallsFit {
  double alpha_hat = 0, c_hat = 0;
  bool feasible = false;
};

struct ThreeBallsSample {
  double norm_r = 0, norm_2r = 0, norm_4r = 0;
};

ThreeBallsSample three_balls_norms(const ExtensionField& f, double s, double x0, double y0,
                                   double r);

ThreeBallsFit fit_three_balls_ensemble(const std::vector<ThreeBallsSample>& samples);

struct BulkBoundaryTriple {
  double near_w_norm = 0;   // y^{(1-2s)/2}-weighted over W/2 x [ell/2, ell]
  double energy_norm = 0;   // sqrt of the weighted Dirichlet energy
  double boundary_norm = 0; // s-Neumann trace over W x {0}
};

BulkBoundaryTriple bulk_boundary_ratio(const ExtensionField& f, const StripOperator& op,
                                       const RegionPartition& part, double ell, double cs);

struct BulkBoundaryFit {
  double mu_hat = 0, c_hat = 0;
  bool feasible = false;
};

// mu in (0,1) with near_w <= C energy^(1-mu) boundary^mu across the draws
BulkBoundaryFit fit_bulk_boundary_ensemble(const std::vector<BulkBoundaryTriple>& triples);

void write_extension_csv(const std::string& path, const ExtensionField& f);

} // namespace fhc
