#pragma once

#include "fhc/lattice.hpp"

#include <string>

// Dense quadrature discretization of the integral fractional Laplacian with
// zero exterior extension, its Dirichlet eigenpairs on the interior ball, and
// an independent spectral-multiplier reference used as a cross-check oracle.

namespace fhc {

struct FracOperator {
  Grid grid;
  double s = 0.5;           // fractional order, in (0,1)
  double normalization = 0; // kernel constant making the full-space symbol |xi|^(2s)
  Mat matrix;               // dense symmetric, num_nodes x num_nodes
  Vec tail;                 // per-node diagonal share coming from the exterior of the box
};

// Symmetrized second-difference quadrature: pairs u(x+z)+u(x-z)-2u(x) against
// exact kernel integrals of a piecewise-linear model in |z|, with a quadratic
// model on the first cell so the singular weight stays finite (~ hx^-2s).
// The kernel mass beyond the grid is closed-form in 1D and integrated
// numerically in 2D, so truncation to the box is exact for zero exterior data.
FracOperator assemble(const Grid& grid, double s);

Vec apply(const FracOperator& op, const Vec& field);
SpaceTimeField apply(const FracOperator& op, const SpaceTimeField& field);

double kernel_constant(int dim, double s);

struct DirichletSpectrum {
  Vec eigenvalues;           // ascending, first `count`
  Mat modes;                 // interior_size x count, L2(B)-orthonormal (hx^d weighted)
  std::vector<int> interior; // node indices the mode rows refer to
};

// eigenpairs of the operator restricted to the interior mask (zero outside)
DirichletSpectrum dirichlet_spectrum(const FracOperator& op, const RegionPartition& part,
                                     int count);

// Spectral reference on a periodic box: transform, multiply by |xi|^(2s),
// transform back. Independent of the quadrature path; the periodic box must
// be at least four times wider than the field support.
Vec fft_reference_apply(const Vec& field, const Grid& grid, double s,
                        double periodic_half_width);

// matrix rows then one tail row, 17 significant digits; sidecar records
// (dim, L, n, s, normalization)
void save_operator(const FracOperator& op, const std::string& csv_path,
                   const std::string& json_path);
FracOperator load_operator(const std::string& csv_path, const std::string& json_path);

} // namespace fhc
