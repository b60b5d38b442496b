#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

// Uniform lattice on the box [-L,L]^d, region bookkeeping (interior ball,
// control region, zero remainder), time grid on [-1,1] and space-time fields.

namespace fhc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Grid {
  int dim = 1;             // 1 or 2
  double half_width = 0;   // L
  int points_per_axis = 0; // n, odd so that x=0 is a node
  double hx = 0;

  int num_nodes() const { return dim == 1 ? points_per_axis : points_per_axis * points_per_axis; }
  double axis_coord(int i) const { return -half_width + hx * i; }
  // 2D nodes are flattened as idx = ix + n*iy
  int index2(int ix, int iy) const { return ix + points_per_axis * iy; }
  std::array<double, 2> coord(int idx) const {
    if (dim == 1) return {axis_coord(idx), 0.0};
    const int n = points_per_axis;
    return {axis_coord(idx % n), axis_coord(idx / n)};
  }
  double radius(int idx) const; // euclidean distance of node to the origin
  double cell_volume() const { return dim == 1 ? hx : hx * hx; }
};

// grid must strictly contain the closed unit ball and resolve it
Grid build_grid(int dim, double half_width, int points_per_axis);

// axis-aligned region component; 1D uses component 0 only
struct Box {
  std::array<double, 2> lo{0, 0};
  std::array<double, 2> hi{0, 0};
};

enum class NodeLabel : std::uint8_t { Interior = 0, Control = 1, Zero = 2 };

struct RegionPartition {
  Grid grid;
  std::vector<Box> w_spec;
  std::vector<NodeLabel> label;   // per node
  std::vector<int> interior;      // ascending node indices, |x| < 1
  std::vector<int> control;       // nodes strictly inside W
  std::vector<int> zero;
  double w_half_threshold = 0;    // tau = (max dist to boundary of W)/2

  double dist_to_w_boundary(int node) const;
  bool in_w_half(int node) const; // dist(x, dW) > tau, the inner half of W
};

// Node-center membership, strict inequalities; nodes exactly on a region
// boundary fall into the zero mask so neither B nor W is ever enlarged.
RegionPartition partition(const Grid& grid, const std::vector<Box>& w_spec);

struct TimeGrid {
  int steps = 0; // m, levels 0..m over [-1,1]
  double dt() const { return 2.0 / steps; }
  int levels() const { return steps + 1; }
  double time(int k) const { return -1.0 + dt() * k; }
};

TimeGrid build_time_grid(int steps);

// values(k, i) = field at time level k, node i
struct SpaceTimeField {
  Grid grid;
  TimeGrid tg;
  Mat values;

  static SpaceTimeField zeros(const Grid& g, const TimeGrid& t);
};

enum class CutoffProfile { QuinticC2, CubicC1 };

// eta: 1 on the inner half W/2 of the control region, 0 off W, polynomial
// ramp in between (C2 for the quintic profile)
struct Cutoff {
  Grid grid;
  Vec values;
  CutoffProfile profile = CutoffProfile::QuinticC2;
};

Cutoff make_cutoff(const RegionPartition& part, CutoffProfile profile = CutoffProfile::QuinticC2);

// Discrete space-time L2 over a node mask: trapezoid weights in time,
// hx^d cell weights in space, levels k0..k1 inclusive (k1 > k0).
double norm_l2(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1);
double norm_l2(const SpaceTimeField& f, std::span<const int> mask);

// adds centered-difference space and time gradients (one-sided at mask and
// interval ends)
double norm_h1(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1);
double norm_h1(const SpaceTimeField& f, std::span<const int> mask);

// adds pure and mixed second differences where the stencil fits (wave targets)
double norm_h2(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1);
double norm_h2(const SpaceTimeField& f, std::span<const int> mask);

// spatial L2 norm of a single level restricted to a mask
double level_l2(const SpaceTimeField& f, std::span<const int> mask, int k);

std::vector<double> trapezoid_weights(const TimeGrid& tg, int k0, int k1);

// CSV: header row with node coordinates, then one row per time level with the
// level time in the first column; 17 significant digits
void write_field_csv(const SpaceTimeField& f, const std::string& path);
SpaceTimeField read_field_csv(const std::string& path, const Grid& grid, const TimeGrid& tg);

} // namespace fhc
