#include "fhc/lattice.hpp"

#include "fhc/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fhc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double box_min_width(const Box& b, int dim) {
  double w = b.hi[0] - b.lo[0];
  if (dim == 2) w = std::min(w, b.hi[1] - b.lo[1]);
  return w;
}

// distance from a point to a closed box (0 inside)
double dist_point_box(const std::array<double, 2>& p, const Box& b, int dim) {
  double d2 = 0;
  for (int a = 0; a < dim; ++a) {
    double d = std::max({b.lo[a] - p[a], 0.0, p[a] - b.hi[a]});
    d2 += d * d;
  }
  return std::sqrt(d2);
}

// for a point inside box i: distance to the boundary of the union of boxes
double dist_to_union_boundary(const std::array<double, 2>& p, const std::vector<Box>& boxes,
                              std::size_t inside, int dim) {
  const Box& own = boxes[inside];
  double d = std::min(p[0] - own.lo[0], own.hi[0] - p[0]);
  if (dim == 2) d = std::min({d, p[1] - own.lo[1], own.hi[1] - p[1]});
  for (std::size_t j = 0; j < boxes.size(); ++j)
    if (j != inside) d = std::min(d, dist_point_box(p, boxes[j], dim));
  return d;
}

} // namespace

double Grid::radius(int idx) const {
  auto c = coord(idx);
  return dim == 1 ? std::abs(c[0]) : std::hypot(c[0], c[1]);
}

Grid build_grid(int dim, double half_width, int points_per_axis) {
  require(dim == 1 || dim == 2, "grid dim must be 1 or 2");
  require(half_width > 1.0, "grid half_width must exceed 1 so the box contains the unit ball");
  require(points_per_axis >= 17, "grid needs at least 17 points per axis");
  require(points_per_axis % 2 == 1, "points per axis must be odd so x=0 is a node");
  Grid g;
  g.dim = dim;
  g.half_width = half_width;
  g.points_per_axis = points_per_axis;
  g.hx = 2.0 * half_width / (points_per_axis - 1);
  return g;
}

double RegionPartition::dist_to_w_boundary(int node) const {
  auto p = grid.coord(node);
  for (std::size_t i = 0; i < w_spec.size(); ++i) {
    const Box& b = w_spec[i];
    bool inside = p[0] > b.lo[0] && p[0] < b.hi[0];
    if (grid.dim == 2) inside = inside && p[1] > b.lo[1] && p[1] < b.hi[1];
    if (inside) return dist_to_union_boundary(p, w_spec, i, grid.dim);
  }
  return 0.0;
}

bool RegionPartition::in_w_half(int node) const {
  return label[node] == NodeLabel::Control && dist_to_w_boundary(node) > w_half_threshold;
}

RegionPartition partition(const Grid& grid, const std::vector<Box>& w_spec) {
  // empty w_spec is allowed: spectrum-only workflows need just the interior mask
  const double L = grid.half_width;
  const double margin = 2.0 * grid.hx;
  for (const Box& b : w_spec) {
    for (int a = 0; a < grid.dim; ++a) {
      require(b.lo[a] < b.hi[a], "W component has empty extent");
      require(b.lo[a] > -L && b.hi[a] < L, "W component must lie strictly inside the box");
    }
    std::array<double, 2> origin{0, 0};
    double gap = dist_point_box(origin, b, grid.dim) - 1.0;
    require(gap >= margin, "W component closer than 2*hx to the closed unit ball");
  }
  for (std::size_t i = 0; i < w_spec.size(); ++i)
    for (std::size_t j = i + 1; j < w_spec.size(); ++j) {
      bool sep = false;
      for (int a = 0; a < grid.dim; ++a)
        sep = sep || w_spec[i].hi[a] <= w_spec[j].lo[a] || w_spec[j].hi[a] <= w_spec[i].lo[a];
      require(sep, "W components must be pairwise disjoint");
    }

  RegionPartition part;
  part.grid = grid;
  part.w_spec = w_spec;
  part.label.resize(grid.num_nodes());

  for (int idx = 0; idx < grid.num_nodes(); ++idx) {
    auto p = grid.coord(idx);
    NodeLabel lab = NodeLabel::Zero;
    if (part.grid.radius(idx) < 1.0) {
      lab = NodeLabel::Interior;
    } else {
      for (const Box& b : w_spec) {
        bool inside = p[0] > b.lo[0] && p[0] < b.hi[0];
        if (grid.dim == 2) inside = inside && p[1] > b.lo[1] && p[1] < b.hi[1];
        if (inside) {
          lab = NodeLabel::Control;
          break;
        }
      }
    }
    part.label[idx] = lab;
    switch (lab) {
      case NodeLabel::Interior: part.interior.push_back(idx); break;
      case NodeLabel::Control: part.control.push_back(idx); break;
      case NodeLabel::Zero: part.zero.push_back(idx); break;
    }
  }
  require(!part.interior.empty(), "interior mask is empty");
  require(w_spec.empty() || !part.control.empty(),
          "control mask is empty after node rounding");

  // half-region threshold: half the largest distance-to-boundary over W
  // (attained at a component center for separated components)
  double max_inner = 0;
  for (std::size_t i = 0; i < w_spec.size(); ++i) {
    std::array<double, 2> c{(w_spec[i].lo[0] + w_spec[i].hi[0]) / 2,
                            (w_spec[i].lo[1] + w_spec[i].hi[1]) / 2};
    max_inner = std::max(max_inner, dist_to_union_boundary(c, w_spec, i, grid.dim));
  }
  part.w_half_threshold = max_inner / 2.0;
  return part;
}

TimeGrid build_time_grid(int steps) {
  require(steps >= 2, "time grid needs at least 2 steps");
  TimeGrid tg;
  tg.steps = steps;
  return tg;
}

SpaceTimeField SpaceTimeField::zeros(const Grid& g, const TimeGrid& t) {
  SpaceTimeField f;
  f.grid = g;
  f.tg = t;
  f.values = Mat::Zero(t.levels(), g.num_nodes());
  return f;
}

Cutoff make_cutoff(const RegionPartition& part, CutoffProfile profile) {
  const Grid& g = part.grid;
  for (const Box& b : part.w_spec)
    require(box_min_width(b, g.dim) >= 2.0 * g.hx,
            "W component thinner than 2*hx, ramp cannot be resolved");

  const double tau = part.w_half_threshold;
  Cutoff eta;
  eta.grid = g;
  eta.profile = profile;
  eta.values = Vec::Zero(g.num_nodes());
  for (int idx : part.control) {
    double t = std::clamp(part.dist_to_w_boundary(idx) / tau, 0.0, 1.0);
    double v;
    if (profile == CutoffProfile::QuinticC2)
      v = t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    else
      v = t * t * (3.0 - 2.0 * t);
    eta.values[idx] = v;
  }
  return eta;
}

std::vector<double> trapezoid_weights(const TimeGrid& tg, int k0, int k1) {
  if (k0 < 0 || k1 > tg.steps || k1 <= k0)
    throw std::invalid_argument("invalid time range for quadrature");
  std::vector<double> w(k1 - k0 + 1, tg.dt());
  w.front() = tg.dt() / 2;
  w.back() = tg.dt() / 2;
  return w;
}

namespace {

struct MaskInfo {
  std::vector<std::uint8_t> member;
  explicit MaskInfo(int n, std::span<const int> mask) : member(n, 0) {
    for (int i : mask) member[i] = 1;
  }
  bool has(int i) const { return member[i] != 0; }
};

// centered difference along one axis, one-sided at mask edges, 0 on isolated nodes
double axis_diff(const Mat& vals, int k, int idx, int stride, int lo, int hi, double h,
                 const MaskInfo& m) {
  const bool l = idx - stride >= lo && m.has(idx - stride);
  const bool r = idx + stride <= hi && m.has(idx + stride);
  if (l && r) return (vals(k, idx + stride) - vals(k, idx - stride)) / (2 * h);
  if (r) return (vals(k, idx + stride) - vals(k, idx)) / h;
  if (l) return (vals(k, idx) - vals(k, idx - stride)) / h;
  return 0.0;
}

double time_diff(const Mat& vals, int k, int idx, int k0, int k1, double dt) {
  if (k > k0 && k < k1) return (vals(k + 1, idx) - vals(k - 1, idx)) / (2 * dt);
  if (k == k0) return (vals(k + 1, idx) - vals(k, idx)) / dt;
  return (vals(k, idx) - vals(k - 1, idx)) / dt;
}

enum class NormKind { L2, H1, H2 };

double norm_impl(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1,
                 NormKind kind) {
  if (mask.empty()) throw std::invalid_argument("norm over empty mask");
  const Grid& g = f.grid;
  const int n = g.points_per_axis;
  auto w = trapezoid_weights(f.tg, k0, k1);
  const double cell = g.cell_volume();
  const double dt = f.tg.dt();
  MaskInfo m(g.num_nodes(), mask);

  double acc = 0;
  for (int k = k0; k <= k1; ++k) {
    double lvl = 0;
    for (int idx : mask) {
      double v = f.values(k, idx);
      double term = v * v;
      if (kind != NormKind::L2) {
        int ix = g.dim == 1 ? idx : idx % n;
        int rowlo = g.dim == 1 ? 0 : idx - ix;
        double dx = axis_diff(f.values, k, idx, 1, rowlo, rowlo + n - 1, g.hx, m);
        term += dx * dx;
        if (g.dim == 2) {
          double dy = axis_diff(f.values, k, idx, n, ix, ix + n * (n - 1), g.hx, m);
          term += dy * dy;
        }
        double dtv = time_diff(f.values, k, idx, k0, k1, dt);
        term += dtv * dtv;
      }
      if (kind == NormKind::H2) {
        int ix = g.dim == 1 ? idx : idx % n;
        int rowlo = g.dim == 1 ? 0 : idx - ix;
        if (idx - 1 >= rowlo && idx + 1 <= rowlo + n - 1 && m.has(idx - 1) && m.has(idx + 1)) {
          double dxx =
              (f.values(k, idx + 1) - 2 * v + f.values(k, idx - 1)) / (g.hx * g.hx);
          term += dxx * dxx;
        }
        if (g.dim == 2 && idx - n >= ix && idx + n <= ix + n * (n - 1) && m.has(idx - n) &&
            m.has(idx + n)) {
          double dyy =
              (f.values(k, idx + n) - 2 * v + f.values(k, idx - n)) / (g.hx * g.hx);
          term += dyy * dyy;
        }
        if (k > k0 && k < k1) {
          double dtt = (f.values(k + 1, idx) - 2 * v + f.values(k - 1, idx)) / (dt * dt);
          term += dtt * dtt;
        }
      }
      lvl += term;
    }
    acc += w[k - k0] * cell * lvl;
  }
  return std::sqrt(acc);
}

} // namespace

double norm_l2(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1) {
  return norm_impl(f, mask, k0, k1, NormKind::L2);
}
double norm_l2(const SpaceTimeField& f, std::span<const int> mask) {
  return norm_l2(f, mask, 0, f.tg.steps);
}
double norm_h1(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1) {
  return norm_impl(f, mask, k0, k1, NormKind::H1);
}
double norm_h1(const SpaceTimeField& f, std::span<const int> mask) {
  return norm_h1(f, mask, 0, f.tg.steps);
}
double norm_h2(const SpaceTimeField& f, std::span<const int> mask, int k0, int k1) {
  return norm_impl(f, mask, k0, k1, NormKind::H2);
}
double norm_h2(const SpaceTimeField& f, std::span<const int> mask) {
  return norm_h2(f, mask, 0, f.tg.steps);
}

double level_l2(const SpaceTimeField& f, std::span<const int> mask, int k) {
  if (mask.empty()) throw std::invalid_argument("norm over empty mask");
  double acc = 0;
  for (int idx : mask) acc += f.values(k, idx) * f.values(k, idx);
  return std::sqrt(acc * f.grid.cell_volume());
}

void write_field_csv(const SpaceTimeField& f, const std::string& path) {
  std::ostringstream out;
  out << "t";
  for (int idx = 0; idx < f.grid.num_nodes(); ++idx) {
    auto c = f.grid.coord(idx);
    out << ",x" << format_g17(c[0]);
    if (f.grid.dim == 2) out << ";y" << format_g17(c[1]);
  }
  out << "\n";
  for (int k = 0; k < f.tg.levels(); ++k) {
    out << format_g17(f.tg.time(k));
    for (int idx = 0; idx < f.grid.num_nodes(); ++idx) out << "," << format_g17(f.values(k, idx));
    out << "\n";
  }
  write_text_file(path, out.str());
}

SpaceTimeField read_field_csv(const std::string& path, const Grid& grid, const TimeGrid& tg) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("field csv is empty: " + path);
  auto header = split_csv_line(line);
  if (static_cast<int>(header.size()) != grid.num_nodes() + 1)
    throw std::runtime_error("field csv column count does not match grid: " + path);

  SpaceTimeField f = SpaceTimeField::zeros(grid, tg);
  int k = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (k >= tg.levels()) throw std::runtime_error("field csv has too many rows: " + path);
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error("field csv row width mismatch: " + path);
    for (int idx = 0; idx < grid.num_nodes(); ++idx)
      f.values(k, idx) = std::stod(fields[idx + 1]);
    ++k;
  }
  if (k != tg.levels()) throw std::runtime_error("field csv has too few rows: " + path);
  return f;
}

} // namespace fhc
