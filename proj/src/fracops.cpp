#include "fhc/fracops.hpp"

#include "fhc/io.hpp"

#include <fftw3.h>

#include <Eigen/Dense>

#include "json.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace fhc {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// int_a^b z^(-1-2s) dz
double kern_int(double a, double b, double s) {
  return (std::pow(a, -2 * s) - std::pow(b, -2 * s)) / (2 * s);
}

// int_a^b z^(-2s) dz
double kern_moment(double a, double b, double s) {
  if (std::abs(s - 0.5) < 1e-14) return std::log(b / a);
  return (std::pow(b, 1 - 2 * s) - std::pow(a, 1 - 2 * s)) / (1 - 2 * s);
}

// 1D quadrature weights w_j for the symmetrized form
//   (-Lap)^s u(x_i) ~= -c * sum_j w_j (u_{i+j} + u_{i-j} - 2 u_i),
// built from exact kernel integrals of a piecewise-linear interpolant in z on
// [h,inf) plus a quadratic model on [0,h] that matches the second difference.
// The total weight sum has the closed form h^(-2s)/(2s(1-s)), which makes the
// exterior tail of each row exact without any truncated series.
struct Weights1D {
  std::vector<double> w; // w[j-1] = weight of offset j, j = 1..n-1
  std::vector<double> prefix;
  double total = 0;
};

Weights1D weights_1d(int n, double h, double s) {
  Weights1D ws;
  ws.w.resize(n - 1);
  auto z = [h](int j) { return h * j; };
  for (int j = 1; j <= n - 1; ++j) {
    double a = 0;
    if (j >= 2)
      a += (kern_moment(z(j - 1), z(j), s) - z(j - 1) * kern_int(z(j - 1), z(j), s)) / h;
    a += (z(j + 1) * kern_int(z(j), z(j + 1), s) - kern_moment(z(j), z(j + 1), s)) / h;
    ws.w[j - 1] = a;
  }
  ws.w[0] += std::pow(h, -2 * s) / (2 - 2 * s); // quadratic model on the first cell
  ws.total = std::pow(h, -2 * s) / (2 * s * (1 - s));
  ws.prefix.resize(n);
  ws.prefix[0] = 0;
  for (int j = 1; j <= n - 1; ++j) ws.prefix[j] = ws.prefix[j - 1] + ws.w[j - 1];
  return ws;
}

// nodes/weights for composite Gauss-Legendre on [0,1], 5 point
constexpr double kGl5X[5] = {0.046910077030668, 0.230765344947158, 0.5,
                             0.769234655052841, 0.953089922969332};
constexpr double kGl5W[5] = {0.118463442528095, 0.239314335249683, 0.284444444444444,
                             0.239314335249683, 0.118463442528095};

// int over the square [cx-h/2,cx+h/2]x[cy-h/2,cy+h/2] of |z|^(-2-2s)
double cell_integral_2d(double cx, double cy, double h, double s, int sub) {
  const double p = -2 - 2 * s;
  double acc = 0;
  const double d = h / sub;
  for (int bx = 0; bx < sub; ++bx)
    for (int by = 0; by < sub; ++by) {
      const double x0 = cx - h / 2 + bx * d;
      const double y0 = cy - h / 2 + by * d;
      double cell = 0;
      for (int qx = 0; qx < 5; ++qx)
        for (int qy = 0; qy < 5; ++qy) {
          const double x = x0 + d * kGl5X[qx];
          const double y = y0 + d * kGl5X[qy];
          cell += kGl5W[qx] * kGl5W[qy] * std::pow(x * x + y * y, p / 2);
        }
      acc += cell * d * d;
    }
  return acc;
}

// int of |z|^p over the square of half-width a (p > -2) or over its
// complement (p < -2), reduced to a smooth polar integral
double square_radial_integral(double a, double p, bool complement) {
  const int q = 48;
  double acc = 0;
  const double span = kPi / 4;
  for (int i = 0; i < q; ++i) {
    const double theta = span * (i + 0.5) / q;
    const double rho = a / std::cos(theta);
    acc += std::pow(rho, 2 + p);
  }
  acc *= span / q;
  return complement ? 8 * acc / (-(2 + p)) : 8 * acc / (2 + p);
}

void assemble_1d(FracOperator& op) {
  const Grid& g = op.grid;
  const int n = g.points_per_axis;
  const double c = op.normalization;
  Weights1D ws = weights_1d(n, g.hx, op.s);

  op.matrix = Mat::Zero(n, n);
  op.tail = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    op.matrix(i, i) = 2 * c * ws.total;
    op.tail[i] = c * (2 * ws.total - ws.prefix[i] - ws.prefix[n - 1 - i]);
    for (int j = i + 1; j < n; ++j) op.matrix(i, j) = op.matrix(j, i) = -c * ws.w[j - i - 1];
  }
}

void assemble_2d(FracOperator& op) {
  const Grid& g = op.grid;
  const int n = g.points_per_axis;
  const double h = g.hx;
  const double c = op.normalization;
  const double s = op.s;

  // weight table over offset magnitudes, exact-kernel cell integrals
  Mat table = Mat::Zero(n, n);
  for (int jx = 0; jx < n; ++jx)
    for (int jy = jx; jy < n; ++jy) {
      if (jx == 0 && jy == 0) continue;
      const int ring = jy; // jy >= jx here
      int sub = ring <= 1 ? 6 : (ring == 2 ? 3 : (ring <= 4 ? 2 : 1));
      double w = cell_integral_2d(jx * h, jy * h, h, s, sub);
      table(jx, jy) = table(jy, jx) = w;
    }

  const double central = square_radial_integral(h / 2, -2 * s, false); // |z|^2-weighted model
  const double full_tail = square_radial_integral(h / 2, -2 - 2 * s, true);

  const int nn = n * n;
  op.matrix = Mat::Zero(nn, nn);
  op.tail = Vec::Zero(nn);
  const double nb = c * central / (2 * h * h);
  for (int i = 0; i < nn; ++i) {
    const int ix = i % n, iy = i / n;
    double reach = 0;
    for (int j = 0; j < nn; ++j) {
      if (j == i) continue;
      const int jx = j % n, jy = j / n;
      const double w = table(std::abs(jx - ix), std::abs(jy - iy));
      reach += w;
      if (j > i) op.matrix(i, j) = op.matrix(j, i) = -c * w;
    }
    op.matrix(i, i) = c * (2 * central / (h * h) + full_tail);
    op.tail[i] = c * (full_tail - reach);
    // second-difference model of the singular cell couples the 4 neighbors
    if (ix > 0) op.matrix(i, i - 1) -= nb;
    if (ix < n - 1) op.matrix(i, i + 1) -= nb;
    if (iy > 0) op.matrix(i, i - n) -= nb;
    if (iy < n - 1) op.matrix(i, i + n) -= nb;
  }
}

} // namespace

double kernel_constant(int dim, double s) {
  require(s > 0 && s < 1, "fractional order s must lie in (0,1)");
  if (dim == 1)
    return std::pow(4.0, s) * s * std::tgamma(0.5 + s) / (std::sqrt(kPi) * std::tgamma(1 - s));
  return std::pow(4.0, s) * s * std::tgamma(1.0 + s) / (kPi * std::tgamma(1 - s));
}

FracOperator assemble(const Grid& grid, double s) {
  require(s > 0 && s < 1, "fractional order s must lie in (0,1)");
  if (grid.dim == 1)
    require(grid.points_per_axis <= 1025, "dense 1D assembly capped at n = 1025");
  else
    require(grid.points_per_axis <= 129, "dense 2D assembly capped at n = 129 per axis");

  FracOperator op;
  op.grid = grid;
  op.s = s;
  op.normalization = kernel_constant(grid.dim, s);
  if (grid.dim == 1)
    assemble_1d(op);
  else
    assemble_2d(op);
  return op;
}

Vec apply(const FracOperator& op, const Vec& field) {
  require(field.size() == op.grid.num_nodes(), "field size does not match operator grid");
  return op.matrix * field;
}

SpaceTimeField apply(const FracOperator& op, const SpaceTimeField& field) {
  require(field.values.cols() == op.grid.num_nodes(), "field does not match operator grid");
  SpaceTimeField out = field;
  out.values = field.values * op.matrix; // symmetric matrix, rows are time levels
  return out;
}

DirichletSpectrum dirichlet_spectrum(const FracOperator& op, const RegionPartition& part,
                                     int count) {
  const int ni = static_cast<int>(part.interior.size());
  require(count >= 1 && count <= ni, "mode count must be between 1 and interior size");

  Mat a_ii(ni, ni);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < ni; ++c) a_ii(r, c) = op.matrix(part.interior[r], part.interior[c]);

  Eigen::SelfAdjointEigenSolver<Mat> es(a_ii);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigensolver failed on the interior-restricted operator");

  DirichletSpectrum sp;
  sp.interior = part.interior;
  sp.eigenvalues = es.eigenvalues().head(count);
  sp.modes = es.eigenvectors().leftCols(count);

  const double cell = op.grid.cell_volume();
  for (int k = 0; k < count; ++k) {
    // residual check against the advertised contract
    double res = (a_ii * sp.modes.col(k) - sp.eigenvalues[k] * sp.modes.col(k)).norm();
    if (res > 1e-10 * std::abs(sp.eigenvalues[k]))
      throw std::runtime_error("eigenpair residual exceeds 1e-10 * lambda_k");
    int imax = 0;
    sp.modes.col(k).cwiseAbs().maxCoeff(&imax);
    if (sp.modes(imax, k) < 0) sp.modes.col(k) = -sp.modes.col(k);
  }
  sp.modes /= std::sqrt(cell); // L2(B)-orthonormal in the hx^d inner product
  return sp;
}

namespace {

struct SupportBox {
  int lo = 0, hi = -1;
  bool empty = false;
};

SupportBox axis_support(const Vec& v, const Grid& g, int axis) {
  SupportBox sb;
  const double vmax = v.cwiseAbs().maxCoeff();
  if (vmax == 0) {
    sb.empty = true;
    return sb;
  }
  const int n = g.points_per_axis;
  sb.lo = n;
  sb.hi = -1;
  for (int i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) <= 1e-13 * vmax) continue;
    int a = g.dim == 1 ? static_cast<int>(i) : (axis == 0 ? i % n : static_cast<int>(i) / n);
    sb.lo = std::min(sb.lo, a);
    sb.hi = std::max(sb.hi, a);
  }
  return sb;
}

} // namespace

Vec fft_reference_apply(const Vec& field, const Grid& grid, double s,
                        double periodic_half_width) {
  require(field.size() == grid.num_nodes(), "field size does not match grid");
  // strict containment: at equality the +L endpoint wraps onto the -L node
  require(periodic_half_width >= grid.half_width + grid.hx,
          "periodic box must strictly contain the grid box");
  const double h = grid.hx;
  const double ratio = periodic_half_width / h;
  require(std::abs(ratio - std::round(ratio)) < 1e-9 * ratio,
          "periodic half-width must be a multiple of hx for exact node alignment");

  const int half = static_cast<int>(std::round(ratio));
  const int nper = 2 * half; // nodes at -Lp + q*h, q = 0..nper-1

  for (int axis = 0; axis < grid.dim; ++axis) {
    SupportBox sb = axis_support(field, grid, axis);
    if (sb.empty) return Vec::Zero(field.size());
    double width = (sb.hi - sb.lo + 1) * h;
    require(4 * width <= 2 * periodic_half_width,
            "field support too wide: periodic box must be at least 4x the support width");
  }

  const int offset = half - static_cast<int>(std::round(grid.half_width / h));
  const double xi0 = kPi / periodic_half_width;

  if (grid.dim == 1) {
    std::vector<std::complex<double>> buf(nper, 0.0);
    for (int i = 0; i < grid.points_per_axis; ++i) buf[offset + i] = field[i];
    fftw_plan fwd = fftw_plan_dft_1d(nper, reinterpret_cast<fftw_complex*>(buf.data()),
                                     reinterpret_cast<fftw_complex*>(buf.data()),
                                     FFTW_FORWARD, FFTW_ESTIMATE);
    fftw_execute(fwd);
    fftw_destroy_plan(fwd);
    for (int k = 0; k < nper; ++k) {
      int ks = k <= nper / 2 ? k : k - nper;
      buf[k] *= std::pow(std::abs(xi0 * ks), 2 * s) / nper;
    }
    fftw_plan bwd = fftw_plan_dft_1d(nper, reinterpret_cast<fftw_complex*>(buf.data()),
                                     reinterpret_cast<fftw_complex*>(buf.data()),
                                     FFTW_BACKWARD, FFTW_ESTIMATE);
    fftw_execute(bwd);
    fftw_destroy_plan(bwd);
    Vec out(grid.points_per_axis);
    for (int i = 0; i < grid.points_per_axis; ++i) out[i] = buf[offset + i].real();
    return out;
  }

  const int n = grid.points_per_axis;
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(nper) * nper, 0.0);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      buf[static_cast<std::size_t>(offset + iy) * nper + offset + ix] = field[grid.index2(ix, iy)];
  fftw_plan fwd = fftw_plan_dft_2d(nper, nper, reinterpret_cast<fftw_complex*>(buf.data()),
                                   reinterpret_cast<fftw_complex*>(buf.data()), FFTW_FORWARD,
                                   FFTW_ESTIMATE);
  fftw_execute(fwd);
  fftw_destroy_plan(fwd);
  const double scale = 1.0 / (static_cast<double>(nper) * nper);
  for (int ky = 0; ky < nper; ++ky)
    for (int kx = 0; kx < nper; ++kx) {
      int kxs = kx <= nper / 2 ? kx : kx - nper;
      int kys = ky <= nper / 2 ? ky : ky - nper;
      double xi2 = xi0 * xi0 * (static_cast<double>(kxs) * kxs + static_cast<double>(kys) * kys);
      buf[static_cast<std::size_t>(ky) * nper + kx] *= std::pow(xi2, s) * scale;
    }
  fftw_plan bwd = fftw_plan_dft_2d(nper, nper, reinterpret_cast<fftw_complex*>(buf.data()),
                                   reinterpret_cast<fftw_complex*>(buf.data()), FFTW_BACKWARD,
                                   FFTW_ESTIMATE);
  fftw_execute(bwd);
  fftw_destroy_plan(bwd);
  Vec out(grid.num_nodes());
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix)
      out[grid.index2(ix, iy)] =
          buf[static_cast<std::size_t>(offset + iy) * nper + offset + ix].real();
  return out;
}

void save_operator(const FracOperator& op, const std::string& csv_path,
                   const std::string& json_path) {
  std::ostringstream out;
  const int nn = op.grid.num_nodes();
  for (int i = 0; i < nn; ++i) {
    for (int j = 0; j < nn; ++j) {
      if (j) out << ",";
      out << format_g17(op.matrix(i, j));
    }
    out << "\n";
  }
  for (int j = 0; j < nn; ++j) {
    if (j) out << ",";
    out << format_g17(op.tail[j]);
  }
  out << "\n";
  write_text_file(csv_path, out.str());

  nlohmann::ordered_json meta;
  meta["dim"] = op.grid.dim;
  meta["half_width"] = op.grid.half_width;
  meta["points_per_axis"] = op.grid.points_per_axis;
  meta["s"] = op.s;
  meta["normalization"] = op.normalization;
  meta["layout"] = "matrix rows, then one exterior-tail row";
  write_text_file(json_path, meta.dump(2) + "\n");
}

FracOperator load_operator(const std::string& csv_path, const std::string& json_path) {
  auto meta = nlohmann::json::parse(read_text_file(json_path));
  FracOperator op;
  op.grid = build_grid(meta.at("dim").get<int>(), meta.at("half_width").get<double>(),
                       meta.at("points_per_axis").get<int>());
  op.s = meta.at("s").get<double>();
  op.normalization = meta.at("normalization").get<double>();

  const int nn = op.grid.num_nodes();
  op.matrix = Mat::Zero(nn, nn);
  op.tail = Vec::Zero(nn);
  std::istringstream in(read_text_file(csv_path));
  std::string line;
  for (int i = 0; i <= nn; ++i) {
    if (!std::getline(in, line)) throw std::runtime_error("operator csv truncated: " + csv_path);
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) != nn)
      throw std::runtime_error("operator csv row width mismatch: " + csv_path);
    for (int j = 0; j < nn; ++j) {
      double v = std::stod(fields[j]);
      if (i < nn)
        op.matrix(i, j) = v;
      else
        op.tail[j] = v;
    }
  }
  return op;
}

} // namespace fhc
