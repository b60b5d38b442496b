#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fhc/fracops.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

using namespace fhc;

namespace {

// smooth bump supported on |x| <= 1.5, scaled to peak 1
double moll(double x) {
  const double r = x / 1.5;
  if (std::abs(r) >= 1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - r * r)) * std::exp(1.0);
}

Vec moll_field(const Grid& g) {
  Vec f(g.num_nodes());
  for (int i = 0; i < g.num_nodes(); ++i) f[i] = moll(g.axis_coord(i));
  return f;
}

double window_rel_error(const Vec& got, const Vec& ref, const Grid& g, double window) {
  double num = 0, den = 0;
  for (int i = 0; i < g.num_nodes(); ++i) {
    if (g.radius(i) > window) continue;
    num += (got[i] - ref[i]) * (got[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  return std::sqrt(num / den);
}

} // namespace

TEST_CASE("kernel constant closed forms") {
  CHECK(kernel_constant(1, 0.5) == doctest::Approx(1.0 / std::numbers::pi).epsilon(1e-14));
  // at s = 1/4 the two gamma factors coincide and cancel
  CHECK(kernel_constant(1, 0.25) ==
        doctest::Approx(std::sqrt(2.0 / std::numbers::pi) / 4).epsilon(1e-14));
  CHECK(kernel_constant(2, 0.5) == doctest::Approx(1.0 / (2 * std::numbers::pi)).epsilon(1e-14));
  for (int i = 1; i <= 19; ++i) {
    CHECK(kernel_constant(1, i / 20.0) > 0);
    CHECK(kernel_constant(2, i / 20.0) > 0);
  }
  // the constant vanishes linearly at s = 1 with slope 2
  CHECK(kernel_constant(1, 0.999) / 0.001 == doctest::Approx(2.0).epsilon(0.02));
  CHECK_THROWS_AS(kernel_constant(1, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(kernel_constant(1, 1.0), std::invalid_argument);
}

TEST_CASE("assemble rejects bad orders and oversized grids") {
  Grid g = build_grid(1, 2, 33);
  CHECK_THROWS_AS(assemble(g, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(assemble(g, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(assemble(g, -0.3), std::invalid_argument);
  CHECK_THROWS_AS(assemble(build_grid(1, 4, 2049), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(assemble(build_grid(2, 2, 131), 0.5), std::invalid_argument);
}

TEST_CASE("matrix structure: symmetric, negative off the diagonal, decaying rows") {
  Grid g = build_grid(1, 4, 129);
  FracOperator op = assemble(g, 0.35);
  CHECK(op.matrix.rows() == 129);
  CHECK((op.matrix - op.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
  double max_off = -1e300;
  for (int i = 0; i < 129; ++i) {
    CHECK(op.matrix(i, i) > 0);
    for (int j = 0; j < 129; ++j)
      if (i != j) max_off = std::max(max_off, op.matrix(i, j));
  }
  CHECK(max_off < 0);
  // kernel weights fall off monotonically with the offset
  for (int j = 1; j < 128; ++j) CHECK(op.matrix(0, j) < op.matrix(0, j + 1));
}

TEST_CASE("applying the operator to ones leaves exactly the tail") {
  // row sums cancel the second differences, so only the exterior share is left
  Grid g1 = build_grid(1, 4, 129);
  FracOperator op1 = assemble(g1, 0.6);
  Vec y1 = apply(op1, Vec::Ones(g1.num_nodes()));
  CHECK((y1 - op1.tail).cwiseAbs().maxCoeff() <= 1e-12 * op1.matrix(0, 0));
  for (int i = 0; i < g1.num_nodes(); ++i) CHECK(op1.tail[i] > 0);
  // the exterior is farthest from the center node
  CHECK(op1.tail[64] < op1.tail[0]);

  // in 2D the singular-cell model touches the four neighbors, so the identity
  // holds away from the outermost ring
  Grid g2 = build_grid(2, 2, 33);
  FracOperator op2 = assemble(g2, 0.5);
  CHECK((op2.matrix - op2.matrix.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Vec y2 = apply(op2, Vec::Ones(g2.num_nodes()));
  double worst = 0;
  for (int i = 0; i < g2.num_nodes(); ++i) {
    const int ix = i % 33, iy = i / 33;
    if (ix == 0 || ix == 32 || iy == 0 || iy == 32) continue;
    worst = std::max(worst, std::abs(y2[i] - op2.tail[i]));
  }
  CHECK(worst <= 1e-12 * op2.matrix(0, 0));
}

TEST_CASE("apply is linear and respects the field overload") {
  Grid g = build_grid(1, 4, 65);
  FracOperator op = assemble(g, 0.5);
  CHECK(apply(op, Vec(Vec::Zero(65))).cwiseAbs().maxCoeff() == 0.0);

  Vec f = moll_field(g);
  Vec u(65);
  for (int i = 0; i < 65; ++i) u[i] = std::sin(0.37 * i);
  Vec lhs = apply(op, Vec(2.5 * f - 0.75 * u));
  Vec rhs = 2.5 * apply(op, f) - 0.75 * apply(op, u);
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12 * rhs.cwiseAbs().maxCoeff());

  TimeGrid tg = build_time_grid(5);
  SpaceTimeField field = SpaceTimeField::zeros(g, tg);
  for (int k = 0; k < tg.levels(); ++k) field.values.row(k) = ((k + 1) * f).transpose();
  SpaceTimeField out = apply(op, field);
  for (int k = 0; k < tg.levels(); ++k) {
    Vec per_level = apply(op, Vec((k + 1) * f));
    CHECK((out.values.row(k).transpose() - per_level).cwiseAbs().maxCoeff() <=
          1e-12 * per_level.cwiseAbs().maxCoeff());
  }
  CHECK_THROWS_AS(apply(op, Vec(Vec::Zero(64))), std::invalid_argument);
}

TEST_CASE("quadrature matches the spectral reference on the inner window") {
  // oracle pins: measured 0.25%, 0.37%, 0.95% at this resolution
  Grid g = build_grid(1, 4, 257);
  Vec f = moll_field(g);
  for (double s : {0.25, 0.5, 0.75}) {
    FracOperator op = assemble(g, s);
    Vec ref = fft_reference_apply(f, g, s, 64.0);
    CHECK(window_rel_error(apply(op, f), ref, g, 2.0) <= 0.015);
  }
}

TEST_CASE("quadratic form is positive on nonzero data") {
  Grid g = build_grid(1, 4, 129);
  for (double s : {0.25, 0.5, 0.75}) {
    FracOperator op = assemble(g, s);
    Vec f = moll_field(g);
    CHECK(f.dot(apply(op, f)) > 0);
    Vec e = Vec::Zero(129);
    e[40] = 1.0;
    CHECK(e.dot(apply(op, e)) > 0);
  }
}

TEST_CASE("operator is negative outside the support of nonnegative data") {
  Grid g = build_grid(1, 4, 129);
  FracOperator op = assemble(g, 0.5);
  Vec f = moll_field(g); // supported in |x| <= 1.5
  Vec y = apply(op, f);
  for (int i = 0; i < 129; ++i)
    if (std::abs(g.axis_coord(i)) > 1.6) CHECK(y[i] < 0);
}

TEST_CASE("spectral reference trivials and the multiplier composition") {
  Grid g = build_grid(1, 4, 257);
  CHECK(fft_reference_apply(Vec::Zero(257), g, 0.5, 16.0).cwiseAbs().maxCoeff() == 0.0);
  // a padded constant is the box indicator: the reference must reproduce the
  // exterior tail on the inner window (within Gibbs pollution from the jump)
  FracOperator op_half = assemble(g, 0.5);
  Vec ind = fft_reference_apply(Vec::Ones(257), g, 0.5, 64.0);
  CHECK(window_rel_error(ind, op_half.tail, g, 2.0) <= 0.01);
  CHECK_THROWS_AS(fft_reference_apply(Vec::Ones(257), g, 0.5, 16.0), std::invalid_argument);

  // splitting the exponent must reproduce the plain Laplacian of a gaussian
  const double sig = 0.5;
  Vec f(257), lap(257);
  for (int i = 0; i < 257; ++i) {
    const double x = g.axis_coord(i);
    f[i] = std::exp(-x * x / (2 * sig * sig));
    lap[i] = (1.0 / (sig * sig) - x * x / std::pow(sig, 4)) * f[i];
  }
  Vec comp = fft_reference_apply(fft_reference_apply(f, g, 0.3, 64.0), g, 0.7, 64.0);
  CHECK(window_rel_error(comp, lap, g, 2.0) <= 2e-3);

  CHECK_THROWS_AS(fft_reference_apply(moll_field(g), g, 0.5, 4.0), std::invalid_argument);
  CHECK_THROWS_AS(fft_reference_apply(f, g, 0.5, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(fft_reference_apply(f, g, 0.5, 16.001), std::invalid_argument);
}

TEST_CASE("refinement tightens grid-to-grid agreement") {
  // Cauchy differences between n and 2n-1 sidestep the oracle's periodization
  // floor; measured orders 1.3, 1.6, 2.1 on the first pair
  for (double s : {0.25, 0.5, 0.75}) {
    double err[2];
    int idx = 0;
    for (int n : {129, 257}) {
      Grid gc = build_grid(1, 4, n), gf = build_grid(1, 4, 2 * n - 1);
      Vec yc = apply(assemble(gc, s), moll_field(gc));
      Vec yf = apply(assemble(gf, s), moll_field(gf));
      double num = 0, den = 0;
      for (int i = 0; i < n; ++i) {
        if (std::abs(gc.axis_coord(i)) > 2.0) continue;
        num += (yc[i] - yf[2 * i]) * (yc[i] - yf[2 * i]);
        den += yf[2 * i] * yf[2 * i];
      }
      err[idx++] = std::sqrt(num / den);
    }
    CHECK(std::log2(err[0] / err[1]) >= 1.0);
  }
}

TEST_CASE("interior eigenpairs: ordering, signs, orthonormality, frozen value") {
  DirichletSpectrum sp257, sp513;
  for (int n : {257, 513}) {
    Grid g = build_grid(1, 4, n);
    RegionPartition part = partition(g, {});
    FracOperator op = assemble(g, 0.5);
    DirichletSpectrum sp = dirichlet_spectrum(op, part, 3);
    CHECK(sp.eigenvalues[0] > 0);
    CHECK(sp.eigenvalues[0] < sp.eigenvalues[1]);
    CHECK(sp.eigenvalues[1] < sp.eigenvalues[2]);

    const double cell = g.cell_volume();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        const double want = a == b ? 1.0 : 0.0;
        CHECK(std::abs(cell * sp.modes.col(a).dot(sp.modes.col(b)) - want) <= 1e-10);
      }

    // ground mode does not change sign
    CHECK((sp.modes.col(0).minCoeff() > 0 || sp.modes.col(0).maxCoeff() < 0));

    // zero-extending a mode and applying the full operator reproduces it
    Vec ext = Vec::Zero(g.num_nodes());
    for (size_t r = 0; r < sp.interior.size(); ++r) ext[sp.interior[r]] = sp.modes(r, 0);
    Vec y = apply(op, ext);
    double res = 0;
    for (size_t r = 0; r < sp.interior.size(); ++r)
      res += std::pow(y[sp.interior[r]] - sp.eigenvalues[0] * sp.modes(r, 0), 2);
    CHECK(std::sqrt(res * cell) <= 1e-10 * sp.eigenvalues[0]);

    (n == 257 ? sp257 : sp513) = sp;
  }
  // coarse eigenvalues sit above fine ones, converging from above
  CHECK(sp257.eigenvalues[0] > sp513.eigenvalues[0]);
  CHECK(std::abs(sp513.eigenvalues[0] - 1.1642997) <= 1e-5);

  Grid g = build_grid(1, 4, 257);
  RegionPartition part = partition(g, {});
  FracOperator op = assemble(g, 0.5);
  CHECK_THROWS_AS(dirichlet_spectrum(op, part, 0), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_spectrum(op, part, 100000), std::invalid_argument);
}

TEST_CASE("interior spectrum does not feel the box size") {
  // same spacing, larger box: the interior block is translation invariant and
  // the tail is exact, so the restricted matrix is identical
  Grid g4 = build_grid(1, 4, 257), g6 = build_grid(1, 6, 385);
  REQUIRE(g4.hx == doctest::Approx(g6.hx).epsilon(1e-15));
  DirichletSpectrum a = dirichlet_spectrum(assemble(g4, 0.5), partition(g4, {}), 3);
  DirichletSpectrum b = dirichlet_spectrum(assemble(g6, 0.5), partition(g6, {}), 3);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(a.eigenvalues[k] - b.eigenvalues[k]) <= 1e-10 * b.eigenvalues[k]);
}

TEST_CASE("2d assembly agrees with the reference and improves under refinement") {
  double errs[2];
  int idx = 0;
  for (int n : {33, 65}) {
    Grid g = build_grid(2, 2, n);
    FracOperator op = assemble(g, 0.5);
    Vec f(g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i) {
      auto c = g.coord(i);
      f[i] = std::exp(-(c[0] * c[0] + c[1] * c[1]) / (2 * 0.3 * 0.3));
    }
    Vec ref = fft_reference_apply(f, g, 0.5, 16.0);
    errs[idx++] = window_rel_error(apply(op, f), ref, g, 1.0);
  }
  CHECK(errs[0] <= 0.18);
  CHECK(errs[1] <= 0.09);
  CHECK(errs[1] <= 0.7 * errs[0]);
}

TEST_CASE("operator survives the csv round trip") {
  Grid g = build_grid(1, 2, 33);
  FracOperator op = assemble(g, 0.4);
  save_operator(op, "fracops_rt.csv", "fracops_rt.json");
  FracOperator back = load_operator("fracops_rt.csv", "fracops_rt.json");
  CHECK((back.matrix - op.matrix).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.tail - op.tail).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.s == op.s);
  CHECK(back.normalization == op.normalization);
  CHECK(back.grid.dim == op.grid.dim);
  CHECK(back.grid.points_per_axis == op.grid.points_per_axis);
  CHECK(back.grid.hx == op.grid.hx);
  std::remove("fracops_rt.csv");
  std::remove("fracops_rt.json");
}
