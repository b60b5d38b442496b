#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fhc/io.hpp"
#include "fhc/lattice.hpp"

#include <cmath>
#include <cstdio>
#include <random>

using namespace fhc;

namespace {

std::vector<Box> one_box(double lo, double hi) {
  Box b;
  b.lo[0] = lo;
  b.hi[0] = hi;
  return {b};
}

} // namespace

TEST_CASE("grid construction basics") {
  Grid g = build_grid(1, 4, 257);
  CHECK(g.hx == doctest::Approx(0.03125).epsilon(1e-15));
  CHECK(g.num_nodes() == 257);
  CHECK(g.axis_coord(128) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g.axis_coord(0) == -4.0);

  Grid g2 = build_grid(2, 2, 65);
  CHECK(g2.num_nodes() == 65 * 65);
  auto c = g2.coord(g2.index2(32, 32));
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.0);

  CHECK_THROWS(build_grid(1, 4, 256)); // even n
  CHECK_THROWS(build_grid(1, 4, 15));
  CHECK_THROWS(build_grid(1, 0.9, 257)); // box must contain the unit ball
  CHECK_THROWS(build_grid(3, 4, 257));
}

TEST_CASE("partition masks cover and respect the separation rule") {
  Grid g = build_grid(1, 4, 257);
  RegionPartition part = partition(g, one_box(1.5, 2.5));

  CHECK(part.interior.size() + part.control.size() + part.zero.size() ==
        std::size_t(g.num_nodes()));
  for (int node : part.interior) CHECK(g.radius(node) < 1.0);
  for (int node : part.control) {
    const double x = g.coord(node)[0];
    CHECK(x > 1.5);
    CHECK(x < 2.5);
  }
  // node count of a width-1 interval up to boundary rounding
  CHECK(std::abs(int(part.control.size()) - int(1.0 / g.hx) - 1) <= 2);

  CHECK_THROWS(partition(g, one_box(0.9, 2.0)));   // touches the ball
  CHECK_THROWS(partition(g, one_box(3.0, 4.5)));   // leaves the box
  CHECK_THROWS(partition(g, one_box(2.5, 2.5)));   // empty extent

  Box left;
  left.lo[0] = -3;
  left.hi[0] = -2;
  Box right;
  right.lo[0] = 2;
  right.hi[0] = 3;
  RegionPartition two = partition(g, {left, right});
  int negative = 0, positive = 0;
  for (int node : two.control) (g.coord(node)[0] < 0 ? negative : positive)++;
  CHECK(negative > 0);
  CHECK(positive > 0);

  // spectrum-only workflows pass no W at all
  RegionPartition none = partition(g, {});
  CHECK(none.control.empty());
  CHECK(!none.interior.empty());
}

TEST_CASE("cutoff is 1 on the inner half and 0 off W") {
  Grid g = build_grid(1, 4, 257);
  RegionPartition part = partition(g, one_box(1.5, 2.5));
  Cutoff eta = make_cutoff(part);

  CHECK(part.w_half_threshold == doctest::Approx(0.25).epsilon(1e-14));
  for (int idx = 0; idx < g.num_nodes(); ++idx) {
    CHECK(eta.values[idx] >= 0.0);
    CHECK(eta.values[idx] <= 1.0);
    if (part.label[idx] != NodeLabel::Control) CHECK(eta.values[idx] == 0.0);
    if (part.in_w_half(idx)) CHECK(eta.values[idx] == 1.0);
  }
  // center of W
  int mid = -1;
  for (int idx : part.control)
    if (std::abs(g.coord(idx)[0] - 2.0) < g.hx / 2) mid = idx;
  REQUIRE(mid >= 0);
  CHECK(eta.values[mid] == 1.0);

  // ramps are monotone on each side of the component
  double prev = 0;
  for (int idx : part.control) {
    const double x = g.coord(idx)[0];
    if (x > 2.0) break;
    CHECK(eta.values[idx] >= prev - 1e-14);
    prev = eta.values[idx];
  }
}

TEST_CASE("l2 norm closed forms") {
  Grid g = build_grid(1, 4, 257);
  RegionPartition part = partition(g, one_box(1.5, 2.5));
  TimeGrid tg = build_time_grid(32);

  SpaceTimeField f = SpaceTimeField::zeros(g, tg);
  CHECK(norm_l2(f, part.interior) == 0.0);

  for (int node : part.interior)
    for (int k = 0; k < tg.levels(); ++k) f.values(k, node) = 1.0;
  CHECK(std::abs(norm_l2(f, part.interior) - 2.0) <= g.hx);

  // sin(pi x) is summed exactly by the uniform lattice
  for (int node : part.interior)
    for (int k = 0; k < tg.levels(); ++k)
      f.values(k, node) = std::sin(M_PI * g.coord(node)[0]);
  CHECK(norm_l2(f, part.interior) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("h1 norm of the linear-in-time field") {
  Grid g = build_grid(1, 4, 257);
  RegionPartition part = partition(g, one_box(1.5, 2.5));
  TimeGrid tg = build_time_grid(64);

  SpaceTimeField f = SpaceTimeField::zeros(g, tg);
  for (int node : part.interior)
    for (int k = 0; k < tg.levels(); ++k) f.values(k, node) = tg.time(k);
  // L2^2 = 2/3 * |B|, dt part = 2 * |B|, dx part = 0
  CHECK(std::abs(norm_h1(f, part.interior) - std::sqrt(16.0 / 3.0)) <=
        g.hx + tg.dt() * tg.dt());
}

TEST_CASE("h1 norm is refinement stable for the separable bump") {
  double vals[2];
  int idx = 0;
  for (int n : {129, 257}) {
    Grid g = build_grid(1, 4, n);
    RegionPartition part = partition(g, one_box(1.5, 2.5));
    TimeGrid tg = build_time_grid(64);
    SpaceTimeField f = SpaceTimeField::zeros(g, tg);
    for (int node : part.interior) {
      const double cx = std::cos(M_PI * g.coord(node)[0] / 2);
      for (int k = 0; k < tg.levels(); ++k) {
        const double ct = std::cos(M_PI * tg.time(k) / 2);
        f.values(k, node) = cx * cx * ct * ct;
      }
    }
    vals[idx++] = norm_h1(f, part.interior);
  }
  CHECK(std::abs(vals[0] - vals[1]) / vals[1] <= 1e-3);
}

TEST_CASE("norm homogeneity and triangle inequality") {
  Grid g = build_grid(1, 4, 129);
  RegionPartition part = partition(g, one_box(1.5, 2.5));
  TimeGrid tg = build_time_grid(16);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd;

  for (int trial = 0; trial < 5; ++trial) {
    SpaceTimeField a = SpaceTimeField::zeros(g, tg), b = SpaceTimeField::zeros(g, tg);
    for (int node : part.interior)
      for (int k = 0; k < tg.levels(); ++k) {
        a.values(k, node) = nd(rng);
        b.values(k, node) = nd(rng);
      }
    const double na = norm_l2(a, part.interior), nb = norm_l2(b, part.interior);
    SpaceTimeField scaled = a;
    scaled.values *= -3.5;
    CHECK(norm_l2(scaled, part.interior) == doctest::Approx(3.5 * na).epsilon(1e-12));
    SpaceTimeField sum = a;
    sum.values += b.values;
    CHECK(norm_l2(sum, part.interior) <= na + nb + 1e-12 * (na + nb));
  }
}

TEST_CASE("norm ladder and level slices") {
  Grid g = build_grid(1, 4, 129);
  RegionPartition part = partition(g, one_box(1.5, 2.5));
  TimeGrid tg = build_time_grid(16);
  SpaceTimeField f = SpaceTimeField::zeros(g, tg);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (int node : part.interior)
    for (int k = 0; k < tg.levels(); ++k) f.values(k, node) = nd(rng);

  const double l2 = norm_l2(f, part.interior);
  CHECK(norm_h1(f, part.interior) >= l2);
  CHECK(norm_h2(f, part.interior) >= norm_h1(f, part.interior));

  double acc = 0;
  auto w = trapezoid_weights(tg, 0, tg.steps);
  for (int k = 0; k <= tg.steps; ++k) {
    const double lv = level_l2(f, part.interior, k);
    acc += w[k] * lv * lv;
  }
  CHECK(std::sqrt(acc) == doctest::Approx(l2).epsilon(1e-12));
}

TEST_CASE("trapezoid weights integrate linear functions exactly") {
  TimeGrid tg = build_time_grid(10);
  auto w = trapezoid_weights(tg, 0, 10);
  double total = 0, moment = 0;
  for (int k = 0; k <= 10; ++k) {
    total += w[k];
    moment += w[k] * tg.time(k);
  }
  CHECK(total == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(moment == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(w[0] == doctest::Approx(tg.dt() / 2).epsilon(1e-14));

  CHECK_THROWS(build_time_grid(1));
}

TEST_CASE("field csv round trip") {
  Grid g = build_grid(1, 4, 33);
  TimeGrid tg = build_time_grid(4);
  SpaceTimeField f = SpaceTimeField::zeros(g, tg);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  for (int node = 0; node < g.num_nodes(); ++node)
    for (int k = 0; k < tg.levels(); ++k) f.values(k, node) = nd(rng);

  const std::string path = "lattice_roundtrip.csv";
  write_field_csv(f, path);
  SpaceTimeField back = read_field_csv(path, g, tg);
  CHECK((back.values - f.values).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}
