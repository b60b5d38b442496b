#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "fhc/extension.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

using namespace fhc;

namespace {

Vec gaussian_datum(const Grid& line, double center, double width) {
  Vec g(line.num_nodes());
  for (int i = 0; i < line.num_nodes(); ++i) {
    const double x = line.axis_coord(i) - center;
    g[i] = std::exp(-x * x / (2 * width * width));
  }
  return g;
}

// small strip over the coarse line used by most cases
struct SmallStrip {
  Grid line = build_grid(1, 4, 65);
  StripOperator op;
  SmallStrip(double s = 0.5) { build_strip_operator(op, build_strip(line, 24, 8.0, 2.0), s); }
};

} // namespace

TEST_CASE("strip construction contracts") {
  Grid line = build_grid(1, 4, 65);
  HalfStripGrid sg = build_strip(line, 24, 8.0, 2.0);
  CHECK(sg.y[0] == 0.0);
  CHECK(sg.y[24] == 8.0);
  for (int j = 0; j < 24; ++j) CHECK(sg.y[j] < sg.y[j + 1]);
  CHECK(sg.y[1] <= line.hx * line.hx);
  CHECK(sg.num_nodes() == 65 * 25);

  CHECK_THROWS_AS(build_strip(line, 7, 8.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(build_strip(line, 24, 7.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(build_strip(line, 24, 8.0, 0.5), std::invalid_argument);
  // linear grading cannot meet the y1 <= hx^2 rule with this few levels
  CHECK_THROWS_AS(build_strip(line, 24, 8.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(build_strip(build_grid(2, 2, 33), 24, 8.0, 2.0), std::invalid_argument);

  StripOperator op;
  CHECK_THROWS_AS(build_strip_operator(op, sg, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(build_strip_operator(op, sg, 1.0), std::invalid_argument);
}

TEST_CASE("zero datum extends to the zero field") {
  SmallStrip ss;
  ExtensionField f = solve_extension(Vec::Zero(ss.line.num_nodes()), ss.op);
  CHECK(f.values.cwiseAbs().maxCoeff() == 0.0);
  CHECK(neumann_trace(f, 0.5, 1.0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(dirichlet_energy(f, ss.op) == 0.0);
  auto ratios = three_balls_ratio(f, 0.5, 0.0, 1.5, 0.3);
  CHECK(std::isnan(ratios.first));
  CHECK(std::isnan(ratios.second));
  CHECK_THROWS_AS(solve_extension(Vec::Zero(7), ss.op), std::invalid_argument);
}

TEST_CASE("extension is linear in the datum") {
  SmallStrip ss;
  std::mt19937 rng(7);
  std::normal_distribution<double> dist;
  Vec a(ss.line.num_nodes()), b(ss.line.num_nodes());
  for (int i = 0; i < a.size(); ++i) {
    a[i] = dist(rng);
    b[i] = dist(rng);
  }
  Mat want = 1.7 * solve_extension(a, ss.op).values - 0.4 * solve_extension(b, ss.op).values;
  Mat got = solve_extension(Vec(1.7 * a - 0.4 * b), ss.op).values;
  CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12 * want.cwiseAbs().maxCoeff());
}

TEST_CASE("discrete maximum principle and verbatim boundary row") {
  SmallStrip ss;
  std::mt19937 rng(8);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Vec datum(ss.line.num_nodes());
  for (int i = 0; i < datum.size(); ++i) datum[i] = dist(rng);
  ExtensionField f = solve_extension(datum, ss.op);
  for (int i = 0; i < datum.size(); ++i) CHECK(f.values(0, i) == datum[i]);
  CHECK(f.values.minCoeff() >= -1e-12);
  CHECK(f.values.maxCoeff() <= 1.0 + 1e-12);
}

TEST_CASE("model fields reproduce slices, fluxes, and traces exactly") {
  SmallStrip ss;
  const HalfStripGrid& sg = ss.op.strip;

  // linear-in-height field: slices interpolate, the s=1/2 flux is constant 1
  ExtensionField lin;
  lin.strip = sg;
  lin.values = Mat::Zero(sg.levels + 1, 65);
  for (int j = 0; j <= sg.levels; ++j) lin.values.row(j).setConstant(sg.y[j]);
  for (double y : {0.37, 1.23, 5.4}) {
    Vec sl = slice_at_height(lin, y);
    for (int i = 0; i < 65; ++i) CHECK(sl[i] == doctest::Approx(y).epsilon(1e-12));
    Vec fl = flux_slice_at_height(lin, 0.5, y);
    for (int i = 0; i < 65; ++i) CHECK(fl[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(slice_at_height(lin, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(slice_at_height(lin, 9.0), std::invalid_argument);

  // pure y^(2s) profile: the exact edge weights see the constant slope 2s b,
  // and the two-level trace fit recovers cs * (-2s b) including at y = 0
  const double s = 0.6, b = -0.8, cs = 2.5;
  Vec datum = gaussian_datum(ss.line, 0.0, 0.5);
  ExtensionField mod;
  mod.strip = sg;
  mod.values = Mat::Zero(sg.levels + 1, 65);
  for (int j = 0; j <= sg.levels; ++j)
    mod.values.row(j) = datum.transpose() + b * std::pow(sg.y[j], 2 * s) * Vec::Ones(65).transpose();
  Vec tr = neumann_trace(mod, s, cs);
  for (int i = 0; i < 65; ++i) CHECK(tr[i] == doctest::Approx(cs * (-2 * s * b)).epsilon(1e-10));
  for (double y : {0.001, 0.4, 2.0}) {
    Vec fl = flux_slice_at_height(mod, s, y);
    for (int i = 0; i < 65; ++i) CHECK(fl[i] == doctest::Approx(2 * s * b).epsilon(1e-10));
  }
}

TEST_CASE("harmonic extension matches the poisson kernel at s = 1/2") {
  // measured 0.19% / 0.45% / 1.18% at heights 0.25 / 0.5 / 1
  Grid line = build_grid(1, 8, 513);
  StripOperator op;
  build_strip_operator(op, build_strip(line, 131, 16.0, 2.0), 0.5);
  Vec datum = gaussian_datum(line, 0.0, 0.5);
  ExtensionField f = solve_extension(datum, op);
  for (double y : {0.25, 0.5, 1.0}) {
    Vec slice = slice_at_height(f, y);
    double num = 0, den = 0;
    for (int i = 0; i < line.num_nodes(); ++i) {
      const double x = line.axis_coord(i);
      if (std::abs(x) > 2.0) continue;
      double conv = 0;
      for (int t = 0; t < line.num_nodes(); ++t) {
        const double w = (t == 0 || t == line.num_nodes() - 1) ? 0.5 : 1.0;
        const double dx = x - line.axis_coord(t);
        conv += w * datum[t] * y / (dx * dx + y * y);
      }
      conv *= line.hx / std::numbers::pi;
      num += (slice[i] - conv) * (slice[i] - conv);
      den += conv * conv;
    }
    CHECK(std::sqrt(num / den) <= 0.02);
  }
}

TEST_CASE("calibrated trace matches the fractional operator on held-out data") {
  // frozen calibrations 2.05047 / 1.00013 / 0.51662 at this resolution
  const double cs_pin[3] = {2.05047, 1.00013, 0.51662};
  const double gap_pin[3] = {1e-3, 0.02, 0.07};
  const double svals[3] = {0.25, 0.5, 0.75};
  Grid line = build_grid(1, 4, 257);
  const int levels = int(std::ceil(std::pow(8.0 / (line.hx * line.hx), 0.5))) + 1;
  double prev_cs = 1e300;
  for (int is = 0; is < 3; ++is) {
    StripOperator op;
    build_strip_operator(op, build_strip(line, levels, 8.0, 2.0), svals[is]);
    const double cs = calibrate_cs(op);
    CHECK(cs == doctest::Approx(cs_pin[is]).epsilon(0.01));
    CHECK(cs < prev_cs);
    prev_cs = cs;

    Vec datum = gaussian_datum(line, 0.4, 0.45);
    ExtensionField f = solve_extension(datum, op);
    Vec tr = neumann_trace(f, svals[is], cs);
    Vec ref = apply(assemble(line, svals[is]), datum);
    double num = 0, den = 0;
    for (int i = 0; i < line.num_nodes(); ++i) {
      if (std::abs(line.axis_coord(i)) > 2.0) continue;
      num += (tr[i] - ref[i]) * (tr[i] - ref[i]);
      den += ref[i] * ref[i];
    }
    CHECK(std::sqrt(num / den) <= 0.05);
    CHECK(energy_identity_gap(f, op, cs) <= gap_pin[is]);
  }
}

TEST_CASE("box norms on a constant field are exact at the symmetric order") {
  Grid line = build_grid(1, 4, 129);
  HalfStripGrid sg = build_strip(line, 46, 8.0, 2.0);
  ExtensionField f;
  f.strip = sg;
  f.values = Mat::Ones(sg.levels + 1, line.num_nodes());
  // at s = 1/2 the weight is 1, so the norms are plain box areas
  ThreeBallsSample sm = three_balls_norms(f, 0.5, 0.0, 1.6, 0.3);
  CHECK(sm.norm_r == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(sm.norm_2r == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(sm.norm_4r == doctest::Approx(2.4).epsilon(1e-12));

  CHECK_THROWS_AS(three_balls_norms(f, 0.5, 0.0, 1.0, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(three_balls_norms(f, 0.5, 3.5, 1.6, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(three_balls_norms(f, 0.5, 0.0, 7.5, 0.3), std::invalid_argument);
  CHECK_THROWS_AS(three_balls_norms(f, 0.5, 0.0, 1.6, -0.1), std::invalid_argument);
}

TEST_CASE("three balls on harmonic extensions: monotone norms and a feasible fit") {
  SmallStrip ss;
  std::vector<ThreeBallsSample> samples;
  for (double width : {0.3, 0.45, 0.6}) {
    ExtensionField f = solve_extension(gaussian_datum(ss.line, 0.0, width), ss.op);
    ThreeBallsSample sm = three_balls_norms(f, 0.5, 0.0, 1.5, 0.3);
    CHECK(sm.norm_r > 0);
    CHECK(sm.norm_r < sm.norm_2r);
    CHECK(sm.norm_2r < sm.norm_4r);
    auto pr = three_balls_ratio(f, 0.5, 0.0, 1.5, 0.3);
    CHECK(pr.first == doctest::Approx(sm.norm_2r / sm.norm_r).epsilon(1e-12));
    CHECK(pr.second == doctest::Approx(sm.norm_2r / sm.norm_4r).epsilon(1e-12));
    samples.push_back(sm);
  }
  ThreeBallsFit fit = fit_three_balls_ensemble(samples);
  CHECK(fit.feasible);
  CHECK(fit.alpha_hat > 0);
  CHECK(fit.alpha_hat < 1);
  CHECK(fit.c_hat <= 100.0);
  for (const auto& sm : samples)
    CHECK(sm.norm_2r <= fit.c_hat * std::pow(sm.norm_r, fit.alpha_hat) *
                            std::pow(sm.norm_4r, 1 - fit.alpha_hat) * (1 + 1e-10));
}

TEST_CASE("smallness report: signals, chain lengths, and the height inequalities") {
  SmallStrip ss;
  Box w;
  w.lo[0] = 1.5;
  w.hi[0] = 2.5;
  RegionPartition part = partition(ss.line, {w});
  FracOperator op = assemble(ss.line, 0.5);
  TimeGrid tg = build_time_grid(16);
  ExtensionContext ctx{&op, &part, tg, &ss.op, 1.0};

  SpaceTimeField v = SpaceTimeField::zeros(ss.line, tg);
  for (int node : part.interior) {
    const double x = ss.line.coord(node)[0];
    const double c = std::cos(std::numbers::pi * x / 2);
    for (int k = 0; k < tg.levels(); ++k)
      v.values(k, node) = c * c * (1.0 + 0.5 * std::sin(std::numbers::pi * tg.time(k)));
  }
  SmallnessReport rep = smallness_report(v, {0.4, 0.2, 0.1}, 0.5, ctx);
  REQUIRE(rep.trace_norms.size() == 3);
  for (double t : rep.trace_norms) CHECK(t > 0);
  for (double t : rep.flux_norms) CHECK(t > 0);
  CHECK(rep.boundary_norm > 0);
  CHECK(rep.source_norm > 0);
  CHECK(rep.chain_lengths == std::vector<int>{1, 2, 3});
  CHECK(rep.inequalities_hold);
  CHECK(rep.mu_hat > 0);
  CHECK(rep.mu_hat <= 1.0);
  CHECK(rep.sigma_hat > 0);
  CHECK(rep.c_hat <= 100.0);

  SmallnessReport zero = smallness_report(SpaceTimeField::zeros(ss.line, tg), {0.4}, 0.5, ctx);
  CHECK(zero.trace_norms[0] == 0.0);
  CHECK(zero.boundary_norm == 0.0);
  CHECK(zero.source_norm == 0.0);
  CHECK(zero.inequalities_hold);

  CHECK_THROWS_AS(smallness_report(v, {}, 0.5, ctx), std::invalid_argument);
  CHECK_THROWS_AS(smallness_report(v, {0.0}, 0.5, ctx), std::invalid_argument);
  CHECK_THROWS_AS(smallness_report(v, {1.5}, 0.5, ctx), std::invalid_argument);
  CHECK_THROWS_AS(smallness_report(v, {0.4}, 0.0, ctx), std::invalid_argument);
  CHECK_THROWS_AS(smallness_report(v, {0.4}, 1.5, ctx), std::invalid_argument);

  // ensemble fit across scaled copies of the same report stays feasible
  std::vector<SmallnessReport> reports = {rep, rep, rep};
  SmallnessFit fit = fit_smallness_ensemble(reports);
  CHECK(fit.feasible);
  CHECK(fit.mu_hat > 0);
  CHECK(fit.mu_hat <= 1.0);
  CHECK(fit.sigma_hat > 0);
  CHECK(fit.c_hat <= 100.0);
}

TEST_CASE("bulk boundary triple scales linearly and admits an interpolation fit") {
  SmallStrip ss;
  Box w;
  w.lo[0] = 1.5;
  w.hi[0] = 2.5;
  RegionPartition part = partition(ss.line, {w});

  std::vector<BulkBoundaryTriple> triples;
  for (double width : {0.3, 0.45, 0.6}) {
    ExtensionField f = solve_extension(gaussian_datum(ss.line, 0.0, width), ss.op);
    BulkBoundaryTriple t = bulk_boundary_ratio(f, ss.op, part, 0.5, 1.0);
    CHECK(t.near_w_norm > 0);
    CHECK(t.energy_norm > 0);
    CHECK(t.boundary_norm > 0);

    ExtensionField doubled = f;
    doubled.values *= 2.0;
    BulkBoundaryTriple td = bulk_boundary_ratio(doubled, ss.op, part, 0.5, 1.0);
    CHECK(td.near_w_norm == doctest::Approx(2 * t.near_w_norm).epsilon(1e-12));
    CHECK(td.energy_norm == doctest::Approx(2 * t.energy_norm).epsilon(1e-12));
    CHECK(td.boundary_norm == doctest::Approx(2 * t.boundary_norm).epsilon(1e-12));
    triples.push_back(t);
  }
  BulkBoundaryFit fit = fit_bulk_boundary_ensemble(triples);
  CHECK(fit.feasible);
  CHECK(fit.mu_hat > 0);
  CHECK(fit.mu_hat < 1);
  CHECK(fit.c_hat <= 100.0);
  for (const auto& t : triples)
    CHECK(t.near_w_norm <= fit.c_hat * std::pow(t.energy_norm, 1 - fit.mu_hat) *
                               std::pow(t.boundary_norm, fit.mu_hat) * (1 + 1e-10));
}

TEST_CASE("extension field csv dumps rows") {
  SmallStrip ss;
  ExtensionField f = solve_extension(gaussian_datum(ss.line, 0.0, 0.5), ss.op);
  write_extension_csv("extension_dump.csv", f);
  std::ifstream in("extension_dump.csv");
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(!header.empty());
  int rows = 0;
  for (std::string l; std::getline(in, l);) ++rows;
  CHECK(rows > 0);
  in.close();
  std::remove("extension_dump.csv");
}
