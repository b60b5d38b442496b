#include "fhc/evolution.hpp"

#include <cmath>
#include <stdexcept>

namespace fhc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// field layout is (levels x nodes); steppers want (nodes-in-mask x levels)
Mat gather(const SpaceTimeField& f, const std::vector<int>& nodes) {
  Mat out(nodes.size(), f.tg.levels());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (int k = 0; k < f.tg.levels(); ++k) out(i, k) = f.values(k, nodes[i]);
  return out;
}

void scatter(SpaceTimeField& f, const std::vector<int>& nodes, const Mat& vals) {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (int k = 0; k < f.tg.levels(); ++k) f.values(k, nodes[i]) = vals(i, k);
}

void check_problem_shapes(const FracOperator* op, const RegionPartition* part,
                          const TimeGrid& tg, const SpaceTimeField& a, const SpaceTimeField& b) {
  require(op && part, "problem needs an operator and a partition");
  require(op->grid.num_nodes() == part->grid.num_nodes(), "operator and partition grids differ");
  require(a.values.rows() == tg.levels() && a.values.cols() == op->grid.num_nodes(),
          "exterior datum shape does not match grid/time setup");
  require(b.values.rows() == tg.levels() && b.values.cols() == op->grid.num_nodes(),
          "source shape does not match grid/time setup");
}

} // namespace

HeatStepper::HeatStepper(const FracOperator& op, const RegionPartition& part_,
                         const TimeGrid& tg_, double theta_)
    : part(&part_), tg(tg_), theta(theta_) {
  require(theta >= 0.5 && theta <= 1.0, "theta must lie in [1/2, 1]");
  const int ni = static_cast<int>(part->interior.size());
  const int nw = static_cast<int>(part->control.size());
  a_ii.resize(ni, ni);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < ni; ++c) a_ii(r, c) = op.matrix(part->interior[r], part->interior[c]);
  a_iw.resize(ni, nw);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < nw; ++c) a_iw(r, c) = op.matrix(part->interior[r], part->control[c]);

  const double dt = tg.dt();
  rhs_mat = Mat::Identity(ni, ni) - (1.0 - theta) * dt * a_ii;
  lhs.compute(Mat::Identity(ni, ni) + theta * dt * a_ii);
  if (lhs.info() != Eigen::Success)
    throw std::runtime_error("heat step matrix factorization failed");
}

Mat HeatStepper::forward(const Mat& load, const Vec* u0) const {
  const int ni = interior_size();
  const double dt = tg.dt();
  Mat u = Mat::Zero(ni, tg.levels());
  if (u0) {
    require(u0->size() == ni, "initial data size does not match interior mask");
    u.col(0) = *u0;
  }
  for (int k = 0; k < tg.steps; ++k) {
    Vec rhs = rhs_mat * u.col(k) + dt * (theta * load.col(k + 1) + (1 - theta) * load.col(k));
    u.col(k + 1) = lhs.solve(rhs);
  }
  return u;
}

Mat HeatStepper::adjoint(const Mat& dual_source, double w) const {
  const int ni = interior_size();
  Mat phi = Mat::Zero(ni, tg.levels());
  for (int k = tg.steps; k >= 0; --k) {
    Vec rhs = w * dual_source.col(k);
    if (k < tg.steps) rhs += rhs_mat * phi.col(k + 1);
    phi.col(k) = lhs.solve(rhs);
  }
  return phi;
}

Mat HeatStepper::exterior_load(const Mat& f_on_w) const { return -a_iw * f_on_w; }

Mat HeatStepper::w_trace(const Mat& interior_field) const {
  return a_iw.transpose() * interior_field;
}

SpaceTimeField solve_heat(const HeatProblem& problem) {
  check_problem_shapes(problem.op, problem.part, problem.tg, problem.exterior, problem.source);
  const RegionPartition& part = *problem.part;
  HeatStepper st(*problem.op, part, problem.tg, problem.theta);

  SpaceTimeField out = SpaceTimeField::zeros(problem.op->grid, problem.tg);
  if (problem.direction == Direction::Forward) {
    Mat fw = gather(problem.exterior, part.control);
    Mat load = st.exterior_load(fw) + gather(problem.source, part.interior);
    Vec u0 = problem.initial_interior.value_or(Vec::Zero(st.interior_size()));
    Mat u = st.forward(load, &u0);
    scatter(out, part.interior, u);
    // the exterior datum is a constraint: copy it back verbatim
    scatter(out, part.control, fw);
  } else {
    Mat v = gather(problem.source, part.interior);
    Mat phi = st.adjoint(v, problem.tg.dt());
    scatter(out, part.interior, phi);
  }
  return out;
}

SpaceTimeField solve_heat_galerkin(const HeatProblem& problem, const DirichletSpectrum& spectrum,
                                   int modes) {
  check_problem_shapes(problem.op, problem.part, problem.tg, problem.exterior, problem.source);
  require(problem.exterior.values.cwiseAbs().maxCoeff() == 0.0,
          "galerkin backend requires a zero exterior datum");
  require(modes >= 1 && modes <= spectrum.eigenvalues.size(),
          "galerkin mode count out of range");

  const RegionPartition& part = *problem.part;
  const double cell = problem.op->grid.cell_volume();
  const double dt = problem.tg.dt();
  const double theta = problem.theta;
  const int m = problem.tg.steps;

  Mat src = gather(problem.source, part.interior);
  Mat coef = cell * spectrum.modes.leftCols(modes).transpose() * src; // modes x levels

  Mat alpha = Mat::Zero(modes, m + 1);
  if (problem.initial_interior)
    alpha.col(0) = cell * spectrum.modes.leftCols(modes).transpose() * *problem.initial_interior;

  for (int j = 0; j < modes; ++j) {
    const double lam = spectrum.eigenvalues[j];
    const double denom = 1 + theta * dt * lam;
    const double keep = 1 - (1 - theta) * dt * lam;
    if (problem.direction == Direction::Forward) {
      for (int k = 0; k < m; ++k)
        alpha(j, k + 1) =
            (keep * alpha(j, k) + dt * (theta * coef(j, k + 1) + (1 - theta) * coef(j, k))) /
            denom;
    } else {
      double next = 0;
      for (int k = m; k >= 0; --k) {
        alpha(j, k) = (keep * next + dt * coef(j, k)) / denom;
        next = alpha(j, k);
      }
    }
  }

  SpaceTimeField out = SpaceTimeField::zeros(problem.op->grid, problem.tg);
  Mat u = spectrum.modes.leftCols(modes) * alpha;
  scatter(out, part.interior, u);
  return out;
}

WaveStepper::WaveStepper(const FracOperator& op, const RegionPartition& part_, const TimeGrid& tg_)
    : part(&part_), tg(tg_) {
  const int ni = static_cast<int>(part->interior.size());
  const int nw = static_cast<int>(part->control.size());
  a_ii.resize(ni, ni);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < ni; ++c) a_ii(r, c) = op.matrix(part->interior[r], part->interior[c]);
  a_iw.resize(ni, nw);
  for (int r = 0; r < ni; ++r)
    for (int c = 0; c < nw; ++c) a_iw(r, c) = op.matrix(part->interior[r], part->control[c]);
  const double a = tg.dt() * tg.dt() / 4;
  m_minus = Mat::Identity(ni, ni) - a * a_ii;
  lhs.compute(Mat::Identity(ni, ni) + a * a_ii);
  if (lhs.info() != Eigen::Success)
    throw std::runtime_error("wave step matrix factorization failed");
}

WaveStepper::Traj WaveStepper::forward(const Mat& load_mid, const Vec* u0, const Vec* p0) const {
  const int ni = interior_size();
  if (u0) require(u0->size() == ni, "initial data size does not match interior mask");
  if (p0) require(p0->size() == ni, "initial velocity size does not match interior mask");
  const double dt = tg.dt();
  Traj t;
  t.u = Mat::Zero(ni, tg.levels());
  t.p = Mat::Zero(ni, tg.levels());
  if (u0) t.u.col(0) = *u0;
  if (p0) t.p.col(0) = *p0;
  for (int k = 0; k < tg.steps; ++k) {
    Vec rhs = m_minus * t.u.col(k) + dt * t.p.col(k) + (dt * dt / 2) * load_mid.col(k);
    t.u.col(k + 1) = lhs.solve(rhs);
    t.p.col(k + 1) = (2 / dt) * (t.u.col(k + 1) - t.u.col(k)) - t.p.col(k);
  }
  return t;
}

Mat WaveStepper::adjoint_chi(const Mat& dual_source, double w) const {
  const int ni = interior_size();
  const double dt = tg.dt();
  const int m = tg.steps;
  // transpose one-step map applied backward; source enters the position slot
  Mat xi = Mat::Zero(ni, m + 2), ze = Mat::Zero(ni, m + 2);
  for (int k = m; k >= 1; --k) {
    xi.col(k) = lhs.solve(m_minus * xi.col(k + 1) - dt * (a_ii * ze.col(k + 1))) +
                w * dual_source.col(k);
    ze.col(k) = lhs.solve(dt * xi.col(k + 1) + m_minus * ze.col(k + 1));
  }
  Mat chi = Mat::Zero(ni, m + 1);
  Mat t = Mat::Zero(ni, m); // t.col(j) pairs the step j -> j+1 load
  for (int j = 0; j < m; ++j)
    t.col(j) = lhs.solve((dt * dt / 2) * xi.col(j + 1) + dt * ze.col(j + 1));
  for (int k = 0; k <= m; ++k) {
    if (k > 0) chi.col(k) += 0.5 * t.col(k - 1);
    if (k < m) chi.col(k) += 0.5 * t.col(k);
  }
  return chi;
}

Mat WaveStepper::exterior_load_mid(const Mat& f_on_w) const {
  const int m = tg.steps;
  Mat load(a_iw.rows(), m);
  for (int j = 0; j < m; ++j) load.col(j) = -a_iw * (0.5 * (f_on_w.col(j) + f_on_w.col(j + 1)));
  return load;
}

Mat WaveStepper::w_trace(const Mat& interior_field) const {
  return a_iw.transpose() * interior_field;
}

WaveSolution solve_wave(const WaveProblem& problem) {
  check_problem_shapes(problem.op, problem.part, problem.tg, problem.exterior, problem.source);
  const RegionPartition& part = *problem.part;
  WaveStepper st(*problem.op, part, problem.tg);

  Mat fw = gather(problem.exterior, part.control);
  Mat src = gather(problem.source, part.interior);
  Mat load = st.exterior_load_mid(fw);
  for (int j = 0; j < problem.tg.steps; ++j)
    load.col(j) += 0.5 * (src.col(j) + src.col(j + 1));

  Vec u0 = problem.initial_interior.value_or(Vec::Zero(st.interior_size()));
  Vec p0 = problem.initial_velocity.value_or(Vec::Zero(st.interior_size()));
  WaveStepper::Traj t = st.forward(load, &u0, &p0);

  WaveSolution sol;
  sol.displacement = SpaceTimeField::zeros(problem.op->grid, problem.tg);
  sol.velocity = SpaceTimeField::zeros(problem.op->grid, problem.tg);
  scatter(sol.displacement, part.interior, t.u);
  scatter(sol.displacement, part.control, fw);
  scatter(sol.velocity, part.interior, t.p);
  return sol;
}

namespace {

// dual surrogate |g|_{-} = sqrt(cell * g' A_II^{-1} g); labeled a surrogate for
// the H^{-s} norm in reports
struct DualNorm {
  Eigen::LLT<Mat> inv;
  double cell;
  explicit DualNorm(const Mat& a_ii, double cell_) : cell(cell_) { inv.compute(a_ii); }
  double operator()(const Vec& g) const { return std::sqrt(cell * g.dot(inv.solve(g))); }
};

Mat time_derivative(const Mat& v, double dt) {
  const int m = static_cast<int>(v.cols()) - 1;
  Mat d(v.rows(), m + 1);
  for (int k = 0; k <= m; ++k) {
    if (k == 0)
      d.col(k) = (v.col(1) - v.col(0)) / dt;
    else if (k == m)
      d.col(k) = (v.col(m) - v.col(m - 1)) / dt;
    else
      d.col(k) = (v.col(k + 1) - v.col(k - 1)) / (2 * dt);
  }
  return d;
}

} // namespace

EnergyReport energy_report(const SpaceTimeField& traj, const HeatProblem& problem) {
  const RegionPartition& part = *problem.part;
  HeatStepper st(*problem.op, part, problem.tg, problem.theta);
  const double cell = problem.op->grid.cell_volume();
  Mat v = gather(traj, part.interior);
  Mat f = gather(problem.source, part.interior);
  auto w = trapezoid_weights(problem.tg, 0, problem.tg.steps);
  DualNorm dual(st.a_ii, cell);

  EnergyReport rep;
  double hs2 = 0, dt2 = 0, rhs2 = 0;
  Mat dv = time_derivative(v, problem.tg.dt());
  for (int k = 0; k <= problem.tg.steps; ++k) {
    rep.sup_l2 = std::max(rep.sup_l2, std::sqrt(cell * v.col(k).squaredNorm()));
    hs2 += w[k] * cell * v.col(k).dot(st.a_ii * v.col(k));
    double dn = dual(dv.col(k));
    dt2 += w[k] * dn * dn;
    double rn = dual(f.col(k));
    rhs2 += w[k] * rn * rn;
  }
  rep.hs_energy = std::sqrt(hs2);
  rep.dt_dual_surrogate = std::sqrt(dt2);
  rep.rhs_dual_surrogate = std::sqrt(rhs2);
  if (rep.rhs_dual_surrogate > 1e-300)
    rep.observed_constant =
        std::sqrt(rep.sup_l2 * rep.sup_l2 + hs2) / rep.rhs_dual_surrogate;
  return rep;
}

EnergyReport energy_report(const WaveSolution& sol, const WaveProblem& problem) {
  const RegionPartition& part = *problem.part;
  WaveStepper st(*problem.op, part, problem.tg);
  const double cell = problem.op->grid.cell_volume();
  Mat u = gather(sol.displacement, part.interior);
  Mat p = gather(sol.velocity, part.interior);
  Mat f = gather(problem.source, part.interior);
  auto w = trapezoid_weights(problem.tg, 0, problem.tg.steps);
  DualNorm dual(st.a_ii, cell);

  EnergyReport rep;
  double hs2 = 0, dt2 = 0, rhs2 = 0;
  for (int k = 0; k <= problem.tg.steps; ++k) {
    double en = 0.5 * cell * (p.col(k).squaredNorm() + u.col(k).dot(st.a_ii * u.col(k)));
    rep.sup_l2 = std::max(rep.sup_l2, std::sqrt(2 * en));
    hs2 += w[k] * cell * u.col(k).dot(st.a_ii * u.col(k));
    dt2 += w[k] * cell * p.col(k).squaredNorm();
    double rn = dual(f.col(k));
    rhs2 += w[k] * rn * rn;
  }
  rep.hs_energy = std::sqrt(hs2);
  rep.dt_dual_surrogate = std::sqrt(dt2);
  rep.rhs_dual_surrogate = std::sqrt(rhs2);
  if (rep.rhs_dual_surrogate > 1e-300)
    rep.observed_constant = rep.sup_l2 / rep.rhs_dual_surrogate;
  return rep;
}

std::vector<double> wave_energy_trace(const WaveSolution& sol, const WaveProblem& problem) {
  const RegionPartition& part = *problem.part;
  WaveStepper st(*problem.op, part, problem.tg);
  const double cell = problem.op->grid.cell_volume();
  Mat u = gather(sol.displacement, part.interior);
  Mat p = gather(sol.velocity, part.interior);
  std::vector<double> e(problem.tg.levels());
  for (int k = 0; k <= problem.tg.steps; ++k)
    e[k] = 0.5 * cell * (p.col(k).squaredNorm() + u.col(k).dot(st.a_ii * u.col(k)));
  return e;
}

double duality_residual(const SpaceTimeField& exterior_datum, const SpaceTimeField& dual_source,
                        const FracOperator& op, const RegionPartition& part, const TimeGrid& tg,
                        double theta) {
  HeatStepper st(op, part, tg, theta);
  const double cell = op.grid.cell_volume();
  const double dt = tg.dt();
  const int m = tg.steps;

  Mat fw = gather(exterior_datum, part.control);
  Mat v = gather(dual_source, part.interior);
  Mat u = st.forward(st.exterior_load(fw), nullptr);
  Mat phi = st.adjoint(v, dt);

  double lhs_pair = 0;
  for (int k = 1; k <= m; ++k) lhs_pair += cell * dt * u.col(k).dot(v.col(k));

  double rhs_pair = 0;
  for (int j = 0; j <= m; ++j) {
    Vec psi = Vec::Zero(st.interior_size());
    if (j >= 1) psi += theta * phi.col(j);
    if (j <= m - 1) psi += (1 - theta) * phi.col(j + 1);
    const Vec tr = st.w_trace(psi);
    rhs_pair += cell * dt * fw.col(j).dot(tr);
  }

  double nf = 0, nv = 0;
  for (int j = 0; j <= m; ++j) nf += cell * dt * fw.col(j).squaredNorm();
  for (int k = 1; k <= m; ++k) nv += cell * dt * v.col(k).squaredNorm();
  return std::abs(lhs_pair + rhs_pair) / (std::sqrt(nf) * std::sqrt(nv) + 1e-300);
}

} // namespace fhc
