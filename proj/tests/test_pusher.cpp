#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gyropic/pusher.hpp>
#include <gyropic/rotation.hpp>

using namespace gyropic;

namespace {

FieldModel uniform_bz(Real e_off = 0.0) {
  FieldModel fm;
  fm.B = [](const Vector3&) { return Vector3(0, 0, 1); };
  if (e_off != 0.0)
    fm.E = [e_off](const Vector3&) { return Vector3(e_off, 0, 0); };
  return fm;
}

// Bending profile used across the structure tests: unit guide field plus a
// divergence-free linear shear and a cyclic quadratic term, so the gradient
// at the origin is order one.
Vector3 poly_b(const Vector3& x) {
  return Vector3(x.z() + x.x() * (x.z() - x.y()),
                 x.y() * (x.x() - x.z()),
                 1.0 + x.x() + x.z() * (x.y() - x.x()));
}

FieldModel poly_field(bool with_e) {
  FieldModel fm;
  fm.B = [](const Vector3& x) { return poly_b(x); };
  if (with_e)
    fm.E = [](const Vector3& z) { return Vector3(-z.x(), -z.y(), -z.z()); };
  return fm;
}

Real fit_slope(const std::vector<Real>& h, const std::vector<Real>& e) {
  const int n = static_cast<int>(h.size());
  Real sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const Real X = std::log(h[i]), Y = std::log(e[i]);
    sx += X;
    sy += Y;
    sxx += X * X;
    sxy += X * Y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Real state_diff(const ParticleState& a, const ParticleState& b) {
  return (a.z - b.z).norm() + (a.w - b.w).norm();
}

Matrix6 poisson_tensor(const ParticleState& s, const FieldModel& fm,
                       Real epsilon) {
  Matrix6 P = Matrix6::Zero();
  P.block<3, 3>(0, 3) = Matrix3::Identity();
  P.block<3, 3>(3, 0) = -Matrix3::Identity();
  P.block<3, 3>(3, 3) = hat(fm.Bfield(epsilon * s.z)) / epsilon;
  return P;
}

template <class Step>
Real poisson_residual(const Step& step, const ParticleState& s,
                      const FieldModel& fm, Real epsilon) {
  const Real delta = 1e-6;
  Matrix6 J;
  for (int l = 0; l < 6; ++l) {
    Vector6 p = s.packed(), m = s.packed();
    p[l] += delta;
    m[l] -= delta;
    const Vector6 fp = step(ParticleState::unpack(p)).packed();
    const Vector6 fme = step(ParticleState::unpack(m)).packed();
    J.col(l) = (fp - fme) / (2.0 * delta);
  }
  const Matrix6 lhs = J * poisson_tensor(s, fm, epsilon) * J.transpose();
  const Matrix6 rhs = poisson_tensor(step(s), fm, epsilon);
  return (lhs - rhs).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("scpd step on a uniform field reproduces the exact gyration") {
  const FieldModel fm = uniform_bz();
  const ScaledClock clock{0.01, 0.3, 1.0};
  ParticleState s;
  s.w = Vector3(1, 0, 0);
  const ParticleState out = step_scpd(s, clock, fm);
  const Vector3 wex(std::cos(0.3), -std::sin(0.3), 0.0);
  CHECK((out.w - wex).norm() <= 1e-15);
  const Vector3 zex =
      clock.epsilon * Vector3(std::sin(0.3), std::cos(0.3) - 1.0, 0.0);
  CHECK((out.z - zex).norm() <= 1e-16);
}

TEST_CASE("zero step size is the identity for both schemes") {
  const FieldModel fm = poly_field(true);
  const ScaledClock clock{0.1, 0.0, 1.0};
  ParticleState s;
  s.z = Vector3(0.2, -0.4, 0.7);
  s.w = Vector3(-0.3, 0.5, 0.1);
  const ParticleState a = step_scpd(s, clock, fm);
  CHECK(state_diff(a, s) == 0.0);
  const ParticleState b = step_hsbx(s, clock, fm);
  CHECK(state_diff(b, s) == 0.0);
}

TEST_CASE("hsbx step matches the hand-evaluated constant-field example") {
  // B = e3, E = 0, eps = 1, step 0.1, from rest position with unit w1:
  // only two line integrals survive and the six updates give these values.
  const FieldModel fm = uniform_bz();
  const ScaledClock clock{1.0, 0.1, 1.0};
  ParticleState s;
  s.w = Vector3(1, 0, 0);
  const ParticleState out = step_hsbx(s, clock, fm);
  CHECK((out.z - Vector3(0.1, -0.01, 0.0)).norm() <= 1e-12);
  CHECK((out.w - Vector3(0.99, -0.1, 0.0)).norm() <= 1e-12);
}

TEST_CASE("line integrals: degenerate, constant, polynomial antiderivative") {
  const FieldModel fm = poly_field(false);
  const Real eps = 0.07;
  const Vector3 frozen(0.4, -0.6, 0.9);

  CHECK(line_integral_B(fm, 0, 0, 0.3, 0.3, frozen, eps) == 0.0);

  const FieldModel ub = uniform_bz();
  const Real got_c = line_integral_B(ub, 2, 1, -0.2, 0.5, frozen, eps);
  CHECK(got_c == doctest::Approx(0.7 / eps).epsilon(1e-13));

  // B_1(x) = x3 + x1 (x3 - x2) along axis 1: the symbolic antiderivative
  // gives z3 (b - a) + eps (z3 - z2) (b^2 - a^2) / 2.
  const Real a = -0.3, b = 0.8;
  const Real want1 = frozen.z() * (b - a) +
                     eps * (frozen.z() - frozen.y()) * (b * b - a * a) / 2.0;
  const Real got1 = line_integral_B(fm, 0, 0, a, b, frozen, eps);
  CHECK(got1 == doctest::Approx(want1).epsilon(1e-12));

  // B_3(x) = 1 + x1 + x3 (x2 - x1) along axis 2 with (z1, ., z3) frozen.
  const Real want3 = (b - a) / eps + frozen.x() * (b - a) +
                     eps * frozen.z() * (b * b - a * a) / 2.0 -
                     eps * frozen.z() * frozen.x() * (b - a);
  const Real got3 = line_integral_B(fm, 2, 1, a, b, frozen, eps);
  CHECK(got3 == doctest::Approx(want3).epsilon(1e-12));

  // Reversed endpoints flip the sign.
  CHECK(line_integral_B(fm, 0, 0, b, a, frozen, eps) ==
        doctest::Approx(-want1).epsilon(1e-12));
}

TEST_CASE("scpd kinetic flow is exact for uniform fields") {
  std::mt19937_64 rng(0xb0b57ULL);
  std::uniform_real_distribution<Real> u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector3 bdir = Vector3(u(rng), u(rng), u(rng)) * 2.0;
    FieldModel fm;
    fm.B = [bdir](const Vector3&) { return bdir; };
    const Real htilde = 0.05 + 0.4 * std::abs(u(rng));
    const ScaledClock clock{0.02, htilde, 1.0};
    ParticleState s;
    s.z = Vector3(u(rng), u(rng), u(rng));
    s.w = Vector3(u(rng), u(rng), u(rng));
    const ParticleState out = step_scpd(s, clock, fm);
    const Vector3 wex = rot_exp(bdir, htilde) * s.w;
    const Vector3 zex =
        s.z + clock.epsilon * (rot_exp_integral(bdir, htilde) * s.w);
    CHECK((out.w - wex).norm() <= 1e-13);
    CHECK((out.z - zex).norm() <= 1e-13);
    CHECK(std::abs(out.w.norm() - s.w.norm()) <= 1e-13);
  }
}

TEST_CASE("scpd norm drift over many steps stays at rounding level") {
  const FieldModel fm = uniform_bz();
  const ScaledClock clock{0.01, 0.2, 0.01 * 0.2 * 10000};
  ParticleState s;
  s.w = Vector3(0.6, -0.8, 0.0);
  const Trajectory tr = integrate(Scheme::scpd, s, clock, fm);
  REQUIRE(tr.states.size() == 10001);
  Real worst = 0.0;
  for (const ParticleState& st : tr.states)
    worst = std::max(worst, std::abs(st.w.norm() - 1.0));
  CHECK(worst <= 1e-13);
}

TEST_CASE("reference solver hits closed-form benchmarks") {
  // Uniform field: the kinetic flow is an exact rotation plus drift.
  const FieldModel fm = uniform_bz();
  const Real tol = 1e-12;
  ParticleState s;
  s.z = Vector3(0.1, 0.2, -0.3);
  s.w = Vector3(0.7, -0.4, 0.5);
  const ScaledClock clock{0.05, 0.5, 0.05 * 5.0};
  const std::vector<Real> taus = {10.0};
  const std::vector<ParticleState> out =
      reference_solve(s, clock, fm, tol, taus);
  REQUIRE(out.size() == 1);
  const Vector3 wex = rot_exp(Vector3(0, 0, 1), 10.0) * s.w;
  const Vector3 zex =
      s.z + clock.epsilon * (rot_exp_integral(Vector3(0, 0, 1), 10.0) * s.w);
  CHECK((out[0].w - wex).norm() <= 10 * tol * 10.0);
  CHECK((out[0].z - zex).norm() <= 10 * tol * 10.0);
}

TEST_CASE("reference solver conserves the energy of a confining field") {
  // E = -z makes H = |w|^2/2 + |z|^2/2 invariant; the magnetic term does no
  // work regardless of the bending profile.
  const FieldModel fm = poly_field(true);
  const Real eps = 0.1;
  const ScaledClock clock{eps, 0.1, 1.0 / eps};
  ParticleState s;
  s.z = Vector3(0.3, 0.2, -1.0);
  s.w = Vector3(-0.7, 0.1, 0.2);
  const Real h0 = 0.5 * s.w.squaredNorm() + 0.5 * s.z.squaredNorm();
  std::vector<Real> taus;
  for (int k = 1; k <= 10; ++k) taus.push_back(10.0 * k);
  const std::vector<ParticleState> out =
      reference_solve(s, clock, fm, 1e-12, taus);
  for (const ParticleState& st : out) {
    const Real h = 0.5 * st.w.squaredNorm() + 0.5 * st.z.squaredNorm();
    CHECK(std::abs(h - h0) <= 1e-8);
  }
}

TEST_CASE("reference solver self-converges under tolerance tightening") {
  const FieldModel fm = poly_field(true);
  const ScaledClock clock{0.05, 0.1, 1.0};
  ParticleState s;
  s.z = Vector3(0.2, -0.1, 0.4);
  s.w = Vector3(0.5, 0.3, -0.6);
  const std::vector<Real> taus = {20.0};
  const ParticleState base = reference_solve(s, clock, fm, 1e-13, taus)[0];
  Real prev = 1e100;
  for (Real tol : {1e-7, 1e-9, 1e-11}) {
    const ParticleState got = reference_solve(s, clock, fm, tol, taus)[0];
    const Real diff = state_diff(got, base);
    CHECK(diff < prev);
    prev = diff;
  }
}

TEST_CASE("hsbx preserves the particle Poisson structure where scpd does not") {
  const FieldModel fm = poly_field(true);
  const Real eps = 0.2;
  const ScaledClock clock{eps, 0.05, 1.0};
  ParticleState s;
  s.z = Vector3(0.3, -0.2, 0.5);
  s.w = Vector3(0.4, 0.7, -0.1);

  const auto hs = [&](const ParticleState& q) {
    return step_hsbx(q, clock, fm);
  };
  const auto sc = [&](const ParticleState& q) {
    return step_scpd(q, clock, fm);
  };
  const Real res_h = poisson_residual(hs, s, fm, eps);
  const Real res_s = poisson_residual(sc, s, fm, eps);
  CHECK(res_h <= 1e-4);
  CHECK(res_s >= 10.0 * res_h);
}

TEST_CASE("hsbx error is quadratic for coarse steps, linear for fine ones") {
  // Over horizons spanning many gyroperiods (tau_end = 1/eps) the endpoint
  // error behaves like C1 eps htilde + C2 htilde^2: measured order 2 while
  // the quadratic term dominates, falling to 1 once htilde drops below a
  // multiple of eps. Probe one scan in each regime.
  const FieldModel fm = poly_field(true);
  ParticleState s;
  s.z = Vector3(0.3, 0.2, -0.6);
  s.w = Vector3(-0.5, 0.4, 0.3);

  const auto endpoint_err = [&](Real eps, Real htilde,
                                const ParticleState& ref) {
    const ScaledClock clock{eps, htilde, 1.0};  // T = 1, tau_end = 1/eps
    const Trajectory tr = integrate(Scheme::hsbx, s, clock, fm);
    return state_diff(tr.states.back(), ref);
  };

  {
    const Real eps = 0.001;
    const ParticleState ref =
        reference_solve(s, {eps, 0.125, 1.0}, fm, 1e-12, {1.0 / eps})[0];
    std::vector<Real> hs{0.125, 0.0625, 0.03125}, errs;
    for (Real htilde : hs) errs.push_back(endpoint_err(eps, htilde, ref));
    CAPTURE(errs[0]);
    CAPTURE(errs[1]);
    CAPTURE(errs[2]);
    const Real slope = fit_slope(hs, errs);
    CHECK(slope >= 1.6);
    CHECK(slope <= 2.4);
  }

  {
    // Past the crossover the pairwise order collapses well below 2; with
    // this profile it lands near 1 at htilde = 1/32 -> 1/64.
    const Real eps = 0.01;
    const ParticleState ref =
        reference_solve(s, {eps, 0.125, 1.0}, fm, 1e-12, {1.0 / eps})[0];
    const Real e32 = endpoint_err(eps, 0.03125, ref);
    const Real e64 = endpoint_err(eps, 0.015625, ref);
    CAPTURE(e32);
    CAPTURE(e64);
    const Real order = std::log2(e32 / e64);
    CHECK(order >= 0.3);
    CHECK(order <= 1.5);
  }
}

TEST_CASE("integrate bookkeeping: step count, sampling, counters, csv") {
  const FieldModel fm = poly_field(true);
  ParticleState s;
  s.z = Vector3(0.1, 0.0, -0.2);
  s.w = Vector3(0.3, -0.1, 0.2);

  const ScaledClock none{0.1, 0.5, 0.01};  // T/(eps htilde) < 1: zero steps
  const Trajectory t0 = integrate(Scheme::hsbx, s, none, fm);
  REQUIRE(t0.states.size() == 1);
  CHECK(t0.tau[0] == 0.0);
  CHECK(state_diff(t0.states[0], s) == 0.0);

  const ScaledClock clock{0.1, 0.25, 0.1 * 0.25 * 7.9};  // 7 full steps
  const Trajectory tr = integrate(Scheme::scpd, s, clock, fm);
  REQUIRE(tr.states.size() == 8);
  CHECK(tr.tau[7] == doctest::Approx(7 * 0.25).epsilon(1e-15));
  CHECK(tr.b_evals > 0);
  CHECK(tr.e_evals > 0);
  CHECK(tr.wall_seconds >= 0.0);

  std::ostringstream out;
  write_trajectory_csv(tr, out);
  std::istringstream in(out.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "n,tau,z1,z2,z3,w1,w2,w3");
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    CHECK(cell == std::to_string(rows));
    Real vals[7];
    for (int c = 0; c < 7; ++c) {
      REQUIRE(std::getline(row, cell, ','));
      vals[c] = std::stod(cell);
    }
    CHECK(vals[0] == tr.tau[rows]);
    CHECK(vals[1] == tr.states[rows].z.x());
    CHECK(vals[6] == tr.states[rows].w.z());
    ++rows;
  }
  CHECK(rows == 8);
}

TEST_CASE("sampled difference quotients flag a non-lipschitz profile") {
  const FieldModel fm = poly_field(false);
  const Box3 box{Vector3(-1, -1, -1), Vector3(1, 1, 1)};
  CHECK(check_lipschitz(fm, box, 10.0) <= 10.0);

  FieldModel rough;
  rough.B = [](const Vector3& x) {
    return Vector3(std::sqrt(std::abs(x.x())) * 1e4, 0, 0);
  };
  CHECK_THROWS_AS(check_lipschitz(rough, box, 10.0), std::invalid_argument);
}

TEST_CASE("reference scheme through integrate matches reference_solve") {
  const FieldModel fm = poly_field(true);
  const ScaledClock clock{0.05, 0.5, 0.05 * 10.0};  // 20 steps to tau = 10
  ParticleState s;
  s.z = Vector3(0.05, 0.15, -0.25);
  s.w = Vector3(0.45, -0.35, 0.25);
  const Trajectory tr = integrate(Scheme::reference, s, clock, fm);
  REQUIRE(tr.states.size() == 21);
  const std::vector<ParticleState> direct =
      reference_solve(s, clock, fm, 1e-12, {10.0});
  CHECK(state_diff(tr.states.back(), direct[0]) <= 1e-10);
}
