#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>

#include <gyropic/diagnostics.hpp>
#include <gyropic/fem.hpp>
#include <gyropic/pic.hpp>
#include <gyropic/pusher.hpp>

using namespace gyropic;

namespace {

PhaseGridSpec cube_grid(const Box3& xb, const Box3& vb, int nx, int nv) {
  PhaseGridSpec g;
  g.xbounds = xb;
  g.vbounds = vb;
  g.dx = xb.extent() / nx;
  g.dv = vb.extent() / nv;
  return g;
}

FieldModel uniform_b(const Vector3& b) {
  FieldModel fm;
  fm.B = [b](const Vector3&) -> Vector3 { return b; };
  return fm;
}

// Bending-field single-particle experiment shared with the pusher suite.
FieldModel bending_field(Real eps) {
  FieldModel fm;
  fm.B = [eps](const Vector3& x) -> Vector3 {
    return Vector3(0, 0, 1) +
           Vector3(x.x() * (x.z() - x.y()), x.y() * (x.x() - x.z()),
                   x.z() * (x.y() - x.x())) /
               eps;
  };
  fm.E = [](const Vector3& z) -> Vector3 { return -z; };
  return fm;
}

Ensemble one_particle(const Vector3& x, const Vector3& v, Real alpha) {
  Ensemble ens;
  ens.X.push_back(x);
  ens.V.push_back(v);
  ens.alpha.push_back(alpha);
  return ens;
}

PicConfig meshfree_config(Real eps, Real htilde, long long steps) {
  PicConfig cfg;
  cfg.grid = cube_grid(Box3{-2 * Vector3::Ones(), 2 * Vector3::Ones()},
                       Box3{-2 * Vector3::Ones(), 2 * Vector3::Ones()}, 4, 4);
  cfg.shape = ShapeSpec::tent();
  cfg.r = 0.1;
  cfg.clock = ScaledClock{eps, htilde, eps * htilde * steps};
  cfg.rho0 = 0.0;
  cfg.exclude_self = true;
  return cfg;
}

PicConfig mesh_config(Real eps, Real htilde, long long steps) {
  PicConfig cfg;
  cfg.grid =
      cube_grid(Box3{0.15 * Vector3::Ones(), 0.85 * Vector3::Ones()},
                Box3{-0.6 * Vector3::Ones(), 0.6 * Vector3::Ones()}, 4, 2);
  cfg.mesh = MeshSpec{Box3{Vector3::Zero(), Vector3::Ones()}, {8, 8, 8}};
  cfg.shape = ShapeSpec::tent();
  cfg.r = 0.1;
  cfg.clock = ScaledClock{eps, htilde, eps * htilde * steps};
  cfg.rho0 = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent setups") {
  PicConfig ok = mesh_config(0.1, 0.1, 10);
  ok.external = uniform_b(Vector3(0, 0, 1));
  CHECK_NOTHROW(check_pic_config(ok));

  PicConfig free_ok = meshfree_config(0.1, 0.1, 10);
  free_ok.external = uniform_b(Vector3(0, 0, 1));
  CHECK_NOTHROW(check_pic_config(free_ok));

  PicConfig bad = ok;
  bad.cadence = 0;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  bad = ok;
  bad.r = 0.0;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  bad = ok;
  bad.scheme = Scheme::reference;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  bad = ok;
  bad.external.B = nullptr;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  // Support wider than a mesh cell.
  bad = ok;
  bad.r = 0.2;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  // Particle supports may not start against the Dirichlet wall.
  bad = ok;
  bad.grid.xbounds = Box3{0.05 * Vector3::Ones(), 0.95 * Vector3::Ones()};
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);

  bad = ok;
  bad.clock.epsilon = -1.0;
  CHECK_THROWS_AS(check_pic_config(bad), std::invalid_argument);
}

TEST_CASE("zero initial density gives identically zero diagnostics") {
  PicConfig cfg = mesh_config(0.1, 0.1, 3);
  cfg.external = uniform_b(Vector3(0, 0, 1));
  const auto f0 = [](const Vector3&, const Vector3&) -> Real { return 0.0; };
  const PicResult res = run_pic(cfg, f0);
  REQUIRE(res.series.size() == 4);
  for (const auto& row : res.series) {
    CHECK(row.mass == 0.0);
    CHECK(row.momentum.norm() == 0.0);
    CHECK(row.H == 0.0);
    CHECK(row.He == 0.0);
  }
  CHECK(res.total_iterations == 0);  // zero load short-circuits the solver
  CHECK(res.state.size() == 0);
}

TEST_CASE("mesh-free run with excluded self-field matches the bare pusher") {
  ParticleState s0;
  s0.z = Vector3(0.3, 0.2, -1.4);
  s0.w = Vector3(-0.7, 0.08, 0.2);
  const Real eps = 0.05;

  for (const Scheme scheme : {Scheme::scpd, Scheme::hsbx}) {
    const long long steps = scheme == Scheme::scpd ? 50 : 20;
    PicConfig cfg = meshfree_config(eps, 0.1, steps);
    cfg.scheme = scheme;
    cfg.external = bending_field(eps);

    const PicResult res = run_pic(cfg, one_particle(s0.z, s0.w, 1.0));
    const Trajectory tr = integrate(scheme, s0, cfg.clock, cfg.external);
    REQUIRE(tr.states.size() == static_cast<size_t>(steps) + 1);
    CHECK((res.state.X[0] - tr.states.back().z).norm() +
              (res.state.V[0] - tr.states.back().w).norm() <=
          1e-12);
  }
}

TEST_CASE("excluded self-field leaves a lone particle on its gyrocircle") {
  // No external E and no other sources: the kernel sum is empty, so the
  // velocity sees the magnetic rotation alone.
  PicConfig cfg = meshfree_config(0.1, 0.2, 25);
  cfg.external = uniform_b(Vector3(0, 0, 2));

  const Vector3 x0(0.5, 0.5, 0.5), v0(0.3, 0.1, -0.2);
  const PicResult res = run_pic(cfg, one_particle(x0, v0, 1.0));

  ParticleState s0;
  s0.z = x0;
  s0.w = v0;
  const Trajectory tr = integrate(Scheme::scpd, s0, cfg.clock, cfg.external);
  CHECK((res.state.X[0] - tr.states.back().z).norm() +
            (res.state.V[0] - tr.states.back().w).norm() <=
        1e-14);
  CHECK(std::abs(res.state.V[0].norm() - v0.norm()) <= 1e-14);
}

TEST_CASE("mesh run equals the manual deposit-solve-push composition") {
  PicConfig cfg = mesh_config(0.1, 0.2, 2);
  cfg.external = uniform_b(Vector3(0, 0, 2));

  Ensemble ens0;
  ens0.X = {Vector3(0.4, 0.5, 0.45), Vector3(0.6, 0.35, 0.55),
            Vector3(0.5, 0.65, 0.6)};
  ens0.V = {Vector3(0.2, -0.1, 0.05), Vector3(-0.15, 0.25, -0.1),
            Vector3(0.1, 0.1, 0.2)};
  ens0.alpha = {0.4, 0.7, 0.5};

  // Oracle: compose one deposit, one solve, one frozen push per step from
  // the already-tested primitives, in that order, sources at step start.
  Ensemble manual = ens0;
  for (int step = 0; step < 2; ++step) {
    const VectorX rhs = deposit(manual, *cfg.mesh, cfg.shape, cfg.r, cfg.rho0);
    const NodalField phi = solve_poisson(rhs, *cfg.mesh);
    FieldModel frozen;
    frozen.B = cfg.external.B;
    frozen.E = [phi](const Vector3& z) -> Vector3 {
      return eval_field(phi, z);
    };
    Ensemble next = manual;
    for (size_t j = 0; j < manual.size(); ++j) {
      const ParticleState out =
          step_scpd({manual.X[j], manual.V[j]}, cfg.clock, frozen);
      next.X[j] = out.z;
      next.V[j] = out.w;
    }
    manual = next;
  }

  const PicResult res = run_pic(cfg, ens0);
  REQUIRE(res.state.size() == 3);
  for (size_t j = 0; j < 3; ++j) {
    CHECK((res.state.X[j] - manual.X[j]).norm() <= 1e-14);
    CHECK((res.state.V[j] - manual.V[j]).norm() <= 1e-14);
  }
}

TEST_CASE("mirror-symmetric pair stays mirror-symmetric") {
  // Reflection through the x3 = 1/2 plane with B along the plane normal
  // commutes with the continuous flow; the discrete loop must hold it to
  // rounding accumulation over 100 steps.
  PicConfig cfg = mesh_config(0.1, 0.05, 1);  // one step per call
  cfg.external = uniform_b(Vector3(0, 0, 2));

  Ensemble ens;
  ens.X = {Vector3(0.35, 0.45, 0.3), Vector3(0.35, 0.45, 0.7)};
  ens.V = {Vector3(0.2, -0.1, 0.15), Vector3(0.2, -0.1, -0.15)};
  ens.alpha = {0.5, 0.5};

  const auto mirror_x = [](const Vector3& x) -> Vector3 {
    return Vector3(x.x(), x.y(), 1.0 - x.z());
  };
  const auto mirror_v = [](const Vector3& v) -> Vector3 {
    return Vector3(v.x(), v.y(), -v.z());
  };

  for (int step = 0; step < 100; ++step) {
    const PicResult res = run_pic(cfg, ens);
    ens = res.state;
    const Real defect = (ens.X[1] - mirror_x(ens.X[0])).norm() +
                        (ens.V[1] - mirror_v(ens.V[0])).norm();
    CHECK(defect <= 1e-10);
    CHECK(std::abs(res.series.back().momentum.z()) <= 1e-12);
  }
}

TEST_CASE("mass is bit-constant and thread count does not change anything") {
  PicConfig cfg = mesh_config(0.1, 0.1, 10);
  cfg.cadence = 3;
  cfg.external = uniform_b(Vector3(0, 0, 1));
  const auto f0 = [](const Vector3& x, const Vector3& v) -> Real {
    return std::exp(-(x - 0.5 * Vector3::Ones()).squaredNorm() / 0.04 -
                    v.squaredNorm() / 0.5);
  };

  const PicResult a = run_pic(cfg, f0, 1);
  const PicResult b = run_pic(cfg, f0, 3);

  REQUIRE(a.series.size() == 5);  // steps 0, 3, 6, 9, 10
  CHECK(a.series.back().step == 10);
  const Real mass0 = a.series.front().mass;
  CHECK(mass0 > 0.0);
  for (const auto& row : a.series) CHECK(row.mass == mass0);

  REQUIRE(b.series.size() == a.series.size());
  for (size_t i = 0; i < a.series.size(); ++i) {
    CHECK(a.series[i].step == b.series[i].step);
    CHECK(a.series[i].tau == b.series[i].tau);
    CHECK(a.series[i].mass == b.series[i].mass);
    CHECK(a.series[i].momentum == b.series[i].momentum);
    CHECK(a.series[i].H == b.series[i].H);
    CHECK(a.series[i].He == b.series[i].He);
  }
  REQUIRE(a.state.size() == b.state.size());
  for (size_t j = 0; j < a.state.size(); ++j) {
    CHECK(a.state.X[j] == b.state.X[j]);
    CHECK(a.state.V[j] == b.state.V[j]);
    CHECK(a.state.alpha[j] == b.state.alpha[j]);
  }
}

TEST_CASE("escaped particles free-stream and drop out of the charge") {
  PicConfig cfg = mesh_config(0.1, 0.1, 15);
  cfg.external = uniform_b(Vector3(0, 0, 1e-3));

  // Tiny weight so the particle's own grid field cannot bend it and the
  // trajectory is externally driven to a good approximation.
  const Real alpha = 1e-6;
  const Vector3 x0(0.78, 0.5, 0.5), v0(3.0, 0.0, 0.0);
  const PicResult res = run_pic(cfg, one_particle(x0, v0, alpha));

  // Support fully outside by the end: wholly clipped, still owned.
  CHECK(res.last_deposit.outside_particles == 1);
  CHECK(res.last_deposit.clipped == doctest::Approx(alpha).epsilon(1e-12));
  for (const auto& row : res.series) CHECK(row.mass == alpha);
  CHECK(res.series.back().He == 0.0);

  // Kept moving after leaving the box, velocity only gyrated by the weak B.
  CHECK(res.state.X[0].x() > 1.05);
  CHECK((res.state.V[0] - v0).norm() <= 1e-2);
  CHECK(res.max_clipped == doctest::Approx(alpha).epsilon(1e-12));
}

TEST_CASE("diagnostics csv layout") {
  PicConfig cfg = mesh_config(0.1, 0.1, 2);
  cfg.external = uniform_b(Vector3(0, 0, 1));
  const PicResult res =
      run_pic(cfg, one_particle(Vector3(0.5, 0.5, 0.5), Vector3(0.2, 0, 0), 0.8));

  std::ostringstream out;
  write_pic_csv(res.series, out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,tau,mass,p1,p2,p3,H,He");
  int rows = 0;
  while (std::getline(in, line)) {
    CHECK(std::count(line.begin(), line.end(), ',') == 7);
    ++rows;
  }
  CHECK(rows == 3);

  // First data row is step 0 at tau 0 with the initial mass.
  std::istringstream again(out.str());
  std::getline(again, line);
  std::getline(again, line);
  CHECK(line.rfind("0,0,0.8", 0) == 0);
}
