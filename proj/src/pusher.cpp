#include <gyropic/pusher.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

#include <gyropic/rotation.hpp>

namespace gyropic {

namespace {

// 7-point Gauss-Legendre rule on [-1,1], exact through degree 13.
constexpr Real kGl7Node[7] = {
    -0.9491079123427585245261897, -0.7415311855993944398638648,
    -0.4058451513773971669066064, 0.0,
    0.4058451513773971669066064,  0.7415311855993944398638648,
    0.9491079123427585245261897};
constexpr Real kGl7Weight[7] = {
    0.1294849661688696932706114, 0.2797053914892766679014678,
    0.3818300505051189449503698, 0.4179591836734693877551020,
    0.3818300505051189449503698, 0.2797053914892766679014678,
    0.1294849661688696932706114};

template <class F>
Real gl7_panel(const F& g, Real a, Real b) {
  const Real mid = 0.5 * (a + b), half = 0.5 * (b - a);
  Real acc = 0.0;
  for (int i = 0; i < 7; ++i)
    acc += kGl7Weight[i] * g(mid + half * kGl7Node[i]);
  return half * acc;
}

// Accepts a panel once halving it no longer moves the result; the budget is
// split between the halves so the total stays within the requested accuracy.
template <class F>
Real gl7_adaptive(const F& g, Real a, Real b, Real whole, Real budget,
                  int depth) {
  const Real mid = 0.5 * (a + b);
  const Real left = gl7_panel(g, a, mid);
  const Real right = gl7_panel(g, mid, b);
  const Real sum = left + right;
  const Real err = std::abs(sum - whole);
  // A non-finite integrand can never satisfy the budget; bail out before the
  // recursion fans into 2^depth dead panels when a diverged state comes in.
  if (!std::isfinite(err) || depth >= 48 || err <= budget) return sum;
  return gl7_adaptive(g, a, mid, left, 0.5 * budget, depth + 1) +
         gl7_adaptive(g, mid, b, right, 0.5 * budget, depth + 1);
}

}  // namespace

Real gyro_period(const FieldModel& fm) {
  return 2.0 * std::numbers::pi_v<Real> / fm.Bfield(Vector3::Zero()).norm();
}

Real check_lipschitz(const FieldModel& fm, const Box3& box, Real bound,
                     int samples, unsigned long long seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> u01(0.0, 1.0);
  const Vector3 ext = box.extent();
  const Real scale = ext.norm();
  Real worst = 0.0;
  for (int i = 0; i < samples; ++i) {
    Vector3 x;
    for (int a = 0; a < 3; ++a) x[a] = box.lo[a] + u01(rng) * ext[a];
    Vector3 dir(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
    if (dir.norm() == 0.0) dir = Vector3(1, 0, 0);
    dir.normalize();
    // Separations spread over three decades to probe both local slope and
    // box-scale variation.
    const Real len = scale * std::pow(10.0, -4.0 + 3.0 * u01(rng));
    Vector3 y = x + len * dir;
    for (int a = 0; a < 3; ++a) y[a] = std::clamp(y[a], box.lo[a], box.hi[a]);
    const Real sep = (y - x).norm();
    if (sep == 0.0) continue;
    const Real q = (fm.Bfield(x) - fm.Bfield(y)).norm() / sep;
    if (!std::isfinite(q) || q > bound)
      throw std::invalid_argument(
          "field difference quotient " + std::to_string(q) +
          " exceeds the Lipschitz bound " + std::to_string(bound));
    worst = std::max(worst, q);
  }
  return worst;
}

Real line_integral_B(const FieldModel& fm, int component, int axis, Real from,
                     Real to, const Vector3& frozen, Real epsilon) {
  if (from == to) return 0.0;
  const auto g = [&](Real zeta) {
    Vector3 p = frozen;
    p[axis] = zeta;
    return fm.Bfield(epsilon * p)[component];
  };
  const Real whole = gl7_panel(g, from, to);
  const Real budget = 1e-12 * std::max(Real(1), std::abs(whole));
  return gl7_adaptive(g, from, to, whole, budget, 0) / epsilon;
}

ParticleState step_scpd(const ParticleState& s, const ScaledClock& clock,
                        const FieldModel& fm) {
  const Vector3 B = fm.Bfield(clock.epsilon * s.z);
  ParticleState out;
  out.z = s.z + clock.epsilon * (rot_exp_integral(B, clock.htilde) * s.w);
  out.w = rot_exp(B, clock.htilde) * s.w +
          (clock.epsilon * clock.htilde) * fm.Efield(out.z);
  return out;
}

ParticleState step_hsbx(const ParticleState& s, const ScaledClock& clock,
                        const FieldModel& fm) {
  const Real eps = clock.epsilon;
  const Real eh = eps * clock.htilde;
  Vector3 z = s.z;
  Vector3 w = s.w;

  // Each velocity sub-flow moves one position coordinate at constant speed
  // and trades the two line integrals along that leg with the other velocity
  // components. The leg for axis a sees the already-updated coordinates
  // before it and the old ones after it, which is why z doubles as the
  // frozen point (the moving slot is overwritten by the quadrature).
  const Real z1n = z.x();
  z.x() += eh * w.x();
  const Real ib31 = line_integral_B(fm, 2, 0, z1n, z.x(), z, eps);
  const Real ib21 = line_integral_B(fm, 1, 0, z1n, z.x(), z, eps);

  const Real z2n = z.y();
  z.y() += eh * (w.y() - ib31);
  const Real ib32 = line_integral_B(fm, 2, 1, z2n, z.y(), z, eps);
  const Real ib12 = line_integral_B(fm, 0, 1, z2n, z.y(), z, eps);

  const Real z3n = z.z();
  z.z() += eh * (w.z() + ib21 - ib12);
  const Real ib23 = line_integral_B(fm, 1, 2, z3n, z.z(), z, eps);
  const Real ib13 = line_integral_B(fm, 0, 2, z3n, z.z(), z, eps);

  w.x() += ib32 - ib23;
  w.y() += -ib31 + ib13;
  w.z() += ib21 - ib12;
  w += eh * fm.Efield(z);
  return {z, w};
}

namespace {

// Dormand-Prince 5(4) coefficients. d holds b - bhat, the weights of the
// embedded error estimate; stage 7 is the FSAL derivative at the new point.
constexpr Real a21 = 1.0 / 5;
constexpr Real a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr Real a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr Real a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
               a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr Real a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
               a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr Real b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
               b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr Real d1 = 71.0 / 57600, d3 = -71.0 / 16695, d4 = 71.0 / 1920,
               d5 = -17253.0 / 339200, d6 = 22.0 / 525, d7 = -1.0 / 40;

}  // namespace

std::vector<ParticleState> reference_solve(const ParticleState& s0,
                                           const ScaledClock& clock,
                                           const FieldModel& fm, Real tol,
                                           const std::vector<Real>& taus) {
  if (!(tol > 0.0))
    throw std::invalid_argument("reference_solve: tol must be positive");
  for (size_t i = 0; i < taus.size(); ++i)
    if (!(taus[i] >= 0.0) || (i > 0 && taus[i] < taus[i - 1]))
      throw std::invalid_argument(
          "reference_solve: taus must be ascending and nonnegative");

  std::vector<ParticleState> out;
  out.reserve(taus.size());
  if (taus.empty()) return out;

  const Real eps = clock.epsilon;
  const auto f = [&](const Vector6& y) {
    const ParticleState st = ParticleState::unpack(y);
    const Vector3 B = fm.Bfield(eps * st.z);
    const Vector3 E = fm.Efield(st.z);
    Vector6 d;
    d << eps * st.w, st.w.cross(B) + eps * E;
    return d;
  };

  Vector6 y = s0.packed();
  Vector6 k1 = f(y);
  Real tau = 0.0;
  const Real span = std::max(taus.back(), Real(1));
  const Real hmin = 1e-14 * span;
  Real h = std::min(Real(0.01) * span, std::max(taus.back(), hmin));

  for (const Real target : taus) {
    while (tau < target) {
      const Real remaining = target - tau;
      const Real htry = std::min(h, remaining);
      if (htry < hmin)
        throw std::runtime_error(
            "reference_solve: step size underflow at tau = " +
            std::to_string(tau));
      const Vector6 k2 = f(y + htry * (a21 * k1));
      const Vector6 k3 = f(y + htry * (a31 * k1 + a32 * k2));
      const Vector6 k4 = f(y + htry * (a41 * k1 + a42 * k2 + a43 * k3));
      const Vector6 k5 =
          f(y + htry * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const Vector6 k6 = f(y + htry * (a61 * k1 + a62 * k2 + a63 * k3 +
                                       a64 * k4 + a65 * k5));
      const Vector6 ynew =
          y + htry * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const Vector6 k7 = f(ynew);
      const Vector6 errv =
          htry * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
      Real errn = 0.0;
      for (int i = 0; i < 6; ++i) {
        const Real sc =
            tol * (1.0 + std::max(std::abs(y[i]), std::abs(ynew[i])));
        const Real r = errv[i] / sc;
        errn += r * r;
      }
      errn = std::sqrt(errn / 6.0);
      const Real factor = (errn == 0.0)
                              ? 5.0
                              : std::clamp(0.9 * std::pow(errn, -0.2),
                                           Real(0.2), Real(5.0));
      if (errn <= 1.0) {
        tau = (htry == remaining) ? target : tau + htry;
        y = ynew;
        k1 = k7;
      }
      h = htry * factor;
    }
    out.push_back(ParticleState::unpack(y));
  }
  return out;
}

Trajectory integrate(Scheme scheme, const ParticleState& s0,
                     const ScaledClock& clock, const FieldModel& fm,
                     Real ref_tol) {
  const auto t0 = std::chrono::steady_clock::now();
  const long long b0 = fm.counters->b.load();
  const long long e0 = fm.counters->e.load();
  const long long n = clock.steps();

  Trajectory tr;
  tr.tau.reserve(n + 1);
  tr.states.reserve(n + 1);
  tr.tau.push_back(0.0);
  tr.states.push_back(s0);

  if (scheme == Scheme::reference) {
    std::vector<Real> taus;
    taus.reserve(n);
    for (long long k = 1; k <= n; ++k) taus.push_back(k * clock.htilde);
    const std::vector<ParticleState> states =
        reference_solve(s0, clock, fm, ref_tol, taus);
    for (long long k = 1; k <= n; ++k) {
      tr.tau.push_back(taus[k - 1]);
      tr.states.push_back(states[k - 1]);
    }
  } else {
    ParticleState s = s0;
    for (long long k = 1; k <= n; ++k) {
      s = (scheme == Scheme::scpd) ? step_scpd(s, clock, fm)
                                   : step_hsbx(s, clock, fm);
      tr.tau.push_back(k * clock.htilde);
      tr.states.push_back(s);
    }
  }

  tr.b_evals = fm.counters->b.load() - b0;
  tr.e_evals = fm.counters->e.load() - e0;
  tr.wall_seconds =
      std::chrono::duration<Real>(std::chrono::steady_clock::now() - t0)
          .count();
  return tr;
}

void write_trajectory_csv(const Trajectory& tr, std::ostream& out) {
  out << "n,tau,z1,z2,z3,w1,w2,w3\n" << std::setprecision(17);
  for (size_t i = 0; i < tr.states.size(); ++i) {
    const ParticleState& s = tr.states[i];
    out << i << ',' << tr.tau[i] << ',' << s.z.x() << ',' << s.z.y() << ','
        << s.z.z() << ',' << s.w.x() << ',' << s.w.y() << ',' << s.w.z()
        << '\n';
  }
}

}  // namespace gyropic
