#pragma once

#include <atomic>
#include <cmath>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include <gyropic/types.hpp>

// Single-particle integrators for the rescaled equations
//   dz/dtau = eps w,   dw/dtau = w x B(eps z) + eps E(z),
// stepped in the scaled time htilde = h / eps.  Two one-step maps are
// provided: scpd freezes B at the step start and applies the exact
// gyrorotation, hsbx is the splitting built from per-axis magnetic line
// integrals that keeps the particle Poisson structure.  A fifth-order
// embedded Runge-Kutta solver serves as the reference.

namespace gyropic {

// Step bookkeeping: physical horizon T with step h = eps * htilde, so the
// scheme takes steps() steps of size htilde in tau up to tau_end = T / eps.
struct ScaledClock {
  Real epsilon{1.0};
  Real htilde{0.1};
  Real T{1.0};

  Real h() const { return epsilon * htilde; }
  long long steps() const {
    return static_cast<long long>(std::floor(T / h() + 1e-9));
  }
  Real tau_end() const { return T / epsilon; }
};

struct FieldCounters {
  std::atomic<long long> b{0};
  std::atomic<long long> e{0};
};

// Callable field pair. E may be left empty for a pure magnetic problem.
// Copies share the evaluation counters, so a Trajectory can report how many
// field calls an integration cost even though the model is passed by const
// reference. Lambdas bound here must declare `-> Vector3`: a deduced return
// of a compound expression is an expression template whose operand
// temporaries die at lambda exit, and the conversion inside std::function
// then reads freed stack.
struct FieldModel {
  std::function<Vector3(const Vector3&)> B;
  std::function<Vector3(const Vector3&)> E;
  std::shared_ptr<FieldCounters> counters = std::make_shared<FieldCounters>();

  Vector3 Bfield(const Vector3& x) const {
    counters->b.fetch_add(1, std::memory_order_relaxed);
    return B(x);
  }
  Vector3 Efield(const Vector3& z) const {
    if (!E) return Vector3::Zero();
    counters->e.fetch_add(1, std::memory_order_relaxed);
    return E(z);
  }
};

// 2 pi / |B(0)|, the bounce scale used to pick experiment horizons.
Real gyro_period(const FieldModel& fm);

// Samples difference quotients |B(x)-B(y)|/|x-y| at random nearby pairs in
// box and returns the largest one; throws std::invalid_argument when it
// exceeds bound (non-finite values count as exceeding).
Real check_lipschitz(const FieldModel& fm, const Box3& box, Real bound,
                     int samples = 200, unsigned long long seed = 0x11f5);

// (1/eps) int_from^to B_component(eps p(zeta)) dzeta where p equals frozen
// except that coordinate `axis` runs over the integration variable.
// Adaptive bisection on 7-point Gauss panels to 1e-12 relative accuracy.
Real line_integral_B(const FieldModel& fm, int component, int axis, Real from,
                     Real to, const Vector3& frozen, Real epsilon);

// Frozen-field step: exact gyrorotation for B(eps z^n) plus an electric kick
// evaluated at the new position.
ParticleState step_scpd(const ParticleState& s, const ScaledClock& clock,
                        const FieldModel& fm);

// Splitting step built from the three velocity sub-flows and the electric
// kick. Each sub-flow advances one position coordinate and exchanges the
// matching magnetic line integrals with the other two velocity components.
ParticleState step_hsbx(const ParticleState& s, const ScaledClock& clock,
                        const FieldModel& fm);

// Integrates the exact equations with an adaptive embedded 5(4) pair and
// returns the states at the requested tau values (ascending, nonnegative).
// Throws std::runtime_error if the controller underflows the step size.
std::vector<ParticleState> reference_solve(const ParticleState& s0,
                                           const ScaledClock& clock,
                                           const FieldModel& fm, Real tol,
                                           const std::vector<Real>& taus);

enum class Scheme { scpd, hsbx, reference };

struct Trajectory {
  std::vector<Real> tau;
  std::vector<ParticleState> states;
  long long b_evals = 0;
  long long e_evals = 0;
  Real wall_seconds = 0.0;
};

// Runs clock.steps() steps of the chosen map (or the reference solver
// sampled on the same grid) from s0, recording every state.
Trajectory integrate(Scheme scheme, const ParticleState& s0,
                     const ScaledClock& clock, const FieldModel& fm,
                     Real ref_tol = 1e-12);

// Columns n,tau,z1,z2,z3,w1,w2,w3 with full double precision.
void write_trajectory_csv(const Trajectory& tr, std::ostream& out);

}  // namespace gyropic
