#include <doctest.h>

#include <cmath>
#include <random>

#include <gyropic/rotation.hpp>

using namespace gyropic;

namespace {

// Oracle: matrix exponential by scaling-and-squaring on the plain power
// series. Independent of the closed-form implementation under test.
Matrix3 expm_series(const Matrix3& A) {
  int squarings = 0;
  Real norm = A.cwiseAbs().sum();
  while (norm > 0.25) {
    norm *= 0.5;
    ++squarings;
  }
  const Matrix3 As = A / std::pow(2.0, squarings);
  Matrix3 term = Matrix3::Identity();
  Matrix3 sum = term;
  for (int k = 1; k <= 24; ++k) {
    term = (term * As) / Real(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum;
}

// Oracle for the integrated exponential: composite 5-point Gauss-Legendre
// applied to the series exponential.
Matrix3 integral_oracle(const Vector3& B, Real s) {
  static const Real nodes[5] = {-0.9061798459386640, -0.5384693101056831, 0.0,
                                0.5384693101056831, 0.9061798459386640};
  static const Real weights[5] = {0.2369268850561891, 0.4786286704993665,
                                  0.5688888888888889, 0.4786286704993665,
                                  0.2369268850561891};
  const Matrix3 H = hat(B);
  const int panels = 64;
  const Real h = s / panels;
  Matrix3 acc = Matrix3::Zero();
  for (int p = 0; p < panels; ++p) {
    const Real mid = (p + 0.5) * h;
    for (int q = 0; q < 5; ++q) {
      const Real sigma = mid + 0.5 * h * nodes[q];
      acc += (0.5 * h * weights[q]) * expm_series(sigma * H);
    }
  }
  return acc;
}

Real rel_err(const Matrix3& got, const Matrix3& want) {
  const Real scale = std::max(want.cwiseAbs().maxCoeff(), Real(1e-300));
  return (got - want).cwiseAbs().maxCoeff() / scale;
}

std::mt19937_64 rng(0x5eedULL);

Vector3 random_direction() {
  std::normal_distribution<Real> n(0.0, 1.0);
  Vector3 v(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-3) v = Vector3(n(rng), n(rng), n(rng));
  return v.normalized();
}

Vector3 random_vector(Real log10_lo, Real log10_hi) {
  std::uniform_real_distribution<Real> u(log10_lo, log10_hi);
  return std::pow(10.0, u(rng)) * random_direction();
}

}  // namespace

TEST_CASE("hat matrix layout and cross-product identity") {
  const Matrix3 H = hat(Vector3(1.0, 2.0, 3.0));
  Matrix3 want;
  want << 0, 3, -2, -3, 0, 1, 2, -1, 0;
  CHECK((H - want).cwiseAbs().maxCoeff() == 0.0);

  for (int i = 0; i < 200; ++i) {
    const Vector3 B = random_vector(-3.0, 3.0);
    const Vector3 y = random_vector(-3.0, 3.0);
    const Vector3 got = hat(B) * y;
    const Vector3 want_cross = y.cross(B);
    CHECK((got - want_cross).norm() <= 1e-15 * (B.norm() * y.norm()));
    CHECK((hat(B) + hat(B).transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("cube of hat collapses onto hat") {
  for (int i = 0; i < 500; ++i) {
    const Vector3 B = random_vector(-3.0, 3.0);
    const Real b2 = B.squaredNorm();
    const Matrix3 H = hat(B);
    const Matrix3 lhs = H * H * H;
    const Matrix3 rhs = -b2 * H;
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <=
          1e-12 * rhs.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("squared hat resolves the parallel projector") {
  // (B.y) B == hat(B)^2 y + |B|^2 y; residual scaled by the natural
  // magnitude |B|^2 |y| since the right side cancels for y orthogonal to B.
  for (int i = 0; i < 500; ++i) {
    const Vector3 B = random_vector(-3.0, 3.0);
    const Vector3 y = random_vector(-3.0, 3.0);
    const Vector3 lhs = B.dot(y) * B;
    const Vector3 rhs = hat(B) * (hat(B) * y) + B.squaredNorm() * y;
    CHECK((lhs - rhs).norm() <= 1e-12 * (B.squaredNorm() * y.norm()));
  }
}

TEST_CASE("rot_exp quarter turn about the z axis") {
  const Matrix3 R = rot_exp(Vector3(0.0, 0.0, 1.0), M_PI / 2.0);
  Matrix3 want;
  want << 0, 1, 0, -1, 0, 0, 0, 0, 1;
  CHECK((R - want).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("rot_exp matches series oracle") {
  for (int i = 0; i < 300; ++i) {
    const Vector3 B = random_vector(-3.0, 1.0);
    std::uniform_real_distribution<Real> u(1e-3, 4.0);
    const Real s = u(rng);
    if (s * B.norm() > 20.0) continue;
    CHECK(rel_err(rot_exp(B, s), expm_series(s * hat(B))) <= 1e-12);
  }
  // Large phase: closed form relies on libm argument reduction, the squaring
  // oracle loses a few digits, so compare loosely.
  const Vector3 B(30.0, -40.0, 120.0);
  CHECK(rel_err(rot_exp(B, 10.0), expm_series(10.0 * hat(B))) <= 1e-9);
}

TEST_CASE("rot_exp is a rotation and respects the group law") {
  for (int i = 0; i < 200; ++i) {
    const Vector3 B = random_vector(-2.0, 1.0);
    std::uniform_real_distribution<Real> u(0.0, 2.0);
    const Real s = u(rng), t = u(rng);
    const Matrix3 R = rot_exp(B, s);
    CHECK((R.transpose() * R - Matrix3::Identity()).cwiseAbs().maxCoeff() <=
          1e-13);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rel_err(rot_exp(B, s + t), rot_exp(B, s) * rot_exp(B, t)) <= 1e-12);
  }
  CHECK((rot_exp(Vector3(0.2, -0.4, 0.9), 0.0) - Matrix3::Identity())
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("rot_exp_integral quarter turn about the z axis") {
  const Matrix3 M = rot_exp_integral(Vector3(0.0, 0.0, 1.0), M_PI / 2.0);
  Matrix3 want;
  want << 1, 1, 0, -1, 1, 0, 0, 0, M_PI / 2.0;
  CHECK((M - want).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("rot_exp_integral matches quadrature oracle") {
  for (int i = 0; i < 120; ++i) {
    const Vector3 B = random_vector(-3.0, 1.0);
    std::uniform_real_distribution<Real> u(1e-3, 4.0);
    const Real s = u(rng);
    if (s * B.norm() > 20.0) continue;
    CHECK(rel_err(rot_exp_integral(B, s), integral_oracle(B, s)) <= 1e-11);
  }
}

TEST_CASE("zero field degenerates to identity and s-scaled identity") {
  const Vector3 zero = Vector3::Zero();
  CHECK((rot_exp(zero, 0.7) - Matrix3::Identity()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((rot_exp_integral(zero, 0.7) - 0.7 * Matrix3::Identity())
            .cwiseAbs()
            .maxCoeff() == 0.0);
}

TEST_CASE("series branch is continuous across the threshold") {
  // The implementation switches to Taylor factors below s*|B| = 1e-4; both
  // branches must agree there and match the oracle.
  // Both branches are compared against the branch-free oracle at the same
  // phase; a direct below-vs-above comparison would mostly measure the
  // (real) variation of the function in s.
  const Vector3 B = random_direction();
  const Real s_lo = 1e-4 / B.norm() * (1.0 - 1e-9);
  const Real s_hi = 1e-4 / B.norm() * (1.0 + 1e-9);
  CHECK(rel_err(rot_exp(B, s_lo), expm_series(s_lo * hat(B))) <= 1e-13);
  CHECK(rel_err(rot_exp(B, s_hi), expm_series(s_hi * hat(B))) <= 1e-13);
  CHECK(rel_err(rot_exp_integral(B, s_lo), integral_oracle(B, s_lo)) <= 1e-12);
  CHECK(rel_err(rot_exp_integral(B, s_hi), integral_oracle(B, s_hi)) <= 1e-12);

  // Deep inside the series branch.
  const Vector3 tiny(1e-9, 2e-9, -1e-9);
  CHECK(rel_err(rot_exp(tiny, 1.0), expm_series(hat(tiny))) <= 1e-13);
  CHECK(rel_err(rot_exp_integral(tiny, 1.0), integral_oracle(tiny, 1.0)) <=
        1e-12);
}
