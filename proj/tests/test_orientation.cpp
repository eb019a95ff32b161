#include <doctest.h>

#include <cmath>

#include "spinecade/orientation.hpp"
#include "spinecade/rng.hpp"
#include "test_util.hpp"

using namespace spinecade;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Brute-force accumulation oracle over the clamped window.
SymMat2 tensor_bruteforce(const Image2D<double>& gx, const Image2D<double>& gy,
                          int cx, int cy, int r) {
  SymMat2 t;
  for (int y = cy - r; y <= cy + r; ++y) {
    for (int x = cx - r; x <= cx + r; ++x) {
      if (x < 0 || x >= gx.width() || y < 0 || y >= gx.height()) continue;
      t.xx += gx(x, y) * gx(x, y);
      t.xy += gx(x, y) * gy(x, y);
      t.yy += gy(x, y) * gy(x, y);
    }
  }
  return t;
}

// Quadratic-formula eigenvalue oracle for [[a,b],[b,c]].
std::pair<double, double> eig_oracle(const SymMat2& t) {
  const double tr = t.xx + t.yy;
  const double det = t.xx * t.yy - t.xy * t.xy;
  const double disc = std::sqrt(std::max(0.0, tr * tr - 4.0 * det));
  return {(tr + disc) / 2.0, (tr - disc) / 2.0};
}

SymMat2 random_spd(Rng& rng) {
  // A^T A + small ridge is symmetric positive definite.
  const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
  const double c = rng.uniform(-2.0, 2.0), d = rng.uniform(-2.0, 2.0);
  SymMat2 t;
  t.xx = a * a + c * c + 1e-6;
  t.xy = a * b + c * d;
  t.yy = b * b + d * d + 1e-6;
  return t;
}

double angle_dist_mod_pi(double a, double b) {
  const double d = fold_half_pi(a - b);
  return std::abs(d);
}

}  // namespace

TEST_SUITE("orientation") {

TEST_CASE("tensor of a pure vertical step edge") {
  Image2D<double> gx(9, 9, 0.0), gy(9, 9, 0.0);
  for (int y = 3; y <= 5; ++y)
    for (int x = 3; x <= 5; ++x) gx(x, y) = 4.0;
  const SymMat2 t = structure_tensor(gx, gy, 4, 4, 1);
  CHECK(t.xx == doctest::Approx(9 * 16.0));
  CHECK(t.xy == 0.0);
  CHECK(t.yy == 0.0);
}

TEST_CASE("tensor of a zero-gradient window is zero") {
  Image2D<double> gx(5, 5, 0.0), gy(5, 5, 0.0);
  const SymMat2 t = structure_tensor(gx, gy, 2, 2, 2);
  CHECK(t.xx == 0.0);
  CHECK(t.xy == 0.0);
  CHECK(t.yy == 0.0);
}

TEST_CASE("tensor matches the accumulation oracle, including clamped windows") {
  Rng rng(21);
  Image2D<double> gx(13, 11), gy(13, 11);
  for (auto& v : gx.data()) v = rng.uniform(-3.0, 3.0);
  for (auto& v : gy.data()) v = rng.uniform(-3.0, 3.0);
  for (const auto& [cx, cy, r] :
       std::vector<std::array<int, 3>>{{6, 5, 3}, {0, 0, 3}, {12, 10, 2}}) {
    const SymMat2 got = structure_tensor(gx, gy, cx, cy, r);
    const SymMat2 want = tensor_bruteforce(gx, gy, cx, cy, r);
    CHECK(got.xx == doctest::Approx(want.xx).epsilon(1e-12));
    CHECK(got.xy == doctest::Approx(want.xy).epsilon(1e-12));
    CHECK(got.yy == doctest::Approx(want.yy).epsilon(1e-12));
  }
}

TEST_CASE("tensor center outside the image is rejected") {
  Image2D<double> g(5, 5, 0.0);
  check_errc(Errc::out_of_bounds, [&] { structure_tensor(g, g, 5, 2, 1); });
  check_errc(Errc::out_of_bounds, [&] { structure_tensor(g, g, 2, -1, 1); });
  check_errc(Errc::too_small, [&] { structure_tensor(g, g, 2, 2, 0); });
}

TEST_CASE("gradient along x reports a vertical tangent line") {
  const EdgeOrientation o = principal_orientation(SymMat2{1.0, 0.0, 0.0});
  // A vertical tangent is the pi/2 line; its folded representative in
  // [-pi/2, pi/2) is -pi/2.
  CHECK(o.theta == doctest::Approx(-kPi / 2.0));
  CHECK(angle_dist_mod_pi(o.theta, kPi / 2.0) < 1e-12);
  CHECK(o.anisotropy == doctest::Approx(1.0));
  CHECK(std::abs(std::hypot(o.direction[0], o.direction[1]) - 1.0) < 1e-9);
  CHECK(o.theta ==
        doctest::Approx(fold_half_pi(std::atan2(o.direction[1], o.direction[0]))));
}

TEST_CASE("isotropic tensor ties to theta 0 with anisotropy 0") {
  const EdgeOrientation o = principal_orientation(SymMat2{1.0, 0.0, 1.0});
  CHECK(o.theta == 0.0);
  CHECK(o.anisotropy == 0.0);
}

TEST_CASE("eigenpair satisfies the eigen equation and the quadratic oracle") {
  Rng rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    const SymMat2 t = random_spd(rng);
    const EdgeOrientation o = principal_orientation(t, OrientMode::gradient);
    const auto [l1, l2] = eig_oracle(t);
    CHECK(o.lambda1 == doctest::Approx(l1).epsilon(1e-9));
    CHECK(o.lambda2 == doctest::Approx(l2).epsilon(1e-9));
    CHECK(o.lambda1 >= o.lambda2);
    CHECK(o.lambda2 >= -1e-12);

    // In gradient mode the reported direction is the lambda1 eigenvector
    // (up to sign): ||T v - lambda1 v|| must vanish.
    const double vx = o.direction[0], vy = o.direction[1];
    const double rx = t.xx * vx + t.xy * vy - o.lambda1 * vx;
    const double ry = t.xy * vx + t.yy * vy - o.lambda1 * vy;
    CHECK(std::hypot(rx, ry) < 1e-9 * std::max(1.0, o.lambda1));
  }
}

TEST_CASE("scale invariance of theta and anisotropy") {
  Rng rng(34);
  for (int trial = 0; trial < 100; ++trial) {
    const SymMat2 t = random_spd(rng);
    const double c = std::exp(rng.uniform(-3.0, 3.0));
    const SymMat2 ct{c * t.xx, c * t.xy, c * t.yy};
    const EdgeOrientation a = principal_orientation(t);
    const EdgeOrientation b = principal_orientation(ct);
    CHECK(angle_dist_mod_pi(a.theta, b.theta) < 1e-9);
    CHECK(a.anisotropy == doctest::Approx(b.anisotropy).epsilon(1e-9));
  }
}

TEST_CASE("rotation equivariance of theta") {
  Rng rng(35);
  for (int trial = 0; trial < 50; ++trial) {
    // Anisotropic gradient field: one dominant direction plus jitter.
    const double base = rng.uniform(-kPi / 2, kPi / 2);
    Image2D<double> gx(7, 7), gy(7, 7);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) {
        const double mag = rng.uniform(0.5, 2.0);
        const double jitter = rng.uniform(-0.05, 0.05);
        gx(x, y) = mag * std::cos(base + jitter);
        gy(x, y) = mag * std::sin(base + jitter);
      }
    const double phi = rng.uniform(-kPi, kPi);
    const double cp = std::cos(phi), sp = std::sin(phi);
    Image2D<double> rgx(7, 7), rgy(7, 7);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 7; ++x) {
        rgx(x, y) = cp * gx(x, y) - sp * gy(x, y);
        rgy(x, y) = sp * gx(x, y) + cp * gy(x, y);
      }
    const EdgeOrientation a =
        principal_orientation(structure_tensor(gx, gy, 3, 3, 3));
    const EdgeOrientation b =
        principal_orientation(structure_tensor(rgx, rgy, 3, 3, 3));
    if (a.anisotropy < 0.1) continue;
    CHECK(angle_dist_mod_pi(b.theta, a.theta + phi) < 1e-6);
  }
}

TEST_CASE("tangent and gradient modes differ by a quarter turn") {
  Rng rng(36);
  for (int trial = 0; trial < 50; ++trial) {
    const SymMat2 t = random_spd(rng);
    const EdgeOrientation tan = principal_orientation(t, OrientMode::tangent);
    const EdgeOrientation grad =
        principal_orientation(t, OrientMode::gradient);
    if (tan.anisotropy < 1e-6) continue;
    CHECK(angle_dist_mod_pi(tan.theta, grad.theta + kPi / 2) < 1e-9);
  }
}

}  // TEST_SUITE
