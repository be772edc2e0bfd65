#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ocl/linkage.hpp"
#include "ocl/rng.hpp"

using namespace ocl;

namespace {

// Oracle transforms built from Eigen primitives only, deliberately not
// sharing code with the library's DH helper.
Iso3 o_rz(double t) { return Iso3(Eigen::AngleAxisd(t, Vec3::UnitZ())); }
Iso3 o_rx(double t) { return Iso3(Eigen::AngleAxisd(t, Vec3::UnitX())); }
Iso3 o_tx(double a) { return Iso3(Eigen::Translation3d(a, 0.0, 0.0)); }

double oracle_loop_residual(const LinkageGeometry& g, const JointAngles& ja) {
  Iso3 m = Iso3::Identity();
  const double len[4] = {g.link_len_a, g.link_len_b, g.link_len_a, g.link_len_b};
  // The (b, beta) pair is traversed crossed (negative twist sense).
  const double twi[4] = {g.twist_alpha, -g.twist_beta, g.twist_alpha,
                         -g.twist_beta};
  for (int i = 0; i < 4; ++i)
    m = m * o_rz(ja.theta[i]) * o_tx(len[i]) * o_rx(twi[i]);
  Eigen::AngleAxisd aa(m.linear());
  return std::sqrt(m.translation().squaredNorm() + aa.angle() * aa.angle());
}

// Shoulder->plane-of-motors frame change used by the certification oracle.
Mat3 shoulder_to_dh() {
  Mat3 r;
  r << 0, 1, 0,
       0, 0, 1,
      -1, 0, 0;
  return r.transpose();
}

// Knee axis direction for a motor at `theta` driving a link of twist `twist`,
// expressed in the motor-plane frame.
Vec3 oracle_knee_axis(double theta, double twist) {
  return o_rz(theta).linear() * o_rx(twist).linear() * Vec3::UnitZ();
}

// Certify a limb FK solution against the defining closure constraints:
// the foot must lie on the distal circle about the left knee axis and on the
// proximal circle about the right knee axis. Complete for planar/bennett.
void certify_loop_foot(const LimbKinematics& limb, const LimbCommandAngles& cmd,
                       const Vec3& foot_shoulder, double tol) {
  const Mat3 s2d = shoulder_to_dh();
  const Vec3 f = s2d * foot_shoulder;
  const LinkageGeometry& g = limb.geometry();
  const double P = limb.proximal_len(), D = limb.distal_len();

  const Vec3 knee_l = P * planar_dir(cmd.motor_left);
  const Vec3 knee_r = D * planar_dir(cmd.motor_right);
  const Vec3 z2 = oracle_knee_axis(cmd.motor_left, g.twist_alpha);
  const Vec3 z4 = oracle_knee_axis(cmd.motor_right, -g.twist_beta);

  CHECK(std::abs((f - knee_l).norm() - D) < tol);
  CHECK(std::abs((f - knee_r).norm() - P) < tol);
  CHECK(std::abs((f - knee_l).dot(z2)) < tol);
  CHECK(std::abs((f - knee_r).dot(z4)) < tol);
}

// Spherical counterpart: foot on the sphere, foot rod normal to the left knee
// axis, and a distal-link axis exists meeting both cone conditions.
void certify_spherical_foot(const LimbKinematics& limb,
                            const LimbCommandAngles& cmd,
                            const Vec3& foot_shoulder, double tol) {
  const Mat3 s2d = shoulder_to_dh();
  const Vec3 f = s2d * foot_shoulder;
  const LinkageGeometry& g = limb.geometry();
  const double R = limb.proximal_len() + limb.distal_len();

  CHECK(std::abs(f.norm() - R) < tol * R);
  const Vec3 z2 = oracle_knee_axis(cmd.motor_left, g.twist_alpha);
  const Vec3 z4 = oracle_knee_axis(cmd.motor_right, -g.twist_beta);
  const Vec3 u = f / f.norm();
  CHECK(std::abs(u.dot(z2)) < tol);

  // Solve for the distal axis v with v.u = 0 and v.z2 = cos(beta); the two
  // roots live in the plane normal to u. One must satisfy v.z4 = cos(alpha).
  const Vec3 e1 = (z2 - u * u.dot(z2)).normalized();
  const Vec3 e2 = u.cross(e1);
  const double c1 = std::cos(g.twist_beta) / z2.dot(e1);
  const double c2sq = 1.0 - c1 * c1;
  REQUIRE(c2sq > -1e-12);
  const double c2 = std::sqrt(std::max(c2sq, 0.0));
  const Vec3 va = c1 * e1 + c2 * e2;
  const Vec3 vb = c1 * e1 - c2 * e2;
  const double want = std::cos(g.twist_alpha);
  const double err = std::min(std::abs(va.dot(z4) - want),
                              std::abs(vb.dot(z4) - want));
  CHECK(err < tol);
}

LinkageGeometry make_bennett(double a, double b, double alpha) {
  LinkageGeometry g;
  g.kind = LinkageKind::Bennett;
  g.link_len_a = a;
  g.link_len_b = b;
  g.twist_alpha = alpha;
  g.twist_beta = std::asin(clampd(b * std::sin(alpha) / a, -1.0, 1.0));
  return g;
}

LinkageGeometry random_geometry(LinkageKind kind, Rng& rng) {
  LinkageGeometry g;
  g.kind = kind;
  switch (kind) {
    case LinkageKind::Planar:
      g.link_len_a = rng.uniform(0.05, 0.3);
      g.link_len_b = rng.uniform(0.05, 0.3);
      g.twist_alpha = g.twist_beta = 0.0;
      break;
    case LinkageKind::Spherical:
      g.link_len_a = g.link_len_b = 0.0;
      g.twist_alpha = rng.uniform(0.2, 1.3);
      g.twist_beta = rng.uniform(0.2, 1.3);
      break;
    case LinkageKind::Bennett: {
      const double a = rng.uniform(0.05, 0.3);
      const double alpha = rng.uniform(0.2, 1.3);
      // keep sin(beta) = b sin(alpha) / a solvable
      const double b = rng.uniform(0.5, 1.0) * a / std::max(std::sin(alpha), 0.5);
      g = make_bennett(a, b, alpha);
      break;
    }
  }
  return g;
}

}  // namespace

TEST_CASE("geometry validation accepts the three kinds and rejects the rest") {
  LinkageGeometry planar{LinkageKind::Planar, 0.1, 0.12, 0.0, 0.0};
  CHECK(validate_geometry(planar).ok());

  LinkageGeometry bad_planar = planar;
  bad_planar.twist_alpha = 0.01;
  CHECK(validate_geometry(bad_planar).fault == GeometryFault::NonZeroTwistForPlanar);
  bad_planar = planar;
  bad_planar.link_len_b = 0.0;
  CHECK(validate_geometry(bad_planar).fault == GeometryFault::NonPositiveLength);

  LinkageGeometry sph{LinkageKind::Spherical, 0.0, 0.0, 0.7, 1.1};
  CHECK(validate_geometry(sph).ok());
  LinkageGeometry bad_sph = sph;
  bad_sph.link_len_a = 0.05;
  CHECK(validate_geometry(bad_sph).fault == GeometryFault::NonZeroLengthForSpherical);
  bad_sph = sph;
  bad_sph.twist_beta = 0.0;
  CHECK(validate_geometry(bad_sph).fault == GeometryFault::ZeroTwistForSpherical);

  LinkageGeometry ben = make_bennett(0.1, 0.08, kPi / 4.0);
  CHECK(validate_geometry(ben).ok());
  LinkageGeometry bad_ben = ben;
  bad_ben.twist_beta *= 1.001;  // breaks sin(alpha)/a == sin(beta)/b
  CHECK(validate_geometry(bad_ben).fault == GeometryFault::BennettConditionViolated);
  bad_ben = ben;
  bad_ben.twist_alpha = 0.0;
  CHECK(validate_geometry(bad_ben).fault == GeometryFault::TwistOutOfRange);

  CHECK_THROWS_AS(require_valid(bad_ben), KinematicsError);
}

TEST_CASE("closure_solve drives the loop product to identity") {
  Rng rng(2024);
  const LinkageKind kinds[3] = {LinkageKind::Planar, LinkageKind::Bennett,
                                LinkageKind::Spherical};
  for (LinkageKind kind : kinds) {
    CAPTURE(to_string(kind));
    int solved = 0;
    for (int trial = 0; trial < 300; ++trial) {
      const LinkageGeometry g = random_geometry(kind, rng);
      const double input = rng.uniform(-2.5, 2.5);
      for (ElbowBranch br : {ElbowBranch::A, ElbowBranch::B}) {
        JointAngles ja;
        try {
          ja = closure_solve(g, input, br);
        } catch (const KinematicsError&) {
          continue;  // command outside the closure range of this geometry
        }
        ++solved;
        CHECK(oracle_loop_residual(g, ja) < 1e-9);
        CHECK(closure_residual(g, ja) < 1e-9);
        CHECK(std::abs(wrap_angle(ja.theta[0] - input)) < 1e-12);
      }
    }
    CHECK(solved > 200);  // the sweep must not be vacuous
  }
}

TEST_CASE("spherical folds: closure at the boundary, degeneracy at coincident axes") {
  LinkageGeometry g{LinkageKind::Spherical, 0.0, 0.0, kPi / 3.0, kPi / 3.0};
  // Input pi puts the knee axes at the feasibility boundary: a fold, but a
  // well-defined one.
  const JointAngles ja = closure_solve(g, kPi, ElbowBranch::A);
  CHECK(oracle_loop_residual(g, ja) < 1e-9);
  // Input 0 with equal twists makes the knee axes coincide: a continuum.
  CHECK_THROWS_AS(closure_solve(g, 0.0, ElbowBranch::A), KinematicsError);
  try {
    closure_solve(g, 0.0, ElbowBranch::A);
  } catch (const KinematicsError& e) {
    CHECK(e.code() == KinematicsError::Code::DegenerateConfiguration);
  }
}

TEST_CASE("planar diamond stance: frozen reference") {
  LinkageGeometry g{LinkageKind::Planar, 0.1, 0.1, 0.0, 0.0};
  LimbKinematics limb(g, 0.1, 0.1);
  const Vec3 f = limb.foot_fk({deg2rad(30.0), deg2rad(-30.0)}).position;
  // Equal links at +/-30 deg close to a rhombus; the foot hangs straight
  // down at 2 * 0.1 * cos(30 deg).
  CHECK(std::abs(f.x()) < 1e-12);
  CHECK(std::abs(f.y()) < 1e-12);
  CHECK(f.z() == doctest::Approx(-0.17320508075688773).epsilon(1e-12));

  // Swing equivariance: same spread swung forward 20 degrees.
  const double sw = deg2rad(20.0);
  const Vec3 f2 = limb.foot_fk(LimbCommandAngles::from_swing_spread(sw, deg2rad(60.0)))
                      .position;
  CHECK(f2.x() == doctest::Approx(0.17320508075688773 * std::sin(sw)).epsilon(1e-12));
  CHECK(std::abs(f2.y()) < 1e-12);
  CHECK(f2.z() == doctest::Approx(-0.17320508075688773 * std::cos(sw)).epsilon(1e-12));
}

TEST_CASE("foot_fk satisfies the closure constraints for all kinds") {
  Rng rng(77);
  const LinkageKind kinds[3] = {LinkageKind::Planar, LinkageKind::Bennett,
                                LinkageKind::Spherical};
  for (LinkageKind kind : kinds) {
    CAPTURE(to_string(kind));
    for (int trial = 0; trial < 60; ++trial) {
      const LinkageGeometry g = random_geometry(kind, rng);
      const double P = kind == LinkageKind::Spherical ? rng.uniform(0.05, 0.2)
                                                      : g.link_len_a;
      const double D = kind == LinkageKind::Spherical ? rng.uniform(0.05, 0.2)
                                                      : g.link_len_b;
      LimbKinematics limb(g, P, D);
      const auto [slo, shi] = limb.spread_range();
      for (int k = 0; k < 10; ++k) {
        const double spread = rng.uniform(slo, shi);
        const double swing = rng.uniform(-1.2, 1.2);
        const auto cmd = LimbCommandAngles::from_swing_spread(swing, spread);
        for (ElbowBranch br : {ElbowBranch::A, ElbowBranch::B}) {
          const Vec3 f = limb.foot_fk(cmd, br).position;
          if (kind == LinkageKind::Spherical)
            certify_spherical_foot(limb, cmd, f, 1e-9);
          else
            certify_loop_foot(limb, cmd, f, 1e-9);
        }
      }
    }
  }
}

TEST_CASE("elbow branches are ordered along the motor bisector") {
  Rng rng(5150);
  const LinkageKind kinds[3] = {LinkageKind::Planar, LinkageKind::Bennett,
                                LinkageKind::Spherical};
  for (LinkageKind kind : kinds) {
    CAPTURE(to_string(kind));
    int distinct = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const LinkageGeometry g = random_geometry(kind, rng);
      const double P = kind == LinkageKind::Spherical ? 0.1 : g.link_len_a;
      const double D = kind == LinkageKind::Spherical ? 0.1 : g.link_len_b;
      LimbKinematics limb(g, P, D);
      const auto [slo, shi] = limb.spread_range();
      const auto cmd = LimbCommandAngles::from_swing_spread(
          rng.uniform(-1.0, 1.0), rng.uniform(slo + 0.1, shi));
      const Vec3 fa = limb.foot_fk(cmd, ElbowBranch::A).position;
      const Vec3 fb = limb.foot_fk(cmd, ElbowBranch::B).position;
      // Bisector of the motors in the shoulder frame: swing angle from -z.
      const double sw = cmd.swing();
      const Vec3 bis(std::sin(sw), 0.0, -std::cos(sw));
      CHECK(fa.dot(bis) >= fb.dot(bis) - 1e-12);
      if ((fa - fb).norm() > 1e-6) ++distinct;
    }
    // Planar and spherical loops have two assembly branches away from folds.
    // The skewed loop's closure is unique per command, so no requirement there.
    if (kind != LinkageKind::Bennett) CHECK(distinct > 40);
  }
}

TEST_CASE("equal-link skewed limb splays the foot out of the leg plane") {
  LinkageGeometry g = make_bennett(0.1, 0.1, kPi / 4.0);
  CHECK(g.twist_beta == doctest::Approx(kPi / 4.0));
  LimbKinematics limb(g, 0.1, 0.1);
  const Vec3 f = limb.foot_fk({deg2rad(30.0), deg2rad(-30.0)}).position;
  CHECK(std::abs(f.y()) > 1e-3);  // lateral offset, unlike a planar limb
  CHECK(f.z() < -0.05);           // still a stance, not a folded pose
  // Frozen from an independent dense scan of the two distal-link circles.
  CHECK(f.y() == doctest::Approx(-0.069282).epsilon(1e-4));
  CHECK(f.z() == doctest::Approx(-0.138564).epsilon(1e-4));
  CHECK(std::abs(f.x()) < 1e-9);
}

TEST_CASE("foot_ik round-trips foot_fk within 1e-6") {
  Rng rng(31337);
  const LinkageKind kinds[3] = {LinkageKind::Planar, LinkageKind::Bennett,
                                LinkageKind::Spherical};
  for (LinkageKind kind : kinds) {
    CAPTURE(to_string(kind));
    for (int trial = 0; trial < 40; ++trial) {
      const LinkageGeometry g = random_geometry(kind, rng);
      const double P = kind == LinkageKind::Spherical ? 0.11 : g.link_len_a;
      const double D = kind == LinkageKind::Spherical ? 0.09 : g.link_len_b;
      LimbKinematics limb(g, P, D);
      const auto [slo, shi] = limb.spread_range();
      const auto cmd = LimbCommandAngles::from_swing_spread(
          rng.uniform(-1.0, 1.0),
          rng.uniform(slo + 0.05 * (shi - slo), shi - 0.05 * (shi - slo)));
      const Vec3 target = limb.foot_fk(cmd).position;
      const LimbCommandAngles back = limb.foot_ik({target});
      const Vec3 again = limb.foot_fk(back).position;
      CHECK((again - target).norm() < 1e-6);
    }
  }
}

TEST_CASE("bennett with vanishing twist matches the planar limb within 1e-6") {
  const double eps = 1e-8;
  const LinkageGeometry ben = make_bennett(0.1, 0.08, eps);
  const LinkageGeometry pla{LinkageKind::Planar, 0.1, 0.08, 0.0, 0.0};
  LimbKinematics lb(ben, 0.1, 0.08);
  LimbKinematics lp(pla, 0.1, 0.08);
  Rng rng(99);
  const auto [slo, shi] = lp.spread_range();
  for (int i = 0; i < 50; ++i) {
    const auto cmd = LimbCommandAngles::from_swing_spread(
        rng.uniform(-1.2, 1.2), rng.uniform(slo, shi));
    const Vec3 fb = lb.foot_fk(cmd).position;
    const Vec3 fp = lp.foot_fk(cmd).position;
    CHECK((fb - fp).norm() < 1e-6);
  }
}

TEST_CASE("degenerate() collapses a bennett into the planar and spherical kinds") {
  const LinkageGeometry ben = make_bennett(0.1, 0.08, 0.9);
  const LinkageGeometry pla = degenerate(ben, LinkageKind::Planar);
  CHECK(pla.kind == LinkageKind::Planar);
  CHECK(pla.twist_alpha == 0.0);
  CHECK(pla.twist_beta == 0.0);
  CHECK(pla.link_len_a == ben.link_len_a);
  CHECK(validate_geometry(pla).ok());

  const LinkageGeometry sph = degenerate(ben, LinkageKind::Spherical);
  CHECK(sph.kind == LinkageKind::Spherical);
  CHECK(sph.link_len_a == 0.0);
  CHECK(sph.twist_alpha == ben.twist_alpha);
  CHECK(validate_geometry(sph).ok());

  CHECK_THROWS_AS(degenerate(ben, LinkageKind::Bennett), KinematicsError);
}

TEST_CASE("degenerate configurations are reported, not silently resolved") {
  // Equal-length planar limb with zero spread: knee circles coincide.
  LinkageGeometry g{LinkageKind::Planar, 0.1, 0.1, 0.0, 0.0};
  LimbKinematics limb(g, 0.1, 0.1);
  CHECK_THROWS_AS(limb.foot_fk({0.3, 0.3}), KinematicsError);
  try {
    limb.foot_fk({0.3, 0.3});
  } catch (const KinematicsError& e) {
    CHECK(e.code() == KinematicsError::Code::DegenerateConfiguration);
  }

  // Unequal lengths at zero spread fold flat but stay well-defined.
  LimbKinematics limb2(g, 0.1, 0.07);
  const Vec3 f = limb2.foot_fk({0.0, 0.0}).position;
  CHECK(f.z() == doctest::Approx(-0.17).epsilon(1e-9));
}

TEST_CASE("workspace classification separates the three kinds") {
  // Planar feet stay in the leg plane (shoulder y == 0).
  {
    const auto pts = workspace_sample({LinkageKind::Planar, 0.1, 0.08, 0, 0},
                                      0.1, 0.08, 25);
    REQUIRE(pts.size() > 100);
    for (const auto& p : pts) CHECK(std::abs(p.y()) < 1e-9);
  }
  // Spherical feet stay on a sphere about the shoulder.
  {
    LinkageGeometry g{LinkageKind::Spherical, 0.0, 0.0, 0.8, 0.6};
    const auto pts = workspace_sample(g, 0.1, 0.08, 25);
    REQUIRE(pts.size() > 100);
    for (const auto& p : pts)
      CHECK(std::abs(p.norm() - 0.18) < 1e-9 * 0.18);
  }
  // Bennett feet sweep a genuinely non-planar surface.
  {
    const auto g = make_bennett(0.1, 0.08, kPi / 4.0);
    const auto pts = workspace_sample(g, 0.1, 0.08, 25);
    REQUIRE(pts.size() > 100);
    Vec3 c = Vec3::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    Eigen::MatrixXd m(pts.size(), 3);
    for (size_t i = 0; i < pts.size(); ++i) m.row(i) = (pts[i] - c).transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
    const Vec3 normal = svd.matrixV().col(2);
    double dev = 0.0;
    for (const auto& p : pts) dev = std::max(dev, std::abs((p - c).dot(normal)));
    CHECK(dev > 1e-3);
  }
}

TEST_CASE("foot_jacobian agrees with direct differencing") {
  Rng rng(4242);
  const auto g = make_bennett(0.12, 0.09, 0.7);
  LimbKinematics limb(g, 0.12, 0.09);
  const auto [slo, shi] = limb.spread_range();
  for (int i = 0; i < 20; ++i) {
    const auto cmd = LimbCommandAngles::from_swing_spread(
        rng.uniform(-1.0, 1.0), rng.uniform(slo + 0.1, shi - 0.1));
    const auto J = limb.foot_jacobian(cmd);
    const double d = 1e-5;
    const Vec2 delta(rng.uniform(-d, d), rng.uniform(-d, d));
    const Vec3 f0 = limb.foot_fk(cmd).position;
    const Vec3 f1 =
        limb.foot_fk({cmd.motor_left + delta[0], cmd.motor_right + delta[1]})
            .position;
    const Vec3 lin = J * delta;
    CHECK((f1 - f0 - lin).norm() < 1e-8);
  }
}

TEST_CASE("clamp_command respects spread and motor limits while keeping swing") {
  LinkageGeometry g{LinkageKind::Planar, 0.1, 0.1, 0.0, 0.0};
  LimbKinematics limb(g, 0.1, 0.1);
  const auto [slo, shi] = limb.spread_range();

  const auto c1 = limb.clamp_command(LimbCommandAngles::from_swing_spread(0.4, 0.0));
  CHECK(c1.spread() == doctest::Approx(slo));
  CHECK(c1.swing() == doctest::Approx(0.4));

  const auto c2 = limb.clamp_command(LimbCommandAngles::from_swing_spread(0.1, 9.0));
  CHECK(c2.spread() == doctest::Approx(shi));

  const auto c3 = limb.clamp_command(LimbCommandAngles::from_swing_spread(5.0, 1.0));
  CHECK(std::abs(c3.motor_left) <= limb.limits().motor_range + 1e-12);
  CHECK(std::abs(c3.motor_right) <= limb.limits().motor_range + 1e-12);
  CHECK(c3.spread() == doctest::Approx(1.0));
}

TEST_CASE("rng streams are deterministic and fork-independent") {
  Rng a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng root(7);
  Rng f1 = root.fork(1);
  Rng f2 = root.fork(2);
  Rng f1b = root.fork(1);  // forking twice gives the same stream
  CHECK(f1.next_u64() == f1b.next_u64());
  CHECK(f1.next_u64() != f2.next_u64());

  Rng u(9);
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}
