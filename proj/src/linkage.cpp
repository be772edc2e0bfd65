#include "ocl/linkage.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ocl {

namespace {

constexpr double kClosureTol = 1e-9;

// DH -> shoulder frame: x_dh (straight down at zero command) -> -z_s,
// y_dh -> +x_s (forward), z_dh (motor axis) -> +y_s (lateral).
Mat3 dh_to_shoulder() {
  Mat3 r;
  r << 0, 1, 0,
       0, 0, 1,
      -1, 0, 0;
  return r;
}
const Mat3 kDhToShoulder = dh_to_shoulder();

// Joint-2 axis for a driven link at motor angle theta with twist alpha.
inline Vec3 twisted_axis(double theta, double alpha) {
  const double sa = std::sin(alpha);
  return Vec3(sa * std::sin(theta), -sa * std::cos(theta), std::cos(alpha));
}

struct TwoChainSolution {
  Vec3 foot = Vec3::Zero();   // DH frame
  double knee_left = 0.0;     // rotation about the left knee axis
  double knee_right = 0.0;    // rotation about the right knee axis
};

[[noreturn]] void throw_kin(KinematicsError::Code code, const char* what) {
  throw KinematicsError(code, what);
}

/// Closure of the two driven chains. `lp` is the pair-1 (proximal-left /
/// distal-right) length, `ld` the pair-2 length; both zero for spherical.
/// `tip_radius` only matters for spherical limbs (foot on the distal link at
/// that radius from the center).
TwoChainSolution solve_two_chain(LinkageKind kind, double lp, double ld,
                                 double alpha, double beta, double theta_l,
                                 double theta_r, ElbowBranch branch,
                                 double tip_radius) {
  const Vec3 bisector = planar_dir(0.5 * (theta_l + theta_r));
  const double scale = std::max(lp + ld, tip_radius);

  if (kind == LinkageKind::Planar) {
    const Vec2 knee_l(lp * std::cos(theta_l), lp * std::sin(theta_l));
    const Vec2 knee_r(ld * std::cos(theta_r), ld * std::sin(theta_r));
    const Vec2 chord = knee_r - knee_l;
    const double d = chord.norm();
    const double r_l = ld, r_r = lp;
    if (d < 1e-12 * scale) {
      if (std::abs(r_l - r_r) < 1e-12 * scale)
        throw_kin(KinematicsError::Code::DegenerateConfiguration,
                  "coincident knee circles: foot position is a continuum");
      throw_kin(KinematicsError::Code::Unreachable,
                "concentric knee circles of different radii");
    }
    const double t = (d * d + r_l * r_l - r_r * r_r) / (2.0 * d);
    const double h2 = r_l * r_l - t * t;
    if (h2 < -1e-12 * scale * scale)
      throw_kin(KinematicsError::Code::Unreachable,
                "knee circles do not intersect");
    const double h = std::sqrt(std::max(h2, 0.0));
    const Vec2 dir = chord / d;
    const Vec2 perp(-dir.y(), dir.x());
    const Vec2 base = knee_l + t * dir;
    const Vec2 cand[2] = {base + h * perp, base - h * perp};
    const Vec2 bis(bisector.x(), bisector.y());
    int a_idx = cand[0].dot(bis) >= cand[1].dot(bis) ? 0 : 1;
    const Vec2 f = cand[branch == ElbowBranch::A ? a_idx : 1 - a_idx];

    TwoChainSolution sol;
    sol.foot = Vec3(f.x(), f.y(), 0.0);
    const Vec2 dl = f - knee_l, dr = f - knee_r;
    const Vec2 xl(std::cos(theta_l), std::sin(theta_l));
    const Vec2 xr(std::cos(theta_r), std::sin(theta_r));
    sol.knee_left = std::atan2(-dl.x() * xl.y() + dl.y() * xl.x(), dl.dot(xl));
    sol.knee_right = std::atan2(-dr.x() * xr.y() + dr.y() * xr.x(), dr.dot(xr));
    return sol;
  }

  if (kind == LinkageKind::Spherical) {
    const Vec3 z2 = twisted_axis(theta_l, alpha);
    const Vec3 z4 = twisted_axis(theta_r, beta);
    const double c = z2.dot(z4);
    const double det = 1.0 - c * c;
    if (det < 1e-14)
      throw_kin(KinematicsError::Code::DegenerateConfiguration,
                "knee axes coincide: spherical closure is a continuum");
    const double ca = std::cos(alpha), cb = std::cos(beta);
    const double lam = (cb - c * ca) / det;
    const double mu = (ca - c * cb) / det;
    const Vec3 w = lam * z2 + mu * z4;
    const double nu2 = (1.0 - w.squaredNorm()) / det;
    if (nu2 < -1e-12)
      throw_kin(KinematicsError::Code::Unreachable,
                "spherical closure infeasible for this command pair");
    const double nu = std::sqrt(std::max(nu2, 0.0));
    const Vec3 n = z2.cross(z4);

    const Vec3 x2 = planar_dir(theta_l);
    const Vec3 y2 = z2.cross(x2);
    const Vec3 x4 = planar_dir(theta_r);
    const Vec3 y4 = z4.cross(x4);
    const double s_beta = std::sin(beta) >= 0.0 ? 1.0 : -1.0;
    const double s_alpha = std::sin(alpha) >= 0.0 ? 1.0 : -1.0;

    Vec3 foot_cand[2];
    double knee_l_cand[2];
    for (int i = 0; i < 2; ++i) {
      const Vec3 z3 = w + (i == 0 ? nu : -nu) * n;
      const double psi =
          std::atan2(s_beta * z3.dot(x2), -s_beta * z3.dot(y2));
      knee_l_cand[i] = psi;
      foot_cand[i] =
          tip_radius * (std::cos(psi) * x2 + std::sin(psi) * y2);
    }
    int a_idx = foot_cand[0].dot(bisector) >= foot_cand[1].dot(bisector) ? 0 : 1;
    const int pick = branch == ElbowBranch::A ? a_idx : 1 - a_idx;
    const Vec3 z3 = w + (pick == 0 ? nu : -nu) * n;

    TwoChainSolution sol;
    sol.foot = foot_cand[pick];
    sol.knee_left = knee_l_cand[pick];
    sol.knee_right =
        std::atan2(s_alpha * z3.dot(x4), -s_alpha * z3.dot(y4));
    return sol;
  }

  // Bennett: intersect the left distal-end circle with the plane of the
  // right one, then certify with the right circle's radius.
  const Vec3 knee_l = lp * planar_dir(theta_l);
  const Vec3 knee_r = ld * planar_dir(theta_r);
  const Vec3 x2 = planar_dir(theta_l);
  const Vec3 z2 = twisted_axis(theta_l, alpha);
  const Vec3 y2 = z2.cross(x2);
  const Vec3 x4 = planar_dir(theta_r);
  const Vec3 z4 = twisted_axis(theta_r, beta);
  const Vec3 y4 = z4.cross(x4);

  const double A = ld * x2.dot(z4);
  const double B = ld * y2.dot(z4);
  const double C = (knee_l - knee_r).dot(z4);
  const double r0 = std::hypot(A, B);
  if (r0 < 1e-14 * scale)
    throw_kin(KinematicsError::Code::DegenerateConfiguration,
              "left distal circle parallel to right closure plane");
  const double cosarg = -C / r0;
  if (std::abs(cosarg) > 1.0 + 1e-10)
    throw_kin(KinematicsError::Code::Unreachable,
              "closure plane out of reach of the distal circle");
  const double phi0 = std::atan2(B, A);
  const double dpsi = std::acos(clampd(cosarg, -1.0, 1.0));

  Vec3 foot_cand[2];
  double dist_err[2], psi_cand[2];
  for (int i = 0; i < 2; ++i) {
    const double psi = phi0 + (i == 0 ? dpsi : -dpsi);
    psi_cand[i] = psi;
    foot_cand[i] = knee_l + ld * (std::cos(psi) * x2 + std::sin(psi) * y2);
    dist_err[i] = std::abs((foot_cand[i] - knee_r).norm() - lp);
  }
  const double accept = 1e-6 * scale;
  const bool ok0 = dist_err[0] < accept, ok1 = dist_err[1] < accept;
  if (!ok0 && !ok1)
    throw_kin(KinematicsError::Code::Unreachable,
              "distal circles do not meet: command pair outside closure range");

  int pick;
  if (ok0 && ok1) {
    int a_idx = foot_cand[0].dot(bisector) >= foot_cand[1].dot(bisector) ? 0 : 1;
    pick = branch == ElbowBranch::A ? a_idx : 1 - a_idx;
  } else {
    pick = ok0 ? 0 : 1;
  }

  // Gauss-Newton polish of (psi_l, psi_r) on the 3-vector chain mismatch,
  // mopping up roundoff and any tolerated geometry imprecision.
  double psi_l = psi_cand[pick];
  const Vec3 dr0 = (foot_cand[pick] - knee_r).normalized();
  double psi_r = std::atan2(dr0.dot(y4), dr0.dot(x4));
  for (int it = 0; it < 3; ++it) {
    const Vec3 fl = knee_l + ld * (std::cos(psi_l) * x2 + std::sin(psi_l) * y2);
    const Vec3 fr = knee_r + lp * (std::cos(psi_r) * x4 + std::sin(psi_r) * y4);
    const Vec3 r = fl - fr;
    if (r.norm() < 1e-14 * scale) break;
    Eigen::Matrix<double, 3, 2> J;
    J.col(0) = ld * (-std::sin(psi_l) * x2 + std::cos(psi_l) * y2);
    J.col(1) = -lp * (-std::sin(psi_r) * x4 + std::cos(psi_r) * y4);
    const Vec2 step = J.colPivHouseholderQr().solve(-r);
    psi_l += step[0];
    psi_r += step[1];
  }

  TwoChainSolution sol;
  sol.foot = knee_l + ld * (std::cos(psi_l) * x2 + std::sin(psi_l) * y2);
  sol.knee_left = psi_l;
  sol.knee_right = psi_r;
  return sol;
}

// Loop traversal: the second link pair is crossed, i.e. traversed with the
// opposite twist sense. This is the leg-like member of the family — as the
// twists shrink it degenerates onto the diamond branch of the planar
// four-bar rather than the antiparallelogram branch.
Iso3 loop_product(const LinkageGeometry& g, const JointAngles& ja) {
  return dh_link(ja.theta[0], g.link_len_a, g.twist_alpha) *
         dh_link(ja.theta[1], g.link_len_b, -g.twist_beta) *
         dh_link(ja.theta[2], g.link_len_a, g.twist_alpha) *
         dh_link(ja.theta[3], g.link_len_b, -g.twist_beta);
}

Eigen::Matrix<double, 6, 1> loop_residual_vec(const LinkageGeometry& g,
                                              const JointAngles& ja) {
  const Iso3 m = loop_product(g, ja);
  Eigen::Matrix<double, 6, 1> r;
  r.head<3>() = m.translation();
  Eigen::AngleAxisd aa(m.linear());
  r.tail<3>() = aa.angle() * aa.axis();
  return r;
}

}  // namespace

const char* to_string(LinkageKind k) {
  switch (k) {
    case LinkageKind::Planar: return "planar";
    case LinkageKind::Bennett: return "bennett";
    case LinkageKind::Spherical: return "spherical";
  }
  return "?";
}

LinkageKind linkage_kind_from_string(const std::string& s) {
  if (s == "planar") return LinkageKind::Planar;
  if (s == "bennett") return LinkageKind::Bennett;
  if (s == "spherical") return LinkageKind::Spherical;
  throw std::invalid_argument("unknown linkage kind: " + s);
}

const char* to_string(GeometryFault f) {
  switch (f) {
    case GeometryFault::None: return "Ok";
    case GeometryFault::NonPositiveLength: return "NonPositiveLength";
    case GeometryFault::BennettConditionViolated: return "BennettConditionViolated";
    case GeometryFault::NonZeroTwistForPlanar: return "NonZeroTwistForPlanar";
    case GeometryFault::NonZeroLengthForSpherical: return "NonZeroLengthForSpherical";
    case GeometryFault::ZeroTwistForSpherical: return "ZeroTwistForSpherical";
    case GeometryFault::TwistOutOfRange: return "TwistOutOfRange";
  }
  return "?";
}

GeometryCheck validate_geometry(const LinkageGeometry& g) {
  GeometryCheck c;
  auto fail = [&c](GeometryFault f, const std::string& msg) {
    c.fault = f;
    c.message = msg;
    return c;
  };
  switch (g.kind) {
    case LinkageKind::Planar:
      if (g.link_len_a <= 0.0 || g.link_len_b <= 0.0)
        return fail(GeometryFault::NonPositiveLength,
                    "planar linkage needs both link lengths > 0");
      if (g.twist_alpha != 0.0 || g.twist_beta != 0.0)
        return fail(GeometryFault::NonZeroTwistForPlanar,
                    "planar linkage requires zero twists");
      return c;
    case LinkageKind::Spherical:
      if (g.link_len_a != 0.0 || g.link_len_b != 0.0)
        return fail(GeometryFault::NonZeroLengthForSpherical,
                    "spherical linkage requires zero link lengths");
      if (g.twist_alpha == 0.0 || g.twist_beta == 0.0)
        return fail(GeometryFault::ZeroTwistForSpherical,
                    "spherical linkage requires nonzero twists");
      if (std::abs(g.twist_alpha) >= kPi || std::abs(g.twist_beta) >= kPi)
        return fail(GeometryFault::TwistOutOfRange, "twists must be in (-pi, pi)");
      return c;
    case LinkageKind::Bennett: {
      if (g.link_len_a <= 0.0 || g.link_len_b <= 0.0)
        return fail(GeometryFault::NonPositiveLength,
                    "bennett linkage needs both link lengths > 0");
      if (g.twist_alpha == 0.0 || g.twist_beta == 0.0 ||
          std::abs(g.twist_alpha) >= kPi || std::abs(g.twist_beta) >= kPi)
        return fail(GeometryFault::TwistOutOfRange,
                    "bennett twists must satisfy 0 < |twist| < pi");
      const double ra = std::sin(g.twist_alpha) / g.link_len_a;
      const double rb = std::sin(g.twist_beta) / g.link_len_b;
      const double rel = std::abs(ra - rb) /
                         std::max(std::max(std::abs(ra), std::abs(rb)), 1e-300);
      if (rel > 1e-9) {
        std::ostringstream os;
        os << "bennett condition violated: sin(alpha)/a = " << ra
           << " but sin(beta)/b = " << rb;
        return fail(GeometryFault::BennettConditionViolated, os.str());
      }
      return c;
    }
  }
  return fail(GeometryFault::TwistOutOfRange, "unknown kind");
}

void require_valid(const LinkageGeometry& g) {
  const GeometryCheck c = validate_geometry(g);
  if (!c.ok())
    throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                          std::string(to_string(c.fault)) + ": " + c.message);
}

double closure_residual(const LinkageGeometry& g, const JointAngles& ja) {
  return loop_residual_vec(g, ja).norm();
}

JointAngles closure_solve(const LinkageGeometry& g, double input_angle,
                          ElbowBranch branch) {
  require_valid(g);

  // The loop relative angle at joint 1 corresponds to driving the two-chain
  // solver with theta_l = input and the right link frame at -pi.
  TwoChainSolution tc;
  try {
    tc = solve_two_chain(g.kind, g.link_len_a, g.link_len_b, g.twist_alpha,
                         -g.twist_beta, input_angle, -kPi, branch,
                         g.link_len_a + g.link_len_b);
  } catch (const KinematicsError& e) {
    if (e.code() == KinematicsError::Code::Unreachable)
      throw KinematicsError(KinematicsError::Code::NoClosure, e.what());
    throw;
  }

  JointAngles ja;
  ja.theta[0] = wrap_angle(input_angle);
  ja.theta[1] = wrap_angle(tc.knee_left);
  ja.theta[3] = wrap_angle(-tc.knee_right);

  // Remaining dihedral from the product remainder.
  const Iso3 n = dh_link(ja.theta[0], g.link_len_a, g.twist_alpha) *
                 dh_link(ja.theta[1], g.link_len_b, -g.twist_beta);
  const Iso3 k = trans_x(g.link_len_a) * rot_x(g.twist_alpha) *
                 dh_link(ja.theta[3], g.link_len_b, -g.twist_beta);
  const Iso3 rem = n.inverse() * k.inverse();
  ja.theta[2] = std::atan2(rem.linear()(1, 0), rem.linear()(0, 0));

  // Damped Gauss-Newton polish of the passive angles on the 6-dim residual.
  Eigen::Matrix<double, 6, 1> r = loop_residual_vec(g, ja);
  for (int it = 0; it < 8 && r.norm() > 1e-13; ++it) {
    Eigen::Matrix<double, 6, 3> J;
    const double h = 1e-7;
    for (int j = 0; j < 3; ++j) {
      JointAngles p = ja, m = ja;
      p.theta[j + 1] += h;
      m.theta[j + 1] -= h;
      J.col(j) = (loop_residual_vec(g, p) - loop_residual_vec(g, m)) / (2.0 * h);
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 6, 3>> svd(
        J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues()(2) < 1e-10 * svd.singularValues()(0)) break;
    const Eigen::Vector3d step = svd.solve(-r);
    JointAngles trial = ja;
    for (int j = 0; j < 3; ++j) trial.theta[j + 1] += step[j];
    const Eigen::Matrix<double, 6, 1> rt = loop_residual_vec(g, trial);
    if (rt.norm() >= r.norm()) break;
    ja = trial;
    r = rt;
  }

  if (r.norm() > kClosureTol) {
    // Rank-deficiency at a fold is reported, never silently resolved.
    Eigen::Matrix<double, 6, 3> J;
    const double h = 1e-6;
    for (int j = 0; j < 3; ++j) {
      JointAngles p = ja, m = ja;
      p.theta[j + 1] += h;
      m.theta[j + 1] -= h;
      J.col(j) = (loop_residual_vec(g, p) - loop_residual_vec(g, m)) / (2.0 * h);
    }
    Eigen::JacobiSVD<Eigen::Matrix<double, 6, 3>> svd(J);
    if (svd.singularValues()(2) < 1e-8 * svd.singularValues()(0))
      throw KinematicsError(KinematicsError::Code::SingularConfiguration,
                            "closure residual Jacobian is rank-deficient");
    throw KinematicsError(KinematicsError::Code::NoClosure,
                          "closure iteration did not converge");
  }
  for (double& t : ja.theta) t = wrap_angle(t);
  return ja;
}

LinkageGeometry degenerate(const LinkageGeometry& g, LinkageKind to) {
  require_valid(g);
  LinkageGeometry out = g;
  switch (to) {
    case LinkageKind::Planar:
      out.kind = LinkageKind::Planar;
      out.twist_alpha = 0.0;
      out.twist_beta = 0.0;
      if (out.link_len_a == 0.0 || out.link_len_b == 0.0)
        throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                              "cannot degenerate zero-length links to planar");
      break;
    case LinkageKind::Spherical:
      out.kind = LinkageKind::Spherical;
      out.link_len_a = 0.0;
      out.link_len_b = 0.0;
      if (out.twist_alpha == 0.0 || out.twist_beta == 0.0)
        throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                              "cannot degenerate zero-twist links to spherical");
      break;
    case LinkageKind::Bennett:
      throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                            "degeneration targets are planar or spherical");
  }
  require_valid(out);
  return out;
}

// --- LimbKinematics ----------------------------------------------------------

LimbKinematics::LimbKinematics(const LinkageGeometry& g, double proximal_len,
                               double distal_len, JointLimitConfig limits)
    : geom_(g), proximal_(proximal_len), distal_(distal_len), limits_(limits) {
  require_valid(g);
  if (g.kind == LinkageKind::Spherical) {
    if (proximal_ < 0.0 || distal_ < 0.0 || proximal_ + distal_ <= 0.0)
      throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                            "spherical limb needs a positive foot radius");
  } else {
    if (proximal_ <= 0.0 || distal_ <= 0.0)
      throw KinematicsError(KinematicsError::Code::InvalidGeometry,
                            "limb link lengths must be positive");
    if (g.kind == LinkageKind::Bennett) {
      const double ra = std::sin(g.twist_alpha) / proximal_;
      const double rb = std::sin(g.twist_beta) / distal_;
      if (std::abs(ra - rb) > 1e-9 * std::max(std::abs(ra), std::abs(rb)))
        throw KinematicsError(
            KinematicsError::Code::InvalidGeometry,
            "physical link lengths break the bennett closure condition");
    }
  }

  // Feasible spread interval: bisect the closure boundary outward from the
  // nominal stance, then intersect with the configured scissor stops.
  const double nominal = clampd(deg2rad(60.0),
                                limits_.spread_min, limits_.spread_max);
  double lo = limits_.spread_min, hi = limits_.spread_max;
  double seed = nominal;
  if (!closure_feasible(seed)) {
    bool found = false;
    for (int i = 1; i <= 64 && !found; ++i) {
      seed = lo + (hi - lo) * (static_cast<double>(i) / 65.0);
      found = closure_feasible(seed);
    }
    if (!found)
      throw KinematicsError(KinematicsError::Code::NoClosure,
                            "no feasible spread inside the scissor limits");
  }
  double flo = seed, fhi = seed;
  if (closure_feasible(lo)) {
    flo = lo;
  } else {
    double bad = lo, good = seed;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (bad + good);
      (closure_feasible(mid) ? good : bad) = mid;
    }
    flo = good + limits_.feasibility_margin;  // stay clear of the fold
  }
  if (closure_feasible(hi)) {
    fhi = hi;
  } else {
    double good = seed, bad = hi;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (bad + good);
      (closure_feasible(mid) ? good : bad) = mid;
    }
    fhi = good - limits_.feasibility_margin;
  }
  spread_range_ = {flo, fhi};
  if (spread_range_.first >= spread_range_.second)
    throw KinematicsError(KinematicsError::Code::NoClosure,
                          "feasible spread interval collapsed under margins");
}

bool LimbKinematics::closure_feasible(double spread) const {
  try {
    double kl, kr;
    foot_dh(0.5 * spread, -0.5 * spread, ElbowBranch::A, &kl, &kr);
    return true;
  } catch (const KinematicsError&) {
    return false;
  }
}

Vec3 LimbKinematics::foot_dh(double theta_l, double theta_r, ElbowBranch branch,
                             double* knee_l, double* knee_r) const {
  const TwoChainSolution sol = solve_two_chain(
      geom_.kind, proximal_, distal_, geom_.twist_alpha, -geom_.twist_beta,
      theta_l, theta_r, branch, proximal_ + distal_);
  if (knee_l) *knee_l = sol.knee_left;
  if (knee_r) *knee_r = sol.knee_right;
  return sol.foot;
}

FootPose LimbKinematics::foot_fk(const LimbCommandAngles& cmd,
                                 ElbowBranch branch) const {
  return {kDhToShoulder * foot_dh(cmd.motor_left, cmd.motor_right, branch,
                                  nullptr, nullptr)};
}

LimbKinematics::ChainAngles LimbKinematics::chain_angles(
    const LimbCommandAngles& cmd, ElbowBranch branch) const {
  ChainAngles ca;
  foot_dh(cmd.motor_left, cmd.motor_right, branch, &ca.knee_left,
          &ca.knee_right);
  return ca;
}

std::array<Vec3, 2> LimbKinematics::knee_positions(
    const LimbCommandAngles& cmd) const {
  const Vec3 kl = proximal_ * planar_dir(cmd.motor_left);
  const Vec3 kr = distal_ * planar_dir(cmd.motor_right);
  return {kDhToShoulder * kl, kDhToShoulder * kr};
}

Eigen::Matrix<double, 3, 2> LimbKinematics::foot_jacobian(
    const LimbCommandAngles& cmd, ElbowBranch branch) const {
  const double h = 1e-6;
  Eigen::Matrix<double, 3, 2> J;
  {
    const Vec3 p = foot_dh(cmd.motor_left + h, cmd.motor_right, branch, nullptr, nullptr);
    const Vec3 m = foot_dh(cmd.motor_left - h, cmd.motor_right, branch, nullptr, nullptr);
    J.col(0) = (p - m) / (2.0 * h);
  }
  {
    const Vec3 p = foot_dh(cmd.motor_left, cmd.motor_right + h, branch, nullptr, nullptr);
    const Vec3 m = foot_dh(cmd.motor_left, cmd.motor_right - h, branch, nullptr, nullptr);
    J.col(1) = (p - m) / (2.0 * h);
  }
  return kDhToShoulder * J;
}

LimbCommandAngles LimbKinematics::clamp_command(
    const LimbCommandAngles& cmd) const {
  double swing = cmd.swing();
  double spread = clampd(cmd.spread(), spread_range_.first, spread_range_.second);
  swing = clampd(swing, -limits_.motor_range + 0.5 * spread,
                 limits_.motor_range - 0.5 * spread);
  return LimbCommandAngles::from_swing_spread(swing, spread);
}

LimbCommandAngles LimbKinematics::foot_ik(const FootPose& target,
                                          ElbowBranch branch) const {
  const Vec3 t_dh = kDhToShoulder.transpose() * target.position;
  const double reach = max_reach();
  if (t_dh.norm() > reach + 1e-9)
    throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                          "target beyond maximum limb reach");

  // Planar analytic solution; also the seed for the spatial kinds.
  auto planar_ik = [&](const Vec2& t) -> LimbCommandAngles {
    const double d = t.norm();
    if (d < 1e-12)
      throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                            "target at the shoulder axis");
    const Vec2 dir = t / d;
    const Vec2 perp(-dir.y(), dir.x());
    auto chain = [&](double r_prox, double r_dist, double side) {
      const double tk = (d * d + r_prox * r_prox - r_dist * r_dist) / (2.0 * d);
      const double h2 = r_prox * r_prox - tk * tk;
      if (h2 < -1e-12 * reach * reach)
        throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                              "target outside the annular workspace");
      const Vec2 knee = tk * dir + side * std::sqrt(std::max(h2, 0.0)) * perp;
      return std::atan2(knee.y(), knee.x());
    };
    const double s = branch == ElbowBranch::A ? 1.0 : -1.0;
    return {chain(proximal_, distal_, s), chain(distal_, proximal_, -s)};
  };

  LimbCommandAngles cmd;
  if (geom_.kind == LinkageKind::Planar) {
    if (std::abs(t_dh.z()) > 1e-7)
      throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                            "planar limb cannot leave its leg plane");
    cmd = planar_ik(Vec2(t_dh.x(), t_dh.y()));
  } else {
    // Gauss-Newton from the planar-projected seed; fall back to a coarse
    // seed sweep when the surface curls far from the plane.
    Vec2 proj(t_dh.x(), t_dh.y());
    if (proj.norm() < 1e-9) proj = Vec2(1e-9, 0.0);
    proj *= clampd(t_dh.norm() / proj.norm(), 1.0, reach / proj.norm());
    std::vector<LimbCommandAngles> seeds;
    try {
      seeds.push_back(planar_ik(proj));
    } catch (const KinematicsError&) {
    }
    const auto [slo, shi] = spread_range_;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j)
        seeds.push_back(LimbCommandAngles::from_swing_spread(
            -1.2 + 0.6 * i, slo + (shi - slo) * (0.15 + 0.23 * j)));

    double best_err = 1e300;
    LimbCommandAngles best{};
    for (const auto& seed : seeds) {
      LimbCommandAngles c = clamp_command(seed);
      double err = 1e300;
      for (int it = 0; it < 40; ++it) {
        Vec3 f;
        try {
          f = foot_fk(c, branch).position;
        } catch (const KinematicsError&) {
          break;
        }
        const Vec3 r = f - target.position;
        err = r.norm();
        if (err < 1e-10) break;
        const Eigen::Matrix<double, 3, 2> J = foot_jacobian(c, branch);
        Vec2 step = J.colPivHouseholderQr().solve(-r);
        const double maxstep = 0.5;
        if (step.norm() > maxstep) step *= maxstep / step.norm();
        c = clamp_command({c.motor_left + step[0], c.motor_right + step[1]});
      }
      if (err < best_err) {
        best_err = err;
        best = c;
      }
      if (best_err < 1e-10) break;
    }
    if (best_err > 1e-7)
      throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                            "no command pair reaches the target");
    cmd = best;
  }

  const Vec3 check = foot_fk(cmd, branch).position;
  if ((check - target.position).norm() > 1e-6)
    throw KinematicsError(KinematicsError::Code::OutOfWorkspace,
                          "inverse kinematics failed to converge");
  return cmd;
}

std::vector<Vec3> workspace_sample(const LinkageGeometry& g,
                                   double proximal_len, double distal_len,
                                   int grid_n) {
  LimbKinematics limb(g, proximal_len, distal_len);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(grid_n) * grid_n);
  const double r = limb.limits().motor_range;
  for (int i = 0; i < grid_n; ++i) {
    for (int j = 0; j < grid_n; ++j) {
      const double tl = -r + 2.0 * r * (grid_n == 1 ? 0.5 : double(i) / (grid_n - 1));
      const double tr = -r + 2.0 * r * (grid_n == 1 ? 0.5 : double(j) / (grid_n - 1));
      try {
        pts.push_back(limb.foot_fk({tl, tr}).position);
      } catch (const KinematicsError&) {
        // unreachable cell: omitted
      }
    }
  }
  return pts;
}

}  // namespace ocl
