#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ocl/mathutil.hpp"

namespace ocl {

// ---------------------------------------------------------------------------
// The reconfigurable 4R limb family.
//
// One closed loop of four revolute joints with alternating link pairs
// (a, alpha) and (b, beta). Three mobile cases exist:
//   Planar    - all joint axes parallel, both twists zero, lengths > 0.
//   Bennett   - skewed axes; mobile only when sin(alpha)/a == sin(beta)/b.
//   Spherical - all axes through one point, both lengths zero, twists != 0.
//
// Loop convention: traversing the loop, the (b, beta) pair is crossed, i.e.
// applied with the opposite twist sense (joint-link transforms Rz*Tx(a)*Rx(+alpha)
// and Rz*Tx(b)*Rx(-beta)). Of the two skewed-loop families this is the
// leg-like one: shrinking the twists collapses it onto the diamond branch of
// the planar four-bar instead of the antiparallelogram branch. Both stored
// twists are quoted positive.
//
// Used as a robot leg: the loop's joint 1 is a co-axial pair of motors on the
// shoulder. motor_left drives the proximal-left link, motor_right the
// proximal-right link; the foot is the opposite loop joint. The whole loop
// swings about the motor axis as a rigid body (swing = mean motor angle); the
// loop's internal degree of freedom is set by the spread (motor angle
// difference).
// ---------------------------------------------------------------------------

enum class LinkageKind { Planar, Bennett, Spherical };

const char* to_string(LinkageKind k);
LinkageKind linkage_kind_from_string(const std::string& s);

struct LinkageGeometry {
  LinkageKind kind = LinkageKind::Planar;
  double link_len_a = 0.1;   // meters, link pair 1
  double link_len_b = 0.1;   // meters, link pair 2
  double twist_alpha = 0.0;  // radians, pair 1
  double twist_beta = 0.0;   // radians, pair 2
};

/// Joint angles around the closed loop, in loop order.
struct JointAngles {
  std::array<double, 4> theta{0.0, 0.0, 0.0, 0.0};
};

/// The two co-axial actuator angles. Zero = link pointing straight down in
/// the shoulder frame; positive swings the left link forward (+x).
struct LimbCommandAngles {
  double motor_left = 0.0;
  double motor_right = 0.0;

  double swing() const { return 0.5 * (motor_left + motor_right); }
  double spread() const { return motor_left - motor_right; }
  static LimbCommandAngles from_swing_spread(double swing, double spread) {
    return {swing + 0.5 * spread, swing - 0.5 * spread};
  }
};

/// Foot point in the limb's shoulder frame (x forward, y lateral, z up).
struct FootPose {
  Vec3 position = Vec3::Zero();
};

/// The two closure solutions. Elbow A is the one whose foot lies on the far
/// side of the knee chord from the shoulder, i.e. below the shoulder axis in
/// the nominal diamond stance.
enum class ElbowBranch { A, B };

// --- errors -----------------------------------------------------------------

enum class GeometryFault {
  None,
  NonPositiveLength,
  BennettConditionViolated,
  NonZeroTwistForPlanar,
  NonZeroLengthForSpherical,
  ZeroTwistForSpherical,
  TwistOutOfRange,
};

struct GeometryCheck {
  GeometryFault fault = GeometryFault::None;
  std::string message;
  bool ok() const { return fault == GeometryFault::None; }
};

const char* to_string(GeometryFault f);

class KinematicsError : public std::runtime_error {
 public:
  enum class Code {
    InvalidGeometry,
    NoClosure,
    SingularConfiguration,
    DegenerateConfiguration,
    Unreachable,
    OutOfWorkspace,
    ConversionInfeasible,
  };

  KinematicsError(Code code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// --- loop-level operations ---------------------------------------------------

/// Check the kind-specific mobility conditions. Bennett uses a 1e-9 relative
/// tolerance on sin(alpha)/a == sin(beta)/b.
GeometryCheck validate_geometry(const LinkageGeometry& g);

/// Throwing form of validate_geometry.
void require_valid(const LinkageGeometry& g);

/// Solve the loop closure for the passive angles given the joint-1 input.
/// The returned angles drive the product of the four joint-then-link
/// transforms to identity with residual < 1e-9.
JointAngles closure_solve(const LinkageGeometry& g, double input_angle,
                          ElbowBranch branch);

/// Residual norm of the full spatial closure for the given angles; the
/// quantity closure_solve drives below 1e-9.
double closure_residual(const LinkageGeometry& g, const JointAngles& ja);

/// Collapse the geometry into the planar (zero twists) or spherical
/// (zero lengths) member of the family.
LinkageGeometry degenerate(const LinkageGeometry& g, LinkageKind to);

// --- limb-level kinematics ---------------------------------------------------

struct JointLimitConfig {
  double motor_range = deg2rad(150.0);     // each motor, +/- from straight down
  double spread_min = deg2rad(10.0);       // scissor self-collision stops
  double spread_max = deg2rad(170.0);
  double feasibility_margin = 0.05;        // rad kept clear of closure folds
};

/// Kinematics of one limb: the loop used as a two-motor leg.
///
/// proximal_len/distal_len are the physical link lengths of the driven and
/// distal pairs; for Planar and Bennett they are the loop lengths and must
/// satisfy the kind's closure condition with the geometry's twists. For
/// Spherical limbs the loop lengths are zero and the foot rides on the distal
/// link at radius proximal_len + distal_len from the axis-intersection point.
class LimbKinematics {
 public:
  LimbKinematics(const LinkageGeometry& g, double proximal_len,
                 double distal_len, JointLimitConfig limits = {});

  const LinkageGeometry& geometry() const { return geom_; }
  double proximal_len() const { return proximal_; }
  double distal_len() const { return distal_; }
  const JointLimitConfig& limits() const { return limits_; }

  /// Foot position in the shoulder frame.
  FootPose foot_fk(const LimbCommandAngles& cmd,
                   ElbowBranch branch = ElbowBranch::A) const;

  /// Inverse of foot_fk; round-trips within 1e-6 m on reachable targets.
  LimbCommandAngles foot_ik(const FootPose& target,
                            ElbowBranch branch = ElbowBranch::A) const;

  /// 3x2 Jacobian d(foot)/d(motor_left, motor_right) in the shoulder frame,
  /// by central finite differences with h = 1e-6 rad.
  Eigen::Matrix<double, 3, 2> foot_jacobian(
      const LimbCommandAngles& cmd, ElbowBranch branch = ElbowBranch::A) const;

  /// Knee (passive joint) angles of the left/right driven chains.
  struct ChainAngles {
    double knee_left = 0.0;
    double knee_right = 0.0;
  };
  ChainAngles chain_angles(const LimbCommandAngles& cmd,
                           ElbowBranch branch = ElbowBranch::A) const;

  /// Knee positions in the shoulder frame (for collision-style checks).
  std::array<Vec3, 2> knee_positions(const LimbCommandAngles& cmd) const;

  /// Feasible spread interval (intersection of closure feasibility and the
  /// configured scissor limits), with the fold margin applied.
  std::pair<double, double> spread_range() const { return spread_range_; }

  /// Clamp a command into motor limits and the feasible spread interval,
  /// preserving swing.
  LimbCommandAngles clamp_command(const LimbCommandAngles& cmd) const;

  double max_reach() const { return proximal_ + distal_; }

 private:
  Vec3 foot_dh(double theta_l, double theta_r, ElbowBranch branch,
               double* knee_l, double* knee_r) const;
  bool closure_feasible(double spread) const;

  LinkageGeometry geom_;
  double proximal_ = 0.0;
  double distal_ = 0.0;
  JointLimitConfig limits_;
  std::pair<double, double> spread_range_{0.0, 0.0};
};

/// grid_n x grid_n FK sweep over the feasible command box; unreachable cells
/// are omitted. Points are in the shoulder frame.
std::vector<Vec3> workspace_sample(const LinkageGeometry& g,
                                   double proximal_len, double distal_len,
                                   int grid_n);

}  // namespace ocl
