#pragma once
// Quadruped assembly: body + four 4R limbs, pseudo-open-chain conversion
// for loop-free simulators, and robot description I/O.
//
// Conventions.
//  * Body frame: x forward, y left, z up. Limbs mount at the four corners
//    of the body box (FL, FR, RL, RR), shoulder axes aligned with the body.
//  * All four limbs share one canonical linkage. Left-side limbs are the
//    mirror enantiomer; their foot map is diag(1,-1,1) * f(cmd) with the
//    SAME command values, i.e. positive swing moves every foot forward and
//    equal commands produce a laterally symmetric stance. Physically this
//    is the mirror-image mechanism with its motor sense relabelled.
//  * Legs are massless: link masses are lumped into the body inertia.
//
// The pseudo-open chain replaces each closed loop by the two-joint serial
// chain (hip = left motor, knee = left passive joint). That chain traces
// exactly the same shoulder-to-foot map, so the conversion is lossless on
// the shared workspace; see serial_limb_params().

#include <array>
#include <optional>
#include <string>

#include "ocl/linkage.hpp"
#include "ocl/mathutil.hpp"

namespace ocl {

enum class MotorMode { Position, Velocity };

struct MotorSpec {
  double torque_limit = 4.0;    // N*m
  double velocity_limit = 4.6;  // rad/s
  double kp = 40.0;             // N*m/rad, position mode
  double kd = 0.7;              // N*m*s/rad, also the velocity-mode gain
  MotorMode mode = MotorMode::Position;
};

struct WheelOption {
  double radius = 0.03;  // m
  MotorSpec motor{1.0, 20.0, 0.0, 0.5, MotorMode::Velocity};
};

/// Inertia tensor of a uniform box about its own center.
Mat3 solid_box_inertia(double mass, const Vec3& dims);

struct BodyConfig {
  Vec3 dimensions{0.30, 0.20, 0.08};  // x * y * z, m
  double mass = 2.5;                  // kg, leg masses lumped in
  Mat3 inertia = solid_box_inertia(2.5, Vec3(0.30, 0.20, 0.08));
};

enum class LimbId { FrontLeft = 0, FrontRight = 1, RearLeft = 2, RearRight = 3 };

inline bool is_left(LimbId id) {
  return id == LimbId::FrontLeft || id == LimbId::RearLeft;
}

struct LimbMount {
  Vec3 translation = Vec3::Zero();  // shoulder origin in the body frame
  bool mirrored = false;            // true on the left side
};

struct LimbModel {
  LinkageGeometry geometry;
  double proximal_len = 0.1;  // m, shoulder to knee
  double distal_len = 0.1;    // m, knee to foot
  LimbMount mount;
};

enum class ChainForm { ClosedLoop, PseudoOpen };

/// Joint index layout used everywhere (observations, actions, actuators):
/// joints [2i, 2i+1] are limb i's (left, right) motors for i in FL,FR,RL,RR
/// order; wheel joints, when present, are appended as [8+i].
struct RobotModel {
  std::string name = "oclab";
  BodyConfig body;
  std::array<LimbModel, 4> limbs;
  std::array<MotorSpec, 8> actuators;
  std::optional<WheelOption> wheel;
  JointLimitConfig limits;
  ChainForm chain = ChainForm::ClosedLoop;

  int joint_count() const { return wheel ? 12 : 8; }

  LimbKinematics make_limb_kinematics(int limb) const;

  /// Foot position in the body frame; applies mount and mirroring.
  Vec3 foot_in_body(int limb, const LimbCommandAngles& cmd,
                    ElbowBranch branch = ElbowBranch::A) const;
};

/// Four identical limbs at the body corners, mirrored across the sagittal
/// plane. Limb segment lengths default to the loop link lengths (0.1 m each
/// for spherical loops, whose own links are zero-length).
/// Throws KinematicsError(InvalidGeometry) on a bad geometry.
RobotModel assemble_quadruped(const LinkageGeometry& geometry,
                              const BodyConfig& body = BodyConfig{},
                              const MotorSpec& motor = MotorSpec{},
                              const std::optional<WheelOption>& wheel = {});

/// Two-joint serial equivalent of one limb (DH-style: hip about the lateral
/// axis, thigh of length `thigh_dh_len` with twist `twist`, knee, shank).
struct SerialLimbParams {
  double thigh_dh_len = 0.0;  // 0 for spherical loops
  double twist = 0.0;
  double shank_len = 0.0;
};
SerialLimbParams serial_limb_params(const LimbModel& limb);

/// Forward kinematics of the serial chain in the shoulder frame of the
/// canonical (unmirrored) limb. hip/knee are the serial joint values; the
/// closed chain maps onto them as hip = motor_left, knee = left knee angle.
Vec3 serial_foot_fk(const SerialLimbParams& p, double hip, double knee,
                    bool mirrored = false);

/// Joint axes of the emitted description, in the parent-link frame at the
/// zero pose. Planar limbs have every axis equal to the hip axis.
Vec3 serial_hip_axis();
Vec3 serial_knee_axis(const SerialLimbParams& p, bool mirrored);

/// Replace every closed-loop limb by its serial equivalent. Idempotent.
/// Certifies FK equivalence on a 20x20 command grid per limb and throws
/// KinematicsError(ConversionInfeasible) if any sample misses 1e-6 m.
RobotModel to_pseudo_open_chain(const RobotModel& model);

/// Default standing commands: zero swing, 60 deg spread, clamped into each
/// limb's feasible spread interval. Identical for all four limbs.
std::array<LimbCommandAngles, 4> nominal_stance(const RobotModel& model);

/// Shoulder height above the feet at the nominal stance.
double standing_height(const RobotModel& model);

struct FootholdMetrics {
  double width = 0.0;       // mean left foot y - mean right foot y
  double body_width = 0.0;  // body dimension along y
  double ratio = 0.0;       // width / body_width
};

/// Lateral distance between left and right foot contact points at a stance,
/// and its ratio to the body width. Propagates FK errors for unreachable
/// stances.
FootholdMetrics foothold_width(const RobotModel& model,
                               const std::array<LimbCommandAngles, 4>& stance);

class DescriptionError : public std::runtime_error {
 public:
  enum class Code { ParseError, MissingInertial, BadJointAxis };

  DescriptionError(Code code, int line, std::string element, const std::string& what)
      : std::runtime_error(what), code_(code), line_(line), element_(std::move(element)) {}

  Code code() const { return code_; }
  int line() const { return line_; }                  // 1-based source line
  const std::string& element() const { return element_; }

 private:
  Code code_;
  int line_;
  std::string element_;
};

/// URDF-dialect XML of the pseudo-open-chain structure: links, joints with
/// axes and limits, inertials, plus custom sidecar elements (ignored by
/// standard URDF consumers) carrying the original loop-closure pairs, the
/// actuation gains, the joint-limit config and the chain form.
std::string emit_description(const RobotModel& model);

/// Inverse of emit_description. Throws DescriptionError with line/element
/// diagnostics on malformed input, missing/non-positive inertials, or joint
/// axes inconsistent with the limb chirality; throws KinematicsError when
/// the embedded loop geometry fails validation.
RobotModel parse_description(const std::string& text);

}  // namespace ocl
