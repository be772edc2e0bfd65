#pragma once

// Batched lightweight floating-base simulation. The body is a single rigid
// box; limbs are massless transmissions whose feet follow the loop FK, so the
// only dynamic states are the base and the actuated joint coordinates (which
// carry a reflected rotor inertia). Feet interact with a heightfield through
// penalty contacts: spring-damper along the terrain normal, Coulomb-capped
// viscous friction tangentially, and rolling-contact kinematics when wheels
// are fitted. Contact forces are mapped back onto the two driving motors of
// each limb through the transpose of the foot Jacobian.
//
// Frames: base_pos / base_linvel are world-frame; base_angvel is body-frame
// (the integration frame for Euler's equation). A control tick advances
// `decimation` physics substeps of dt each.

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "ocl/mathutil.hpp"
#include "ocl/morphology.hpp"
#include "ocl/rng.hpp"
#include "ocl/terrain.hpp"

namespace ocl {

/// Velocity-and-heading task command; training samples each component in
/// [-1, 1] (m/s, m/s, rad).
struct Command {
  double vx = 0.0;
  double vy = 0.0;
  double heading = 0.0;
};

struct ContactParams {
  // Explicit penalty contact: the damping applied per substep must keep
  // c*J^2*dt below the stability limit of the joint and base integrators,
  // which for the widest stances (spherical limbs, foot y-offset ~0.2 m
  // against the body roll inertia) caps c_n well under the naive
  // critical-damping pick. These defaults stand all stock morphologies.
  double k_n = 5000.0;  // normal spring, N/m
  double c_n = 20.0;    // normal damping, N*s/m
  double c_t = 5.0;     // tangential viscous gain, N*s/m; kept below c_n so
                        // stance friction stays linear instead of chattering
                        // against the Coulomb cap
  double mu = 0.8;      // friction cap; combined with terrain as min()
};

struct SimParams {
  double dt = 0.005;    // physics substep, s
  int decimation = 4;   // substeps per control tick (50 Hz control)
  Vec3 gravity{0.0, 0.0, -9.81};
  ContactParams contact;
  double torque_scale = 1.0;       // wheel-legged preset runs 1.5
  double joint_inertia = 0.01;     // reflected rotor+gear inertia, kg*m^2;
                                   // sized so (c_n*J^2 + kd)*dt stays inside
                                   // the explicit-integration stability bound
  double reset_joint_noise = 0.0;  // uniform motor perturbation at reset, rad

  double tick_dt() const { return dt * decimation; }
};

struct SimState {
  Vec3 base_pos = Vec3::Zero();
  Quat base_quat = Quat::Identity();
  Vec3 base_linvel = Vec3::Zero();   // world frame
  Vec3 base_angvel = Vec3::Zero();   // body frame
  Eigen::VectorXd joint_pos;         // rad
  Eigen::VectorXd joint_vel;         // rad/s
  Eigen::VectorXd joint_torque;      // last applied actuator torques, N*m
  Eigen::VectorXd last_action;       // targets from the previous tick
  std::array<bool, 4> foot_contact{};
  std::array<double, 4> foot_air_time{};      // s since last contact
  std::array<double, 4> foot_touchdown_air{}; // air time banked on touchdown
                                              // ticks, zero otherwise
  std::array<double, 4> foot_normal_force{};  // N, last substep
  std::array<double, 4> foot_tangent_force{}; // N, last substep
  double ground_height = 0.0;  // terrain height under the base, m
  int base_contact_count = 0;  // body-box corners touching terrain
  double episode_time = 0.0;   // s
  double mech_energy = 0.0;    // J, trapezoidal integral of sum_i |tau_i w_i|
  double tick_power = 0.0;     // W, mean power over the last control tick
  double inst_power = 0.0;     // W at the last substep (trapezoid memory)
  bool diverged = false;       // any non-finite component; state is frozen
};

struct Spawn {
  Vec2 position = Vec2::Zero();  // world xy, e.g. a curriculum tile center
  double yaw = 0.0;
};

/// Binds a robot model to a terrain and steps environments. Stateless across
/// calls (all per-environment data lives in SimState), so one instance can
/// serve any number of environments from any number of threads.
class Simulator {
 public:
  /// `terrain` is borrowed and must outlive the simulator.
  Simulator(const RobotModel& model, const Heightfield* terrain,
            const SimParams& params = SimParams{});

  const RobotModel& model() const { return model_; }
  const SimParams& params() const { return params_; }
  const Heightfield& terrain() const { return *terrain_; }
  int joint_count() const { return static_cast<int>(defaults_.size()); }

  /// Nominal-stance motor angles (wheel velocities zero); also the reference
  /// the observation subtracts from joint_pos.
  const Eigen::VectorXd& default_joint_pos() const { return defaults_; }

  /// Base height above the terrain at rest: nominal leg extension plus the
  /// wheel radius when wheels are fitted.
  double rest_height() const { return rest_height_; }

  SimState reset(const Spawn& spawn, Rng& rng) const;

  /// One control tick: `decimation` substeps holding `action` (position
  /// targets in rad; trailing wheel entries are velocity targets in rad/s).
  /// No-op if the state has diverged.
  void step(SimState& state, const Eigen::VectorXd& action) const;

  /// [linvel_body(3), angvel_body(3), projected gravity(3), command(3),
  ///  joint_pos - defaults(n), joint_vel(n), last_action - defaults(n)]
  Eigen::VectorXd observe(const SimState& state, const Command& command) const;
  int observation_size() const { return 12 + 3 * joint_count(); }

 private:
  void substep(SimState& s, const Eigen::VectorXd& action,
               const Eigen::Matrix<double, 3, 2>* jacobians) const;

  RobotModel model_;
  const Heightfield* terrain_;
  SimParams params_;
  std::vector<LimbKinematics> limbs_;
  std::array<Vec3, 4> knee_axes_;          // serial knee axis per limb
  std::array<Vec3, 4> bottom_corners_;     // body-box collision probes
  Eigen::VectorXd defaults_;
  Mat3 inertia_inv_;
  double rest_height_ = 0.0;
};

/// Steps every environment one control tick, optionally across worker
/// threads. Results are elementwise identical to sequential step() calls for
/// any worker count. Throws std::invalid_argument on size mismatch.
void batch_step(const Simulator& sim, std::vector<SimState>& states,
                const std::vector<Eigen::VectorXd>& actions, int workers = 1);

/// Trajectory CSV: one row per control tick. The power column is the tick
/// mean, so sum(power*tick_dt) telescopes exactly to mech_energy.
void write_trajectory_header(std::ostream& os, int joint_count);
void write_trajectory_row(std::ostream& os, double time, const SimState& s);

/// Batch checkpoint, little-endian, magic "OCLCKPT\0" + u32 version + u32
/// env count + u32 joint count, then per environment the doubles of SimState
/// in declaration order followed by contact flags and divergence byte.
/// Throws std::runtime_error on malformed input.
void save_checkpoint(std::ostream& os, const std::vector<SimState>& states);
std::vector<SimState> load_checkpoint(std::istream& is);

}  // namespace ocl
