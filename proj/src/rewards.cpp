#include "ocl/rewards.hpp"

#include <cmath>
#include <cstring>

namespace ocl {

const std::array<const char*, kNumRewardTerms> kRewardTermNames = {
    "termination",     "tracking_lin_vel",   "tracking_ang_vel",
    "lin_vel_z",       "ang_vel_xy",         "orientation",
    "torques",         "dof_vel",            "dof_acc",
    "base_height",     "feet_air_time",      "collision",
    "feet_stumble",    "action_rate",        "stand_still",
    "soft_dof_pos_limit", "soft_dof_vel_limit", "soft_torque_limit",
    "max_contact_force",
};

int reward_term_index(std::string_view name) {
  for (int i = 0; i < kNumRewardTerms; ++i)
    if (name == kRewardTermNames[i]) return i;
  return -1;
}

TerminationState check_termination(const SimState& state,
                                   const RewardConfig& cfg) {
  if (state.diverged)
    return {EpisodeStatus::Terminated, TerminationReason::Divergence};
  if (state.base_contact_count > 0)
    return {EpisodeStatus::Terminated, TerminationReason::BodyContact};
  const Vec3 rpy = quat_to_rpy(state.base_quat);
  if (std::abs(rpy.x()) > cfg.tilt_limit || std::abs(rpy.y()) > cfg.tilt_limit)
    return {EpisodeStatus::Terminated, TerminationReason::Orientation};
  if (state.episode_time >= cfg.episode_time_limit)
    return {EpisodeStatus::Truncated, TerminationReason::None};
  return {EpisodeStatus::Running, TerminationReason::None};
}

double yaw_rate_command(const SimState& state, const Command& command,
                        const RewardConfig& cfg) {
  const double yaw = quat_to_rpy(state.base_quat).z();
  const double err = wrap_angle(command.heading - yaw);
  return clampd(cfg.heading_gain * err, -cfg.max_yaw_rate, cfg.max_yaw_rate);
}

RewardBreakdown compute_reward(const SimState& prev, const SimState& cur,
                               const Eigen::VectorXd& action,
                               const Eigen::VectorXd& prev_action,
                               const Command& command,
                               const RewardConfig& cfg) {
  RewardBreakdown out;
  auto& raw = out.raw;
  auto set = [&raw](RewardTerm t, double v) {
    raw[static_cast<int>(t)] = v;
  };

  const Mat3 r = cur.base_quat.toRotationMatrix();
  const Vec3 v_body = r.transpose() * cur.base_linvel;
  const Vec3 g_body = r.transpose() * Vec3(0.0, 0.0, -1.0);

  const double lin_err2 =
      sq(command.vx - v_body.x()) + sq(command.vy - v_body.y());
  set(RewardTerm::kTrackingLinVel, std::exp(-lin_err2 / cfg.tracking_sigma));

  const double wz_cmd = yaw_rate_command(cur, command, cfg);
  const double ang_err2 = sq(wz_cmd - cur.base_angvel.z());
  set(RewardTerm::kTrackingAngVel, std::exp(-ang_err2 / cfg.tracking_sigma));

  set(RewardTerm::kLinVelZ, sq(v_body.z()));
  set(RewardTerm::kAngVelXy, cur.base_angvel.head<2>().squaredNorm());
  set(RewardTerm::kOrientation, g_body.head<2>().squaredNorm());
  set(RewardTerm::kTorques, cur.joint_torque.squaredNorm());
  set(RewardTerm::kDofVel, cur.joint_vel.squaredNorm());
  set(RewardTerm::kDofAcc,
      ((cur.joint_vel - prev.joint_vel) / cfg.dt).squaredNorm());
  set(RewardTerm::kBaseHeight,
      sq(cur.base_pos.z() - cur.ground_height - cfg.base_height_target));
  set(RewardTerm::kActionRate, (action - prev_action).squaredNorm());

  double air = 0.0;
  for (double banked : cur.foot_touchdown_air)
    if (banked > 0.0) air += banked - cfg.feet_air_time_target;
  set(RewardTerm::kFeetAirTime, air);

  set(RewardTerm::kCollision, static_cast<double>(cur.base_contact_count));

  int stumbles = 0;
  for (int i = 0; i < 4; ++i)
    if (cur.foot_tangent_force[i] >
        cfg.stumble_ratio * cur.foot_normal_force[i] &&
        cur.foot_contact[i])
      ++stumbles;
  set(RewardTerm::kFeetStumble, static_cast<double>(stumbles));

  if (std::hypot(command.vx, command.vy) < cfg.zero_command_threshold)
    set(RewardTerm::kStandStill, cur.joint_vel.cwiseAbs().sum());

  // Soft limit penalties: distance past the soft fraction of the hard limit,
  // summed over joints. Leg motors occupy the first eight slots; wheels are
  // continuous joints, so only their velocity and torque are bounded.
  const int n = static_cast<int>(cur.joint_pos.size());
  double pos_excess = 0.0, vel_excess = 0.0, tau_excess = 0.0;
  for (int i = 0; i < n; ++i) {
    const bool wheel = i >= 8;
    if (!wheel) {
      const double lim = cfg.soft_dof_pos_limit * cfg.hard_dof_pos_limit;
      pos_excess += std::max(0.0, std::abs(cur.joint_pos[i]) - lim);
    }
    const double vlim = cfg.soft_dof_vel_limit *
                        (wheel ? cfg.wheel_vel_limit : cfg.hard_dof_vel_limit);
    vel_excess += std::max(0.0, std::abs(cur.joint_vel[i]) - vlim);
    const double tlim =
        cfg.soft_torque_limit *
        (wheel ? cfg.wheel_torque_limit : cfg.hard_torque_limit);
    tau_excess += std::max(0.0, std::abs(cur.joint_torque[i]) - tlim);
  }
  set(RewardTerm::kSoftDofPosLimit, pos_excess);
  set(RewardTerm::kSoftDofVelLimit, vel_excess);
  set(RewardTerm::kSoftTorqueLimit, tau_excess);

  double force_excess = 0.0;
  for (double fn : cur.foot_normal_force)
    force_excess += std::max(0.0, fn - cfg.max_contact_force);
  set(RewardTerm::kMaxContactForce, force_excess);

  out.termination = check_termination(cur, cfg);
  set(RewardTerm::kTermination,
      out.termination.status == EpisodeStatus::Terminated ? 1.0 : 0.0);

  for (int i = 0; i < kNumRewardTerms; ++i) {
    out.weighted[i] = cfg.weights[i] * raw[i];
    out.total_before += out.weighted[i];
  }
  out.total_after = cfg.only_positive_rewards
                        ? std::max(out.total_before, 0.0)
                        : out.total_before;
  return out;
}

RewardConfig reward_preset(RewardPreset kind) {
  RewardConfig cfg;
  cfg.weight(RewardTerm::kTermination) = 0.0;
  cfg.weight(RewardTerm::kTrackingLinVel) = 1.0;
  cfg.weight(RewardTerm::kTrackingAngVel) = 0.5;
  cfg.weight(RewardTerm::kLinVelZ) = -2.0;
  cfg.weight(RewardTerm::kAngVelXy) = -0.05;
  cfg.weight(RewardTerm::kOrientation) = -0.2;
  cfg.weight(RewardTerm::kTorques) = 0.0;  // leg servos run near their budget
  cfg.weight(RewardTerm::kDofVel) = -2.5e-4;
  cfg.weight(RewardTerm::kDofAcc) = -2.5e-7;
  cfg.weight(RewardTerm::kBaseHeight) = -5.0;
  cfg.weight(RewardTerm::kFeetAirTime) = 1.0;
  cfg.weight(RewardTerm::kCollision) = -1.0;
  cfg.weight(RewardTerm::kFeetStumble) = -0.25;
  cfg.weight(RewardTerm::kActionRate) = -0.01;
  cfg.weight(RewardTerm::kStandStill) = -0.1;
  cfg.weight(RewardTerm::kSoftDofPosLimit) = -10.0;
  cfg.weight(RewardTerm::kSoftDofVelLimit) = 0.0;
  cfg.weight(RewardTerm::kSoftTorqueLimit) = 0.0;
  cfg.weight(RewardTerm::kMaxContactForce) = 0.0;
  cfg.only_positive_rewards = true;

  if (kind == RewardPreset::WheelLegged) {
    cfg.weight(RewardTerm::kTorques) = -1e-5;
    cfg.weight(RewardTerm::kTrackingLinVel) = 1.5;
    cfg.weight(RewardTerm::kFeetAirTime) = 0.0;  // rolling contact
    cfg.weight(RewardTerm::kDofVel) = -5.0e-4;
  }
  return cfg;
}

}  // namespace ocl
