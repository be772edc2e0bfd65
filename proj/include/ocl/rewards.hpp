#pragma once

// Reward shaping and episode termination for the locomotion task. Every term
// of the reward table is computed each control tick from the previous and
// current SimState; the breakdown keeps raw and weighted values per term so
// training logs can report each column separately.

#include <array>
#include <string_view>

#include "ocl/mathutil.hpp"
#include "ocl/simcore.hpp"

namespace ocl {

enum class RewardTerm : int {
  kTermination = 0,
  kTrackingLinVel,
  kTrackingAngVel,
  kLinVelZ,
  kAngVelXy,
  kOrientation,
  kTorques,
  kDofVel,
  kDofAcc,
  kBaseHeight,
  kFeetAirTime,
  kCollision,
  kFeetStumble,
  kActionRate,
  kStandStill,
  kSoftDofPosLimit,
  kSoftDofVelLimit,
  kSoftTorqueLimit,
  kMaxContactForce,
};
constexpr int kNumRewardTerms = 19;

/// Term names as used in logs and config files (one per table row).
extern const std::array<const char*, kNumRewardTerms> kRewardTermNames;

/// Index of a named term, or -1 if the name is unknown.
int reward_term_index(std::string_view name);

struct RewardConfig {
  // Per-term scale; penalties carry their negative sign here, so
  // total = sum_t weights[t] * raw[t].
  std::array<double, kNumRewardTerms> weights{};

  double tracking_sigma = 0.25;      // spread of the exp tracking rewards
  double base_height_target = 0.17;  // m above local terrain
  double soft_dof_pos_limit = 0.9;   // fractions of the hard limits below
  double soft_dof_vel_limit = 0.9;
  double soft_torque_limit = 0.8;
  double max_contact_force = 25.0;   // N, per-foot normal force budget
  bool only_positive_rewards = true;

  // Step/task context the terms need.
  double dt = 0.02;                     // control tick, s
  double feet_air_time_target = 0.5;    // t* in sum(air - t*) at touchdown, s
  double stumble_ratio = 2.0;           // tangential/normal beyond this counts
  double zero_command_threshold = 0.1;  // m/s, gates stand_still
  double heading_gain = 0.5;            // yaw rate cmd = gain * heading error
  double max_yaw_rate = 1.0;            // rad/s clamp on the derived command

  // Hard limits backing the soft-limit penalties. The first eight joints are
  // the leg motors; any further joints are wheels (no position limit).
  double hard_dof_pos_limit = deg2rad(150.0);  // rad
  double hard_dof_vel_limit = 4.6;             // rad/s
  double hard_torque_limit = 4.0;              // N*m
  double wheel_vel_limit = 20.0;               // rad/s
  double wheel_torque_limit = 1.0;             // N*m

  // Termination.
  double tilt_limit = deg2rad(60.0);  // |roll| or |pitch| beyond ends it
  double episode_time_limit = 20.0;   // s, inclusive -> truncation

  double& weight(RewardTerm t) { return weights[static_cast<int>(t)]; }
  double weight(RewardTerm t) const { return weights[static_cast<int>(t)]; }
};

enum class EpisodeStatus { Running, Terminated, Truncated };
enum class TerminationReason { None, Divergence, BodyContact, Orientation };

struct TerminationState {
  EpisodeStatus status = EpisodeStatus::Running;
  TerminationReason reason = TerminationReason::None;
};

struct RewardBreakdown {
  std::array<double, kNumRewardTerms> raw{};
  std::array<double, kNumRewardTerms> weighted{};
  double total_before = 0.0;  // sum of weighted terms
  double total_after = 0.0;   // clipped at zero when only_positive_rewards
  TerminationState termination;  // evaluated on the current state

  double raw_of(RewardTerm t) const { return raw[static_cast<int>(t)]; }
  double weighted_of(RewardTerm t) const {
    return weighted[static_cast<int>(t)];
  }
};

/// Divergence, body contact, and tilt end the episode; the time limit
/// truncates it (inclusive: episode_time == limit already truncates).
TerminationState check_termination(const SimState& state,
                                   const RewardConfig& cfg);

/// Yaw-rate setpoint derived from the heading command: a proportional
/// controller on the wrapped heading error, clamped to +-max_yaw_rate.
double yaw_rate_command(const SimState& state, const Command& command,
                        const RewardConfig& cfg);

/// Evaluate every term for the tick that moved `prev` to `cur` under
/// `action`. Pure: identical inputs give identical breakdowns.
RewardBreakdown compute_reward(const SimState& prev, const SimState& cur,
                               const Eigen::VectorXd& action,
                               const Eigen::VectorXd& prev_action,
                               const Command& command,
                               const RewardConfig& cfg);

enum class RewardPreset { Legged, WheelLegged };

/// Task presets. Legged zeroes the torques weight (the leg servos run near
/// their torque budget by design); WheelLegged keeps a small torque penalty
/// and drops the air-time shaping that makes no sense for rolling contact.
RewardConfig reward_preset(RewardPreset kind);

}  // namespace ocl
