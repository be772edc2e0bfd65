#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN

#include <cmath>

#include "doctest.h"
#include "ocl/rewards.hpp"

using namespace ocl;

namespace {

SimState make_state(int n) {
  SimState s;
  s.joint_pos = Eigen::VectorXd::Zero(n);
  s.joint_vel = Eigen::VectorXd::Zero(n);
  s.joint_torque = Eigen::VectorXd::Zero(n);
  s.last_action = Eigen::VectorXd::Zero(n);
  return s;
}

RewardBreakdown eval(const SimState& prev, const SimState& cur,
                     const RewardConfig& cfg, const Command& cmd = {}) {
  const int n = static_cast<int>(cur.joint_pos.size());
  const Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  return compute_reward(prev, cur, a, a, cmd, cfg);
}

}  // namespace

TEST_CASE("tracking terms follow exp(-err^2/sigma) exactly") {
  RewardConfig cfg;  // sigma 0.25
  SimState prev = make_state(8);
  SimState cur = make_state(8);
  const Command zero_cmd{0.0, 0.0, 0.0};

  // err^2 = 0, sigma, 4*sigma -> 1, e^-1, e^-4. Velocities are chosen so the
  // squared error is exact in binary.
  cur.base_linvel = Vec3(0.0, 0.0, 0.0);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingLinVel) ==
        doctest::Approx(1.0).epsilon(1e-12));
  cur.base_linvel = Vec3(0.5, 0.0, 0.0);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingLinVel) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  cur.base_linvel = Vec3(1.0, 0.0, 0.0);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingLinVel) ==
        doctest::Approx(std::exp(-4.0)).epsilon(1e-12));

  cur.base_linvel = Vec3::Zero();
  cur.base_angvel = Vec3(0.0, 0.0, 0.0);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingAngVel) ==
        doctest::Approx(1.0).epsilon(1e-12));
  cur.base_angvel = Vec3(0.0, 0.0, 0.5);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingAngVel) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  cur.base_angvel = Vec3(0.0, 0.0, 1.0);
  CHECK(eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingAngVel) ==
        doctest::Approx(std::exp(-4.0)).epsilon(1e-12));

  // Strictly decreasing in the error norm, always within (0, 1].
  double last = 2.0;
  for (double v = 0.0; v < 2.05; v += 0.25) {
    cur.base_angvel = Vec3::Zero();
    cur.base_linvel = Vec3(v, 0.0, 0.0);
    const double r =
        eval(prev, cur, cfg, zero_cmd).raw_of(RewardTerm::kTrackingLinVel);
    CHECK(r > 0.0);
    CHECK(r <= 1.0);
    CHECK(r < last);
    last = r;
  }
}

TEST_CASE("tracking uses body-frame velocity and heading-derived yaw rate") {
  RewardConfig cfg;
  SimState prev = make_state(8);
  SimState cur = make_state(8);

  // Base yawed 90 deg, moving along world +y = body +x. A command of
  // vx = 0.7 in the body frame is then tracked perfectly.
  cur.base_quat = rpy_to_quat(0.0, 0.0, kPi / 2.0);
  cur.base_linvel = Vec3(0.0, 0.7, 0.0);
  Command cmd{0.7, 0.0, kPi / 2.0};
  const RewardBreakdown rb = eval(prev, cur, cfg, cmd);
  CHECK(rb.raw_of(RewardTerm::kTrackingLinVel) ==
        doctest::Approx(1.0).epsilon(1e-9));
  // Heading equals yaw: derived yaw-rate command is zero.
  CHECK(yaw_rate_command(cur, cmd, cfg) == doctest::Approx(0.0).epsilon(1e-12));

  // Proportional heading controller with clamping.
  cur.base_quat = Quat::Identity();
  CHECK(yaw_rate_command(cur, Command{0, 0, 0.8}, cfg) ==
        doctest::Approx(0.4).epsilon(1e-12));
  CHECK(yaw_rate_command(cur, Command{0, 0, 3.0}, cfg) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(yaw_rate_command(cur, Command{0, 0, -3.0}, cfg) ==
        doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("penalty terms match their formulas on hand-built states") {
  RewardConfig cfg;
  SimState prev = make_state(8);
  SimState cur = make_state(8);

  cur.base_linvel = Vec3(0.0, 0.0, 0.3);
  cur.base_angvel = Vec3(0.1, -0.2, 0.5);
  cur.joint_torque << 0.5, -0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0;
  cur.joint_vel << 0.25, -0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  prev.joint_vel << 0.25, -0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5;
  cur.base_pos = Vec3(0.0, 0.0, 0.20);
  cur.ground_height = 0.01;

  Eigen::VectorXd act = Eigen::VectorXd::Zero(8);
  Eigen::VectorXd prev_act = Eigen::VectorXd::Zero(8);
  act[2] = 0.3;
  prev_act[2] = 0.1;
  const Command cmd{0.5, 0.0, 0.0};
  const RewardBreakdown rb = compute_reward(prev, cur, act, prev_act, cmd, cfg);

  CHECK(rb.raw_of(RewardTerm::kLinVelZ) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(rb.raw_of(RewardTerm::kAngVelXy) ==
        doctest::Approx(0.01 + 0.04).epsilon(1e-12));
  CHECK(rb.raw_of(RewardTerm::kTorques) ==
        doctest::Approx(0.25 + 0.25 + 1.0).epsilon(1e-12));
  CHECK(rb.raw_of(RewardTerm::kDofVel) ==
        doctest::Approx(0.0625 + 0.0625 + 1.0).epsilon(1e-12));
  // Only joint 7 accelerated: (0.5 / 0.02)^2 = 625.
  CHECK(rb.raw_of(RewardTerm::kDofAcc) == doctest::Approx(625.0).epsilon(1e-12));
  // Height error 0.20 - 0.01 - 0.17 = 0.02.
  CHECK(rb.raw_of(RewardTerm::kBaseHeight) ==
        doctest::Approx(4.0e-4).epsilon(1e-9));
  CHECK(rb.raw_of(RewardTerm::kActionRate) ==
        doctest::Approx(0.04).epsilon(1e-12));
  // Command norm 0.5 is above the stand-still gate.
  CHECK(rb.raw_of(RewardTerm::kStandStill) == 0.0);

  // Tilted base: projected gravity xy norm^2 = sin^2(roll).
  cur.base_quat = rpy_to_quat(0.3, 0.0, 0.0);
  const RewardBreakdown tilted =
      compute_reward(prev, cur, act, prev_act, cmd, cfg);
  CHECK(tilted.raw_of(RewardTerm::kOrientation) ==
        doctest::Approx(sq(std::sin(0.3))).epsilon(1e-12));
}

TEST_CASE("contact-driven terms: air time, collision, stumble, force budget") {
  RewardConfig cfg;
  SimState prev = make_state(8);
  SimState cur = make_state(8);

  cur.foot_touchdown_air = {0.8, 0.0, 0.3, 0.0};
  cur.base_contact_count = 0;
  RewardBreakdown rb = eval(prev, cur, cfg);
  // (0.8 - 0.5) + (0.3 - 0.5); feet without a touchdown contribute nothing.
  CHECK(rb.raw_of(RewardTerm::kFeetAirTime) ==
        doctest::Approx(0.1).epsilon(1e-12));

  cur.foot_touchdown_air = {};
  cur.base_contact_count = 3;
  rb = eval(prev, cur, cfg);
  CHECK(rb.raw_of(RewardTerm::kCollision) == 3.0);
  CHECK(rb.termination.status == EpisodeStatus::Terminated);
  CHECK(rb.termination.reason == TerminationReason::BodyContact);
  CHECK(rb.raw_of(RewardTerm::kTermination) == 1.0);

  cur.base_contact_count = 0;
  cur.foot_contact = {true, true, false, true};
  cur.foot_normal_force = {2.0, 2.0, 0.0, 8.0};
  cur.foot_tangent_force = {5.0, 3.9, 1.0, 2.0};
  rb = eval(prev, cur, cfg);
  // Only foot 0 exceeds 2x normal while in contact (foot 2 is airborne).
  CHECK(rb.raw_of(RewardTerm::kFeetStumble) == 1.0);

  cur.foot_normal_force = {30.0, 10.0, 0.0, 26.0};
  rb = eval(prev, cur, cfg);
  CHECK(rb.raw_of(RewardTerm::kMaxContactForce) ==
        doctest::Approx(5.0 + 1.0).epsilon(1e-12));
}

TEST_CASE("stand_still penalizes joint motion only near zero command") {
  RewardConfig cfg;
  SimState prev = make_state(8);
  SimState cur = make_state(8);
  cur.joint_vel << 0.1, -0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0;

  RewardBreakdown rb = eval(prev, cur, cfg, Command{0.05, 0.05, 0.0});
  CHECK(rb.raw_of(RewardTerm::kStandStill) ==
        doctest::Approx(0.6).epsilon(1e-12));
  rb = eval(prev, cur, cfg, Command{0.5, 0.0, 0.0});
  CHECK(rb.raw_of(RewardTerm::kStandStill) == 0.0);
}

TEST_CASE("soft limit penalties measure excess past the soft fraction") {
  RewardConfig cfg;  // fractions 0.9 / 0.9 / 0.8
  SimState prev = make_state(12);
  SimState cur = make_state(12);

  // Leg position limit: 0.9 * 150 deg = 135 deg = 2.356194490192345 rad.
  cur.joint_pos[0] = 2.5;
  // Leg velocity limit: 0.9 * 4.6 = 4.14.
  cur.joint_vel[1] = 5.0;
  // Wheel velocity limit: 0.9 * 20 = 18 (joint 9 is a wheel).
  cur.joint_vel[9] = 19.0;
  // Leg torque limit: 0.8 * 4 = 3.2; wheel torque limit: 0.8 * 1 = 0.8.
  cur.joint_torque[2] = 3.7;
  cur.joint_torque[8] = -1.0;
  // Wheels have no position limit: a large wheel angle contributes nothing.
  cur.joint_pos[10] = 40.0;

  const RewardBreakdown rb = eval(prev, cur, cfg);
  CHECK(rb.raw_of(RewardTerm::kSoftDofPosLimit) ==
        doctest::Approx(2.5 - 2.356194490192345).epsilon(1e-12));
  CHECK(rb.raw_of(RewardTerm::kSoftDofVelLimit) ==
        doctest::Approx((5.0 - 4.14) + (19.0 - 18.0)).epsilon(1e-12));
  CHECK(rb.raw_of(RewardTerm::kSoftTorqueLimit) ==
        doctest::Approx((3.7 - 3.2) + (1.0 - 0.8)).epsilon(1e-12));
}

TEST_CASE("termination covers divergence, contact, tilt, and the time limit") {
  RewardConfig cfg;
  SimState s = make_state(8);

  CHECK(check_termination(s, cfg).status == EpisodeStatus::Running);

  s.episode_time = 19.99;
  CHECK(check_termination(s, cfg).status == EpisodeStatus::Running);
  s.episode_time = 20.0;  // inclusive boundary
  CHECK(check_termination(s, cfg).status == EpisodeStatus::Truncated);
  CHECK(check_termination(s, cfg).reason == TerminationReason::None);
  s.episode_time = 0.0;

  s.base_quat = rpy_to_quat(kPi / 2.0, 0.0, 0.0);
  auto t = check_termination(s, cfg);
  CHECK(t.status == EpisodeStatus::Terminated);
  CHECK(t.reason == TerminationReason::Orientation);
  s.base_quat = rpy_to_quat(0.0, -deg2rad(75.0), 0.0);
  CHECK(check_termination(s, cfg).reason == TerminationReason::Orientation);
  s.base_quat = rpy_to_quat(0.0, -deg2rad(45.0), 0.0);
  CHECK(check_termination(s, cfg).status == EpisodeStatus::Running);
  s.base_quat = Quat::Identity();

  s.base_contact_count = 1;
  t = check_termination(s, cfg);
  CHECK(t.status == EpisodeStatus::Terminated);
  CHECK(t.reason == TerminationReason::BodyContact);

  s.diverged = true;  // divergence wins over everything else
  t = check_termination(s, cfg);
  CHECK(t.status == EpisodeStatus::Terminated);
  CHECK(t.reason == TerminationReason::Divergence);
}

TEST_CASE("totals: weighting, positive clip, zero weights, purity") {
  RewardConfig cfg;
  cfg.weights = {};  // all zero
  SimState prev = make_state(8);
  SimState cur = make_state(8);
  cur.base_linvel = Vec3(0.3, 0.2, 0.5);
  cur.joint_torque << 1, 1, 1, 1, 1, 1, 1, 1;

  RewardBreakdown rb = eval(prev, cur, cfg);
  CHECK(rb.total_before == 0.0);
  CHECK(rb.total_after == 0.0);

  cfg.weight(RewardTerm::kLinVelZ) = -2.0;
  rb = eval(prev, cur, cfg);
  CHECK(rb.total_before == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(rb.total_after == 0.0);  // clipped

  cfg.only_positive_rewards = false;
  rb = eval(prev, cur, cfg);
  CHECK(rb.total_after == doctest::Approx(-0.5).epsilon(1e-12));

  cfg.weight(RewardTerm::kTorques) = -0.01;
  rb = eval(prev, cur, cfg);
  CHECK(rb.weighted_of(RewardTerm::kTorques) ==
        doctest::Approx(-0.08).epsilon(1e-12));
  CHECK(rb.total_before ==
        doctest::Approx(-0.5 - 0.08).epsilon(1e-12));

  // Pure function: identical inputs give bitwise-identical breakdowns.
  const RewardBreakdown a = eval(prev, cur, cfg, Command{0.3, -0.2, 0.5});
  const RewardBreakdown b = eval(prev, cur, cfg, Command{0.3, -0.2, 0.5});
  CHECK(a.raw == b.raw);
  CHECK(a.weighted == b.weighted);
  CHECK(a.total_before == b.total_before);
  CHECK(a.total_after == b.total_after);
}

TEST_CASE("presets: legged drops the torque penalty, wheel-legged keeps it") {
  const RewardConfig legged = reward_preset(RewardPreset::Legged);
  const RewardConfig wheeled = reward_preset(RewardPreset::WheelLegged);

  CHECK(legged.weight(RewardTerm::kTorques) == 0.0);
  CHECK(wheeled.weight(RewardTerm::kTorques) != 0.0);
  CHECK(legged.tracking_sigma == 0.25);
  CHECK(legged.only_positive_rewards);
  CHECK(wheeled.only_positive_rewards);
  CHECK(legged.weight(RewardTerm::kTrackingLinVel) > 0.0);
  CHECK(wheeled.weight(RewardTerm::kFeetAirTime) == 0.0);
  // Penalties are negative-signed in the weights.
  CHECK(legged.weight(RewardTerm::kLinVelZ) < 0.0);
  CHECK(legged.weight(RewardTerm::kCollision) < 0.0);
}

TEST_CASE("term names line up with the table and resolve by name") {
  CHECK(kRewardTermNames[static_cast<int>(RewardTerm::kTrackingLinVel)] ==
        std::string("tracking_lin_vel"));
  CHECK(kRewardTermNames[static_cast<int>(RewardTerm::kSoftDofPosLimit)] ==
        std::string("soft_dof_pos_limit"));
  CHECK(reward_term_index("feet_air_time") ==
        static_cast<int>(RewardTerm::kFeetAirTime));
  CHECK(reward_term_index("max_contact_force") ==
        static_cast<int>(RewardTerm::kMaxContactForce));
  CHECK(reward_term_index("no_such_term") == -1);
  // Every name is unique.
  for (int i = 0; i < kNumRewardTerms; ++i)
    CHECK(reward_term_index(kRewardTermNames[i]) == i);
}
