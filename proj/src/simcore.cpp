#include "ocl/simcore.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace ocl {
namespace {

const char kCheckpointMagic[8] = {'O', 'C', 'L', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::string fmt(double v) {
  if (v == 0.0) return "0";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

bool all_finite(const SimState& s) {
  return s.base_pos.allFinite() && s.base_linvel.allFinite() &&
         s.base_angvel.allFinite() && s.base_quat.coeffs().allFinite() &&
         s.joint_pos.allFinite() && s.joint_vel.allFinite();
}

}  // namespace

Simulator::Simulator(const RobotModel& model, const Heightfield* terrain,
                     const SimParams& params)
    : model_(model), terrain_(terrain), params_(params) {
  if (terrain_ == nullptr) throw std::invalid_argument("simulator: null terrain");
  if (params_.dt <= 0.0 || params_.decimation < 1)
    throw std::invalid_argument("simulator: bad time stepping parameters");

  limbs_.reserve(4);
  for (int i = 0; i < 4; ++i) limbs_.push_back(model_.make_limb_kinematics(i));
  for (int i = 0; i < 4; ++i) {
    const SerialLimbParams sp = serial_limb_params(model_.limbs[i]);
    knee_axes_[i] = serial_knee_axis(sp, model_.limbs[i].mount.mirrored);
  }

  const Vec3 half = 0.5 * model_.body.dimensions;
  bottom_corners_ = {Vec3(half.x(), half.y(), -half.z()),
                     Vec3(half.x(), -half.y(), -half.z()),
                     Vec3(-half.x(), half.y(), -half.z()),
                     Vec3(-half.x(), -half.y(), -half.z())};

  const auto stance = nominal_stance(model_);
  defaults_ = Eigen::VectorXd::Zero(model_.joint_count());
  for (int i = 0; i < 4; ++i) {
    defaults_[2 * i] = stance[i].motor_left;
    defaults_[2 * i + 1] = stance[i].motor_right;
  }
  rest_height_ = standing_height(model_) +
                 (model_.wheel ? model_.wheel->radius : 0.0);
  inertia_inv_ = model_.body.inertia.inverse();
}

SimState Simulator::reset(const Spawn& spawn, Rng& rng) const {
  SimState s;
  const int n = joint_count();
  s.joint_pos = defaults_;
  if (params_.reset_joint_noise > 0.0) {
    for (int j = 0; j < 8; ++j)
      s.joint_pos[j] +=
          rng.uniform(-params_.reset_joint_noise, params_.reset_joint_noise);
    for (int li = 0; li < 4; ++li) {
      const LimbCommandAngles cl = limbs_[li].clamp_command(
          {s.joint_pos[2 * li], s.joint_pos[2 * li + 1]});
      s.joint_pos[2 * li] = cl.motor_left;
      s.joint_pos[2 * li + 1] = cl.motor_right;
    }
  }
  s.joint_vel = Eigen::VectorXd::Zero(n);
  s.joint_torque = Eigen::VectorXd::Zero(n);
  s.last_action = defaults_;
  s.ground_height =
      terrain_->height_at(spawn.position.x(), spawn.position.y());
  s.base_pos = Vec3(spawn.position.x(), spawn.position.y(),
                    s.ground_height + rest_height_);
  s.base_quat = rpy_to_quat(0.0, 0.0, spawn.yaw);
  return s;
}

void Simulator::substep(SimState& s, const Eigen::VectorXd& action,
                        const Eigen::Matrix<double, 3, 2>* jacobians) const {
  const double dt = params_.dt;
  const int n = joint_count();
  const double mass = model_.body.mass;
  const Mat3 R = s.base_quat.toRotationMatrix();
  const double mu_cap = std::min(params_.contact.mu, terrain_->friction);
  const bool wheels = model_.wheel.has_value();
  const double wheel_r = wheels ? model_.wheel->radius : 0.0;

  // Actuator torques from the held targets.
  for (int j = 0; j < 8; ++j) {
    const MotorSpec& m = model_.actuators[j];
    const double lim = m.torque_limit * params_.torque_scale;
    const double raw = m.kp * (action[j] - s.joint_pos[j]) - m.kd * s.joint_vel[j];
    s.joint_torque[j] = clampd(raw, -lim, lim);
  }
  if (wheels) {
    const MotorSpec& m = model_.wheel->motor;
    const double lim = m.torque_limit * params_.torque_scale;
    for (int j = 8; j < 12; ++j)
      s.joint_torque[j] =
          clampd(m.kd * (action[j] - s.joint_vel[j]), -lim, lim);
  }

  // Foot contacts against the heightfield. Forces act on the massless feet,
  // so they transfer to the base as a wrench and to the two driving motors
  // through the foot Jacobian transpose.
  Vec3 force_w = mass * params_.gravity;
  Vec3 torque_w = Vec3::Zero();
  double contact_tau[12] = {};
  for (int li = 0; li < 4; ++li) {
    const bool mirrored = model_.limbs[li].mount.mirrored;
    const LimbCommandAngles cmd{s.joint_pos[2 * li], s.joint_pos[2 * li + 1]};
    Vec3 f = limbs_[li].foot_fk(cmd, ElbowBranch::A).position;
    if (mirrored) f.y() = -f.y();
    const Vec3 r_b = model_.limbs[li].mount.translation + f;
    const Vec3 p_w = s.base_pos + R * r_b;

    Eigen::Matrix<double, 3, 2> J = jacobians[li];
    if (mirrored) J.row(1) = -J.row(1);

    const Vec2 qd(s.joint_vel[2 * li], s.joint_vel[2 * li + 1]);
    const Vec3 v_foot =
        s.base_linvel + R * (s.base_angvel.cross(r_b) + J * qd);

    const Vec3 normal = terrain_->normal_at(p_w.x(), p_w.y());
    const Vec3 p_c = p_w - wheel_r * normal;  // wheel rim, or the foot itself
    const double gap =
        terrain_->height_at(p_c.x(), p_c.y()) - p_c.z();

    const bool was_contact = s.foot_contact[li];
    if (gap > 0.0) {
      Vec3 v_c = v_foot;
      Vec3 axis_w = Vec3::Zero();
      if (wheels) {
        axis_w = R * (Eigen::AngleAxisd(s.joint_pos[2 * li],
                                        serial_hip_axis())
                          .toRotationMatrix() *
                      knee_axes_[li]);
        v_c += s.joint_vel[8 + li] * axis_w.cross(p_c - p_w);
      }
      const double v_n = v_c.dot(normal);
      const double f_n =
          std::max(0.0, params_.contact.k_n * gap - params_.contact.c_n * v_n);
      Vec3 f_t = -params_.contact.c_t * (v_c - v_n * normal);
      const double ft_norm = f_t.norm();
      if (ft_norm > mu_cap * f_n) f_t *= mu_cap * f_n / ft_norm;
      const Vec3 fc = f_n * normal + f_t;

      force_w += fc;
      torque_w += (p_c - s.base_pos).cross(fc);
      const Vec2 tau_pair = (R * J).transpose() * fc;
      contact_tau[2 * li] += tau_pair[0];
      contact_tau[2 * li + 1] += tau_pair[1];
      if (wheels) contact_tau[8 + li] += (p_c - p_w).cross(fc).dot(axis_w);

      s.foot_normal_force[li] = f_n;
      s.foot_tangent_force[li] = f_t.norm();
      s.foot_contact[li] = true;
      if (!was_contact && s.foot_air_time[li] > 0.0)
        s.foot_touchdown_air[li] = s.foot_air_time[li];
      s.foot_air_time[li] = 0.0;
    } else {
      s.foot_normal_force[li] = 0.0;
      s.foot_tangent_force[li] = 0.0;
      s.foot_contact[li] = false;
      s.foot_air_time[li] += dt;
    }
  }

  // Body box corners: collision probes with the same penalty model.
  int corner_contacts = 0;
  for (const Vec3& c : bottom_corners_) {
    const Vec3 p = s.base_pos + R * c;
    const Vec3 normal = terrain_->normal_at(p.x(), p.y());
    const double gap = terrain_->height_at(p.x(), p.y()) - p.z();
    if (gap <= 0.0) continue;
    ++corner_contacts;
    const Vec3 v = s.base_linvel + R * s.base_angvel.cross(c);
    const double v_n = v.dot(normal);
    const double f_n =
        std::max(0.0, params_.contact.k_n * gap - params_.contact.c_n * v_n);
    Vec3 f_t = -params_.contact.c_t * (v - v_n * normal);
    const double ft_norm = f_t.norm();
    if (ft_norm > mu_cap * f_n) f_t *= mu_cap * f_n / ft_norm;
    const Vec3 fc = f_n * normal + f_t;
    force_w += fc;
    torque_w += (p - s.base_pos).cross(fc);
  }
  s.base_contact_count = corner_contacts;

  // Joint integration (semi-implicit) with per-limb feasibility clamping.
  for (int j = 0; j < n; ++j) {
    s.joint_vel[j] += (s.joint_torque[j] + contact_tau[j]) /
                      params_.joint_inertia * dt;
    s.joint_pos[j] += s.joint_vel[j] * dt;
  }
  for (int li = 0; li < 4; ++li) {
    const LimbCommandAngles cmd{s.joint_pos[2 * li], s.joint_pos[2 * li + 1]};
    const LimbCommandAngles cl = limbs_[li].clamp_command(cmd);
    // Reconstruction through swing/spread wobbles in the last ulp, so require
    // a real projection before touching the state.
    if (std::abs(cl.motor_left - cmd.motor_left) > 1e-12) {
      s.joint_pos[2 * li] = cl.motor_left;
      s.joint_vel[2 * li] = 0.0;
    }
    if (std::abs(cl.motor_right - cmd.motor_right) > 1e-12) {
      s.joint_pos[2 * li + 1] = cl.motor_right;
      s.joint_vel[2 * li + 1] = 0.0;
    }
  }

  // Base integration: semi-implicit Euler, Euler's equation in body frame.
  s.base_linvel += force_w / mass * dt;
  s.base_pos += s.base_linvel * dt;
  const Vec3 torque_b = R.transpose() * torque_w;
  const Vec3 omega_dot =
      inertia_inv_ *
      (torque_b - s.base_angvel.cross(model_.body.inertia * s.base_angvel));
  s.base_angvel += omega_dot * dt;
  const double angle = s.base_angvel.norm() * dt;
  if (angle > 0.0) {
    s.base_quat = s.base_quat *
                  Quat(Eigen::AngleAxisd(angle, s.base_angvel.normalized()));
  }
  s.base_quat.normalize();

  // Trapezoidal actuation-energy accumulation.
  double power = 0.0;
  for (int j = 0; j < n; ++j)
    power += std::abs(s.joint_torque[j] * s.joint_vel[j]);
  s.mech_energy += 0.5 * (s.inst_power + power) * dt;
  s.inst_power = power;

  s.ground_height = terrain_->height_at(s.base_pos.x(), s.base_pos.y());
  s.episode_time += dt;
  if (!all_finite(s)) s.diverged = true;
}

void Simulator::step(SimState& s, const Eigen::VectorXd& action) const {
  if (s.diverged) return;
  if (action.size() != joint_count())
    throw std::invalid_argument("step: action size mismatch");

  // The contact Jacobian is refreshed once per control tick; it varies slowly
  // next to the contact dynamics and this halves the FK work per tick.
  Eigen::Matrix<double, 3, 2> jac[4];
  for (int li = 0; li < 4; ++li)
    jac[li] = limbs_[li].foot_jacobian(
        {s.joint_pos[2 * li], s.joint_pos[2 * li + 1]}, ElbowBranch::A);

  s.foot_touchdown_air.fill(0.0);
  const double energy0 = s.mech_energy;
  for (int k = 0; k < params_.decimation && !s.diverged; ++k)
    substep(s, action, jac);
  s.tick_power = (s.mech_energy - energy0) / params_.tick_dt();
  s.last_action = action;
}

Eigen::VectorXd Simulator::observe(const SimState& s,
                                   const Command& command) const {
  const int n = joint_count();
  Eigen::VectorXd obs(observation_size());
  const Mat3 Rt = s.base_quat.toRotationMatrix().transpose();
  obs.segment<3>(0) = Rt * s.base_linvel;
  obs.segment<3>(3) = s.base_angvel;
  obs.segment<3>(6) = Rt * Vec3(0.0, 0.0, -1.0);
  obs[9] = command.vx;
  obs[10] = command.vy;
  obs[11] = command.heading;
  obs.segment(12, n) = s.joint_pos - defaults_;
  obs.segment(12 + n, n) = s.joint_vel;
  obs.segment(12 + 2 * n, n) = s.last_action - defaults_;
  return obs;
}

void batch_step(const Simulator& sim, std::vector<SimState>& states,
                const std::vector<Eigen::VectorXd>& actions, int workers) {
  if (states.size() != actions.size())
    throw std::invalid_argument("batch_step: states/actions size mismatch");
  for (const auto& a : actions)
    if (a.size() != sim.joint_count())
      throw std::invalid_argument("batch_step: action size mismatch");
  const std::size_t n = states.size();
  if (n == 0) return;

  workers = std::clamp<int>(workers, 1, static_cast<int>(n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) sim.step(states[i], actions[i]);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end] {
      for (std::size_t i = begin; i < end; ++i) sim.step(states[i], actions[i]);
    });
  }
  for (auto& t : pool) t.join();
}

void write_trajectory_header(std::ostream& os, int joint_count) {
  os << "time,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz";
  for (int j = 0; j < joint_count; ++j) os << ",q" << j;
  for (int j = 0; j < joint_count; ++j) os << ",dq" << j;
  for (int j = 0; j < joint_count; ++j) os << ",tau" << j;
  for (int j = 0; j < 4; ++j) os << ",contact" << j;
  os << ",power\n";
}

void write_trajectory_row(std::ostream& os, double time, const SimState& s) {
  os << fmt(time);
  for (int i = 0; i < 3; ++i) os << ',' << fmt(s.base_pos[i]);
  os << ',' << fmt(s.base_quat.w()) << ',' << fmt(s.base_quat.x()) << ','
     << fmt(s.base_quat.y()) << ',' << fmt(s.base_quat.z());
  for (int i = 0; i < 3; ++i) os << ',' << fmt(s.base_linvel[i]);
  for (int i = 0; i < 3; ++i) os << ',' << fmt(s.base_angvel[i]);
  for (int j = 0; j < s.joint_pos.size(); ++j) os << ',' << fmt(s.joint_pos[j]);
  for (int j = 0; j < s.joint_vel.size(); ++j) os << ',' << fmt(s.joint_vel[j]);
  for (int j = 0; j < s.joint_torque.size(); ++j)
    os << ',' << fmt(s.joint_torque[j]);
  for (int i = 0; i < 4; ++i) os << ',' << (s.foot_contact[i] ? 1 : 0);
  os << ',' << fmt(s.tick_power) << '\n';
}

namespace {

// Checkpoint field order per environment: base_pos(3), base_quat(w,x,y,z),
// base_linvel(3), base_angvel(3), joint_pos(n), joint_vel(n),
// joint_torque(n), last_action(n), foot_air_time(4), foot_touchdown_air(4),
// foot_normal_force(4), foot_tangent_force(4), ground_height, episode_time,
// mech_energy, tick_power, inst_power — all f64 — then base_contact_count
// (u32), foot_contact (4 x u8), diverged (u8).

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v), static_cast<char>(v >> 8),
               static_cast<char>(v >> 16), static_cast<char>(v >> 24)};
  os.write(b, 4);
}

void put_f64(std::ostream& os, double v) {
  const auto u = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(u >> (8 * i));
  os.write(b, 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw std::runtime_error("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("checkpoint: truncated");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

std::uint8_t get_u8(std::istream& is) {
  char c;
  if (!is.read(&c, 1)) throw std::runtime_error("checkpoint: truncated");
  return static_cast<std::uint8_t>(c);
}

}  // namespace

void save_checkpoint(std::ostream& os, const std::vector<SimState>& states) {
  os.write(kCheckpointMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(states.size()));
  const std::uint32_t n =
      states.empty() ? 0u
                     : static_cast<std::uint32_t>(states[0].joint_pos.size());
  put_u32(os, n);
  for (const SimState& s : states) {
    if (s.joint_pos.size() != static_cast<int>(n))
      throw std::runtime_error("checkpoint: ragged joint dimensions");
    for (int i = 0; i < 3; ++i) put_f64(os, s.base_pos[i]);
    put_f64(os, s.base_quat.w());
    put_f64(os, s.base_quat.x());
    put_f64(os, s.base_quat.y());
    put_f64(os, s.base_quat.z());
    for (int i = 0; i < 3; ++i) put_f64(os, s.base_linvel[i]);
    for (int i = 0; i < 3; ++i) put_f64(os, s.base_angvel[i]);
    for (const auto* vec :
         {&s.joint_pos, &s.joint_vel, &s.joint_torque, &s.last_action})
      for (int j = 0; j < vec->size(); ++j) put_f64(os, (*vec)[j]);
    for (double v : s.foot_air_time) put_f64(os, v);
    for (double v : s.foot_touchdown_air) put_f64(os, v);
    for (double v : s.foot_normal_force) put_f64(os, v);
    for (double v : s.foot_tangent_force) put_f64(os, v);
    put_f64(os, s.ground_height);
    put_f64(os, s.episode_time);
    put_f64(os, s.mech_energy);
    put_f64(os, s.tick_power);
    put_f64(os, s.inst_power);
    put_u32(os, static_cast<std::uint32_t>(s.base_contact_count));
    for (bool c : s.foot_contact)
      os.put(static_cast<char>(c ? 1 : 0));
    os.put(static_cast<char>(s.diverged ? 1 : 0));
  }
}

std::vector<SimState> load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  const std::uint32_t count = get_u32(is);
  const std::uint32_t n = get_u32(is);
  if (n > 1024) throw std::runtime_error("checkpoint: implausible joint count");

  std::vector<SimState> states(count);
  for (SimState& s : states) {
    for (int i = 0; i < 3; ++i) s.base_pos[i] = get_f64(is);
    const double w = get_f64(is), x = get_f64(is), y = get_f64(is),
                 z = get_f64(is);
    s.base_quat = Quat(w, x, y, z);
    for (int i = 0; i < 3; ++i) s.base_linvel[i] = get_f64(is);
    for (int i = 0; i < 3; ++i) s.base_angvel[i] = get_f64(is);
    for (auto* vec :
         {&s.joint_pos, &s.joint_vel, &s.joint_torque, &s.last_action}) {
      vec->resize(n);
      for (std::uint32_t j = 0; j < n; ++j) (*vec)[j] = get_f64(is);
    }
    for (double& v : s.foot_air_time) v = get_f64(is);
    for (double& v : s.foot_touchdown_air) v = get_f64(is);
    for (double& v : s.foot_normal_force) v = get_f64(is);
    for (double& v : s.foot_tangent_force) v = get_f64(is);
    s.ground_height = get_f64(is);
    s.episode_time = get_f64(is);
    s.mech_energy = get_f64(is);
    s.tick_power = get_f64(is);
    s.inst_power = get_f64(is);
    s.base_contact_count = static_cast<int>(get_u32(is));
    for (bool& c : s.foot_contact) c = get_u8(is) != 0;
    s.diverged = get_u8(is) != 0;
  }
  return states;
}

}  // namespace ocl
