#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>

namespace ocl {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using Iso3 = Eigen::Isometry3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

inline double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

inline double sq(double v) { return v * v; }

/// Unit vector in the z=0 plane at angle theta from +x.
inline Vec3 planar_dir(double theta) {
  return Vec3(std::cos(theta), std::sin(theta), 0.0);
}

inline Iso3 rot_z(double theta) {
  Iso3 t = Iso3::Identity();
  t.linear() = Eigen::AngleAxisd(theta, Vec3::UnitZ()).toRotationMatrix();
  return t;
}

inline Iso3 rot_x(double alpha) {
  Iso3 t = Iso3::Identity();
  t.linear() = Eigen::AngleAxisd(alpha, Vec3::UnitX()).toRotationMatrix();
  return t;
}

inline Iso3 trans_x(double a) {
  Iso3 t = Iso3::Identity();
  t.translation() = Vec3(a, 0.0, 0.0);
  return t;
}

/// Denavit-Hartenberg style joint-then-link transform Rz(theta)*Tx(a)*Rx(alpha).
inline Iso3 dh_link(double theta, double a, double alpha) {
  const double ct = std::cos(theta), st = std::sin(theta);
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  Iso3 t = Iso3::Identity();
  Mat3 r;
  r << ct, -st * ca, st * sa,
       st,  ct * ca, -ct * sa,
       0.0, sa,      ca;
  t.linear() = r;
  t.translation() = Vec3(a * ct, a * st, 0.0);
  return t;
}

/// Norm of the 6-vector [translation; axis*angle] measuring distance from identity.
inline double pose_residual(const Iso3& t) {
  Eigen::AngleAxisd aa(t.linear());
  return std::sqrt(t.translation().squaredNorm() + sq(aa.angle()));
}

/// Roll/pitch/yaw (x-y-z intrinsic) from a quaternion, the usual aerospace way.
inline Vec3 quat_to_rpy(const Quat& q) {
  const double qw = q.w(), qx = q.x(), qy = q.y(), qz = q.z();
  Vec3 rpy;
  const double sinr = 2.0 * (qw * qx + qy * qz);
  const double cosr = 1.0 - 2.0 * (qx * qx + qy * qy);
  rpy[0] = std::atan2(sinr, cosr);
  const double sinp = 2.0 * (qw * qy - qz * qx);
  rpy[1] = std::abs(sinp) >= 1.0 ? std::copysign(kPi / 2.0, sinp) : std::asin(sinp);
  const double siny = 2.0 * (qw * qz + qx * qy);
  const double cosy = 1.0 - 2.0 * (qy * qy + qz * qz);
  rpy[2] = std::atan2(siny, cosy);
  return rpy;
}

inline Quat rpy_to_quat(double roll, double pitch, double yaw) {
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
              Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
              Eigen::AngleAxisd(roll, Vec3::UnitX()));
}

}  // namespace ocl
