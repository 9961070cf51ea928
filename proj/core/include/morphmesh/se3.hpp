#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace morphmesh {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = 3.14159265358979323846;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Unit quaternion stored as (w, x, y, z). Construction normalizes, so the
// stored value always has norm 1 to machine precision.
class UnitQuaternion {
 public:
  UnitQuaternion() : wxyz_(1.0, 0.0, 0.0, 0.0) {}

  // Normalizes `wxyz`; throws kNonUnitQuaternion on a zero or non-finite input.
  static UnitQuaternion normalized(const Vec4& wxyz);
  // Accepts `wxyz` only if its norm is within `tol` of 1, then renormalizes.
  static UnitQuaternion checked(const Vec4& wxyz, double tol = 1e-6);
  static UnitQuaternion from_rotation(const Mat3& rotation);
  static UnitQuaternion from_axis_angle(const Vec3& axis, double angle);
  static UnitQuaternion identity() { return {}; }

  double w() const { return wxyz_[0]; }
  double x() const { return wxyz_[1]; }
  double y() const { return wxyz_[2]; }
  double z() const { return wxyz_[3]; }
  const Vec4& coeffs() const { return wxyz_; }

  Mat3 to_rotation() const;

 private:
  explicit UnitQuaternion(const Vec4& unit) : wxyz_(unit) {}
  Vec4 wxyz_;
};

struct Pose {
  Vec3 position = Vec3::Zero();
  UnitQuaternion orientation;

  Mat3 rotation() const { return orientation.to_rotation(); }
};

// Cross-product matrix: skew(v) * u == v.cross(u).
Mat3 skew(const Vec3& v);

// Throws kNonUnitQuaternion if |q| deviates from 1 by more than 1e-6.
Mat3 quat_to_rotation(const Vec4& q);
Mat3 quat_to_rotation(const UnitQuaternion& q);
UnitQuaternion rotation_to_quat(const Mat3& rotation);

// Rate matrix for a world-frame angular velocity: qdot = 0.5 * Omega(w) * q.
Mat4 quat_rate_matrix(const Vec3& omega_world);

// 0.5 * Omega(omega) * q + gain * (1 - |q|^2) * q. The second term pulls the
// integrated quaternion back to the unit sphere.
Vec4 quat_derivative(const Vec4& q, const Vec3& omega_world, double baumgarte_gain);

// Rodrigues exponential of a rotation vector and its inverse.
Mat3 exp_so3(const Vec3& rotation_vector);
Vec3 log_so3(const Mat3& rotation);

// Left-multiplicative update: rotation <- exp(skew(delta)) * rotation.
UnitQuaternion rotate_world(const UnitQuaternion& q, const Vec3& delta);

}  // namespace morphmesh
