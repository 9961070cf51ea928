#include "morphmesh/se3.hpp"

#include <cmath>
#include <string>

#include "morphmesh/errors.hpp"

namespace morphmesh {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonUnitQuaternion: return "NonUnitQuaternion";
    case ErrorCode::kInitFitFailure: return "InitFitFailure";
    case ErrorCode::kSingularActuation: return "SingularActuation";
    case ErrorCode::kSingularMatrix: return "SingularMatrix";
    case ErrorCode::kNoFullRankPattern: return "NoFullRankPattern";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kEvalError: return "EvalError";
    case ErrorCode::kUnknownShape: return "UnknownShape";
    case ErrorCode::kAntipodalNormal: return "AntipodalNormal";
    case ErrorCode::kMaxIterations: return "MaxIterations";
    case ErrorCode::kIntegratorStepFailure: return "IntegratorStepFailure";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

UnitQuaternion UnitQuaternion::normalized(const Vec4& wxyz) {
  const double norm = wxyz.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw Error(ErrorCode::kNonUnitQuaternion, "cannot normalize a zero or non-finite quaternion");
  }
  return UnitQuaternion(wxyz / norm);
}

UnitQuaternion UnitQuaternion::checked(const Vec4& wxyz, double tol) {
  const double norm = wxyz.norm();
  if (!std::isfinite(norm) || std::abs(norm - 1.0) > tol) {
    throw Error(ErrorCode::kNonUnitQuaternion,
                "quaternion norm " + std::to_string(norm) + " is not 1");
  }
  return UnitQuaternion(wxyz / norm);
}

UnitQuaternion UnitQuaternion::from_rotation(const Mat3& r) {
  // Shepperd: branch on the largest diagonal combination for stability.
  Vec4 q;
  const double trace = r.trace();
  if (trace > r(0, 0) && trace > r(1, 1) && trace > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q << 0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s, (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2));
    q << (r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s, (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2));
    q << (r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s, (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1));
    q << (r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s, 0.25 * s;
  }
  if (q[0] < 0.0) q = -q;
  return normalized(q);
}

UnitQuaternion UnitQuaternion::from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double h = 0.5 * angle;
  Vec4 q;
  q << std::cos(h), std::sin(h) * u;
  return normalized(q);
}

Mat3 UnitQuaternion::to_rotation() const {
  const double w = wxyz_[0], x = wxyz_[1], y = wxyz_[2], z = wxyz_[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(),
      v.z(), 0.0, -v.x(),
      -v.y(), v.x(), 0.0;
  return s;
}

Mat3 quat_to_rotation(const Vec4& q) { return UnitQuaternion::checked(q).to_rotation(); }

Mat3 quat_to_rotation(const UnitQuaternion& q) { return q.to_rotation(); }

UnitQuaternion rotation_to_quat(const Mat3& rotation) {
  return UnitQuaternion::from_rotation(rotation);
}

Mat4 quat_rate_matrix(const Vec3& w) {
  // [0; w] (x) q for a world-frame rate (left quaternion product).
  Mat4 m;
  m << 0.0, -w.x(), -w.y(), -w.z(),
      w.x(), 0.0, -w.z(), w.y(),
      w.y(), w.z(), 0.0, -w.x(),
      w.z(), -w.y(), w.x(), 0.0;
  return m;
}

Vec4 quat_derivative(const Vec4& q, const Vec3& omega_world, double baumgarte_gain) {
  return 0.5 * quat_rate_matrix(omega_world) * q + baumgarte_gain * (1.0 - q.squaredNorm()) * q;
}

Mat3 exp_so3(const Vec3& phi) {
  const double angle = phi.norm();
  const Mat3 k = skew(phi);
  if (angle < 1e-8) {
    return Mat3::Identity() + k + 0.5 * k * k;
  }
  return Mat3::Identity() + (std::sin(angle) / angle) * k +
         ((1.0 - std::cos(angle)) / (angle * angle)) * k * k;
}

Vec3 log_so3(const Mat3& r) {
  const Vec4 q = UnitQuaternion::from_rotation(r).coeffs();
  const Vec3 v = q.tail<3>();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(s, q[0]);
  return (angle / s) * v;
}

UnitQuaternion rotate_world(const UnitQuaternion& q, const Vec3& delta) {
  const double angle = delta.norm();
  Vec4 dq;
  if (angle < 1e-12) {
    dq << 1.0, 0.5 * delta;
  } else {
    dq << std::cos(0.5 * angle), std::sin(0.5 * angle) * delta / angle;
  }
  // Hamilton product dq (x) q.
  const Vec4& p = q.coeffs();
  Vec4 out;
  out << dq[0] * p[0] - dq.tail<3>().dot(p.tail<3>()),
      dq[0] * p.tail<3>() + p[0] * dq.tail<3>() + dq.tail<3>().cross(p.tail<3>());
  return UnitQuaternion::normalized(out);
}

}  // namespace morphmesh
