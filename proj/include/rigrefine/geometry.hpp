#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

#include "rigrefine/errors.hpp"

namespace rigrefine {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Quat = Eigen::Quaterniond;

// Rigid transform mapping points from the named frame into the world frame
// (or, for extrinsics, from the sensor frame into the reference frame).
struct Pose {
  Quat rotation{1.0, 0.0, 0.0, 0.0};  // w, x, y, z
  Vec3 translation{0.0, 0.0, 0.0};

  static Pose identity() { return {}; }

  // this ∘ other: apply `other` first, then `this`.
  Pose compose(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
  Pose operator*(const Pose& other) const { return compose(other); }

  Pose inverse() const {
    const Quat inv = rotation.conjugate();
    return {inv, inv * (-translation)};
  }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 rotate(const Vec3& v) const { return rotation * v; }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Pose normalized() const { return {rotation.normalized(), translation}; }
};

// Rotation angle of a unit quaternion, in [0, pi].
double rotation_angle(const Quat& q);

// Angle of the relative rotation between two unit quaternions.
double angular_distance(const Quat& a, const Quat& b);

// Axis-angle rotation vector: angle = |v|, axis = v / |v|.
using AxisAngle = Vec3;

// Exponential map via Rodrigues' formula. Magnitudes below 1e-8 use the
// second-order series. Throws AngleOutOfRangeError for |omega| >= pi.
Quat rodrigues_exp(const AxisAngle& omega);

// Log map; inverse of rodrigues_exp on (-pi, pi).
AxisAngle rotation_log(const Quat& q);

// Geodesic interpolation with shortest-path sign correction; falls back to
// normalized lerp when the quaternions are nearly aligned.
Quat slerp(const Quat& q0, const Quat& q1, double u);

struct TrajectoryKnot {
  double t = 0.0;
  Pose pose;
};

// Time-indexed poses of the reference sensor. Interpolation is linear in
// translation and slerp in rotation; querying outside the knot span throws.
class Trajectory {
 public:
  Trajectory(std::vector<TrajectoryKnot> knots, std::string reference_sensor);

  const std::vector<TrajectoryKnot>& knots() const { return knots_; }
  const std::string& reference_sensor() const { return reference_; }
  double t_min() const { return knots_.front().t; }
  double t_max() const { return knots_.back().t; }
  bool contains(double t) const { return t >= t_min() && t <= t_max(); }

  Pose interpolate(double t) const;

 private:
  std::vector<TrajectoryKnot> knots_;
  std::string reference_;
};

inline Pose interpolate_pose(const Trajectory& traj, double t) {
  return traj.interpolate(t);
}

// ---------------------------------------------------------------------------
// Quaternion calculus used by the reverse-mode pose chain. Quaternions are
// handled as free 4-vectors in (w, x, y, z) order; all true parameters enter
// through rodrigues_exp, whose Jacobian columns are tangent to the unit
// sphere, so the ambient-space formulas below chain exactly.
// ---------------------------------------------------------------------------

inline Vec4 quat_coeffs(const Quat& q) { return {q.w(), q.x(), q.y(), q.z()}; }
inline Quat quat_from_coeffs(const Vec4& v) { return {v[0], v[1], v[2], v[3]}; }

// L(a) and R(b) with (a ⊗ b) = L(a) b = R(b) a.
Eigen::Matrix4d quat_left_matrix(const Quat& a);
Eigen::Matrix4d quat_right_matrix(const Quat& b);

// Backward of w = q * v (vector rotation): returns d/dq as a 4-vector and
// d/dv = R(q)^T dw.
Vec4 rotate_backward_rotation(const Quat& q, const Vec3& v, const Vec3& dw);
Vec3 rotate_backward_vector(const Quat& q, const Vec3& dw);

// 4x3 Jacobian of rodrigues_exp at omega (series form below 1e-4 rad).
Eigen::Matrix<double, 4, 3> rodrigues_jacobian(const AxisAngle& omega);

}  // namespace rigrefine
