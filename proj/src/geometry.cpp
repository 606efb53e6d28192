#include "rigrefine/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kSmallAngle = 1e-8;
}  // namespace

double rotation_angle(const Quat& q) {
  const double vn = q.vec().norm();
  return 2.0 * std::atan2(vn, std::abs(q.w()));
}

double angular_distance(const Quat& a, const Quat& b) {
  return rotation_angle(a.conjugate() * b);
}

Quat rodrigues_exp(const AxisAngle& omega) {
  const double theta = omega.norm();
  if (theta >= kPi) {
    throw AngleOutOfRangeError("rotation magnitude " + std::to_string(theta) +
                               " rad is outside the correction range [0, pi)");
  }
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    const double w = 1.0 - t2 / 8.0;
    const Vec3 v = (0.5 - t2 / 48.0) * omega;
    return {w, v.x(), v.y(), v.z()};
  }
  const double half = 0.5 * theta;
  const double s = std::sin(half) / theta;
  const Vec3 v = s * omega;
  return {std::cos(half), v.x(), v.y(), v.z()};
}

AxisAngle rotation_log(const Quat& q_in) {
  Quat q = q_in;
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double vn = q.vec().norm();
  const double angle = 2.0 * std::atan2(vn, q.w());
  if (vn < 1e-12) return 2.0 * q.vec();
  return (angle / vn) * q.vec();
}

Quat slerp(const Quat& q0, const Quat& q1_in, double u) {
  Quat q1 = q1_in;
  double d = q0.dot(q1);
  if (d < 0.0) {
    q1.coeffs() = -q1.coeffs();
    d = -d;
  }
  if (d > 1.0 - 1e-6) {
    Quat out;
    out.coeffs() = (1.0 - u) * q0.coeffs() + u * q1.coeffs();
    out.normalize();
    return out;
  }
  const double theta = std::acos(std::min(d, 1.0));
  const double sin_theta = std::sin(theta);
  const double a = std::sin((1.0 - u) * theta) / sin_theta;
  const double b = std::sin(u * theta) / sin_theta;
  Quat out;
  out.coeffs() = a * q0.coeffs() + b * q1.coeffs();
  out.normalize();
  return out;
}

Trajectory::Trajectory(std::vector<TrajectoryKnot> knots, std::string reference_sensor)
    : knots_(std::move(knots)), reference_(std::move(reference_sensor)) {
  if (knots_.size() < 2) {
    throw Error("trajectory needs at least 2 knots, got " + std::to_string(knots_.size()));
  }
  for (std::size_t i = 1; i < knots_.size(); ++i) {
    if (!(knots_[i - 1].t < knots_[i].t)) {
      throw Error("trajectory timestamps must be strictly increasing");
    }
  }
}

Pose Trajectory::interpolate(double t) const {
  if (t < t_min() || t > t_max()) {
    throw TimeOutOfRangeError("time " + std::to_string(t) + " outside trajectory span [" +
                              std::to_string(t_min()) + ", " + std::to_string(t_max()) + "]");
  }
  const auto it = std::lower_bound(
      knots_.begin(), knots_.end(), t,
      [](const TrajectoryKnot& k, double value) { return k.t < value; });
  // Exact knot hits return the stored pose untouched.
  if (it != knots_.end() && it->t == t) return it->pose;
  const TrajectoryKnot& hi = *it;
  const TrajectoryKnot& lo = *(it - 1);
  const double u = (t - lo.t) / (hi.t - lo.t);
  Pose out;
  out.translation = (1.0 - u) * lo.pose.translation + u * hi.pose.translation;
  out.rotation = slerp(lo.pose.rotation, hi.pose.rotation, u);
  return out;
}

Eigen::Matrix4d quat_left_matrix(const Quat& a) {
  Eigen::Matrix4d m;
  m << a.w(), -a.x(), -a.y(), -a.z(),
       a.x(),  a.w(), -a.z(),  a.y(),
       a.y(),  a.z(),  a.w(), -a.x(),
       a.z(), -a.y(),  a.x(),  a.w();
  return m;
}

Eigen::Matrix4d quat_right_matrix(const Quat& b) {
  Eigen::Matrix4d m;
  m << b.w(), -b.x(), -b.y(), -b.z(),
       b.x(),  b.w(),  b.z(), -b.y(),
       b.y(), -b.z(),  b.w(),  b.x(),
       b.z(),  b.y(), -b.x(),  b.w();
  return m;
}

// Eigen evaluates q * v as w = v + 2 qw (qv × v) + 2 qv × (qv × v). The
// Jacobian of that exact expression is
//   dw/dqw = 2 (qv × v)
//   dw/dqv = -2 qw [v]x + 2 qv v^T + 2 (qv·v) I - 4 v qv^T
// and this returns its transpose applied to dw.
Vec4 rotate_backward_rotation(const Quat& q, const Vec3& v, const Vec3& dw) {
  const Vec3 qv = q.vec();
  const double qw = q.w();
  Vec4 out;
  out[0] = 2.0 * qv.cross(v).dot(dw);
  out.tail<3>() = 2.0 * qw * v.cross(dw) + 2.0 * v * qv.dot(dw) +
                  2.0 * qv.dot(v) * dw - 4.0 * qv * v.dot(dw);
  return out;
}

Vec3 rotate_backward_vector(const Quat& q, const Vec3& dw) {
  return q.conjugate() * dw;
}

Eigen::Matrix<double, 4, 3> rodrigues_jacobian(const AxisAngle& omega) {
  const double theta = omega.norm();
  Eigen::Matrix<double, 4, 3> j;
  double s;        // sin(theta/2) / theta
  double sp_over;  // s'(theta) / theta
  if (theta < 1e-4) {
    const double t2 = theta * theta;
    s = 0.5 - t2 / 48.0;
    sp_over = -1.0 / 24.0 + t2 / 960.0;
  } else {
    const double half = 0.5 * theta;
    s = std::sin(half) / theta;
    sp_over = (half * std::cos(half) - std::sin(half)) / (theta * theta * theta);
  }
  const Vec3 qv = s * omega;
  j.row(0) = -0.5 * qv.transpose();
  j.bottomRows<3>() = s * Eigen::Matrix3d::Identity() + sp_over * omega * omega.transpose();
  return j;
}

}  // namespace rigrefine
