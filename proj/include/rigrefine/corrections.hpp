#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rigrefine/geometry.hpp"
#include "rigrefine/rig.hpp"

namespace rigrefine {

// 6-vector correction layout: (tx, ty, tz) meters, (rx, ry, rz) axis-angle.
Pose decode_correction(const Vec6& v);

// Learnable rigid offset of one sensor's extrinsic.
struct ExtrinsicCorrection {
  Vec6 v = Vec6::Zero();
  bool shared = true;  // one block across scenes

  Pose pose() const { return decode_correction(v); }
};

// Time-conditioned correction of the reference trajectory: Fourier time
// features into a small tanh MLP whose output head starts at exactly zero,
// so a fresh net is the identity correction everywhere.
class TrajectoryCorrectionNet {
 public:
  struct Cache {
    double t = 0.0;
    Eigen::VectorXd input;   // Fourier features
    Eigen::VectorXd h1, h2;  // tanh activations
    Vec6 out = Vec6::Zero();
  };

  TrajectoryCorrectionNet() = default;
  TrajectoryCorrectionNet(double t_min, double t_max, std::uint64_t seed,
                          int frequency_pairs = 6, int hidden = 64);

  double t_min() const { return t_min_; }
  double t_max() const { return t_max_; }
  int frequency_pairs() const { return frequency_pairs_; }
  int hidden() const { return hidden_; }

  // Normalized time in [-1, 1]; throws TimeOutOfRangeError outside the span.
  double normalize_time(double t) const;

  Vec6 forward(double t, Cache* cache = nullptr) const;
  Pose correction(double t) const { return decode_correction(forward(t)); }

  // Accumulates d(loss)/d(params) into grad (same layout as params()) given
  // d(loss)/d(output 6-vector).
  void backward(const Cache& cache, const Vec6& d_out, std::vector<double>& grad) const;

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }

 private:
  double t_min_ = 0.0, t_max_ = 1.0;
  int frequency_pairs_ = 6;
  int hidden_ = 64;
  int input_dim_ = 12;
  std::vector<double> params_;
  // Flat layout offsets.
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0;

  void encode(double t, Eigen::VectorXd& features) const;
};

inline Pose trajectory_correction(const TrajectoryCorrectionNet& net, double t) {
  return net.correction(t);
}

// All learnable pose corrections of one optimization run: a shared per-sensor
// extrinsic block (reference pinned to identity) and one trajectory net per
// scene.
class CorrectionSet {
 public:
  CorrectionSet() = default;
  explicit CorrectionSet(const RigCalibration& rig);

  const std::string& reference() const { return reference_; }

  bool is_reference(const std::string& sensor) const { return sensor == reference_; }
  const ExtrinsicCorrection& extrinsic(const std::string& sensor) const;
  ExtrinsicCorrection& extrinsic_mutable(const std::string& sensor);
  Pose extrinsic_pose(const std::string& sensor) const;
  const std::map<std::string, ExtrinsicCorrection>& extrinsics() const { return ext_; }

  void set_trajectory_net(const std::string& scene, TrajectoryCorrectionNet net);
  bool has_trajectory_net(const std::string& scene) const;
  const TrajectoryCorrectionNet& trajectory_net(const std::string& scene) const;
  TrajectoryCorrectionNet& trajectory_net_mutable(const std::string& scene);
  const std::map<std::string, TrajectoryCorrectionNet>& trajectory_nets() const {
    return nets_;
  }

  // Identity when the scene has no net (corrections disabled).
  Pose trajectory_correction_pose(const std::string& scene, double t) const;

 private:
  std::string reference_;
  std::map<std::string, ExtrinsicCorrection> ext_;  // non-reference sensors only
  std::map<std::string, TrajectoryCorrectionNet> nets_;
};

// Forward state of the corrected pose chain for one (scene, sensor, t),
// kept so the backward pass can run without re-deriving intermediates.
struct PoseChainForward {
  std::string scene, sensor;
  double t = 0.0;
  bool is_reference = false;
  bool has_traj_net = false;

  Quat q_ref{1, 0, 0, 0};
  Vec3 t_ref = Vec3::Zero();
  TrajectoryCorrectionNet::Cache mlp;
  Vec6 traj_vec = Vec6::Zero();
  Quat q_tc{1, 0, 0, 0};
  Vec3 t_tc = Vec3::Zero();
  Quat q_x{1, 0, 0, 0};
  Vec3 t_x = Vec3::Zero();
  Vec6 ext_vec = Vec6::Zero();
  Quat q_ec{1, 0, 0, 0};
  Vec3 t_ec = Vec3::Zero();

  Quat q1{1, 0, 0, 0}, q2{1, 0, 0, 0}, q3{1, 0, 0, 0};
  Vec3 t1 = Vec3::Zero(), t2 = Vec3::Zero(), t3 = Vec3::Zero();

  Pose pose() const { return {q3, t3}; }
};

PoseChainForward corrected_pose_forward(const CorrectionSet& corr, const std::string& scene,
                                        const RigCalibration& calib, const Trajectory& traj,
                                        const std::string& sensor, double t);

// Corrected world pose of a sensor. With identity corrections this equals
// sensor_pose bit-exactly.
Pose corrected_sensor_pose(const CorrectionSet& corr, const std::string& scene,
                           const RigCalibration& calib, const Trajectory& traj,
                           const std::string& sensor, double t);

// Single-scene convenience overload (requires at most one trajectory net).
Pose corrected_sensor_pose(const CorrectionSet& corr, const RigCalibration& calib,
                           const Trajectory& traj, const std::string& sensor, double t);

// Gradient of a scalar loss with respect to a pose, with the rotation part in
// free quaternion coordinates (w, x, y, z).
struct PoseGrad {
  Vec4 rotation = Vec4::Zero();
  Vec3 translation = Vec3::Zero();
};

// Per-parameter gradients for a CorrectionSet. Reference-sensor entries stay
// identically zero.
struct CorrectionGradients {
  std::map<std::string, Vec6> extrinsic;
  std::map<std::string, std::vector<double>> trajectory;

  void init_like(const CorrectionSet& corr);
  void add(const CorrectionGradients& other);
  void scale(double s);
};

// Reverse-mode chain from d(loss)/d(corrected pose) to all correction
// parameters touched by this (scene, sensor, t). Accumulates into out.
void correction_gradients(const CorrectionSet& corr, const PoseChainForward& ctx,
                          const PoseGrad& upstream, CorrectionGradients& out);

// Mean of per-scene gradient blocks over the same shared parameters.
Eigen::VectorXd aggregate_shared_gradients(const std::vector<Eigen::VectorXd>& blocks);

}  // namespace rigrefine
