#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rigrefine/geometry.hpp"

namespace rigrefine {

enum class SensorKind { Camera, Lidar };

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;
};

struct SensorInfo {
  std::string id;
  SensorKind kind = SensorKind::Camera;
  Pose extrinsic;  // reference <- sensor
  std::optional<CameraIntrinsics> intrinsics;
};

// Fixed sensor layout of one capture rig. The reference sensor carries the
// vehicle pose; its extrinsic is pinned to identity.
struct RigCalibration {
  std::vector<SensorInfo> sensors;
  std::string reference;

  const SensorInfo& sensor(const std::string& id) const;
  const SensorInfo* find(const std::string& id) const;
  bool has(const std::string& id) const { return find(id) != nullptr; }
  std::vector<std::string> sensor_ids() const;
  std::vector<std::string> camera_ids() const;

  // Checks id uniqueness, reference membership and the identity-reference
  // invariant; throws Error on violation.
  void validate() const;
};

// World pose of a sensor at time t: interpolated reference pose composed with
// the sensor's extrinsic. The reference sensor returns the interpolated pose
// itself.
Pose sensor_pose(const RigCalibration& calib, const Trajectory& traj,
                 const std::string& sensor, double t);

}  // namespace rigrefine
