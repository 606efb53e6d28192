#include "rigrefine/rig.hpp"

#include <set>

namespace rigrefine {

const SensorInfo* RigCalibration::find(const std::string& id) const {
  for (const auto& s : sensors) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

const SensorInfo& RigCalibration::sensor(const std::string& id) const {
  const SensorInfo* s = find(id);
  if (!s) throw UnknownSensorError("unknown sensor id '" + id + "'");
  return *s;
}

std::vector<std::string> RigCalibration::sensor_ids() const {
  std::vector<std::string> ids;
  ids.reserve(sensors.size());
  for (const auto& s : sensors) ids.push_back(s.id);
  return ids;
}

std::vector<std::string> RigCalibration::camera_ids() const {
  std::vector<std::string> ids;
  for (const auto& s : sensors) {
    if (s.kind == SensorKind::Camera) ids.push_back(s.id);
  }
  return ids;
}

void RigCalibration::validate() const {
  std::set<std::string> seen;
  for (const auto& s : sensors) {
    if (!seen.insert(s.id).second) throw Error("duplicate sensor id '" + s.id + "'");
    if (s.kind == SensorKind::Camera && !s.intrinsics) {
      throw MissingIntrinsicsError("camera '" + s.id + "' has no intrinsics");
    }
  }
  const SensorInfo& ref = sensor(reference);
  if (rotation_angle(ref.extrinsic.rotation) > 1e-12 ||
      ref.extrinsic.translation.norm() > 1e-12) {
    throw Error("reference sensor '" + reference + "' extrinsic must be identity");
  }
}

Pose sensor_pose(const RigCalibration& calib, const Trajectory& traj,
                 const std::string& sensor, double t) {
  const SensorInfo& info = calib.sensor(sensor);
  const Pose ref_pose = traj.interpolate(t);
  if (sensor == calib.reference) return ref_pose;
  return ref_pose * info.extrinsic;
}

}  // namespace rigrefine
