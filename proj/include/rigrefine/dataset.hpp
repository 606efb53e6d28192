#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rigrefine/geometry.hpp"
#include "rigrefine/rig.hpp"

namespace rigrefine {

// Row-major H x W x 3 image, values in [0, 1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> rgb;

  static Image zeros(int w, int h) {
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.assign(static_cast<std::size_t>(w) * h * 3, 0.0f);
    return img;
  }
  float& at(int y, int x, int c) {
    return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c];
  }
  float at(int y, int x, int c) const {
    return rgb[3 * (static_cast<std::size_t>(y) * width + x) + c];
  }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

// Per-pixel dynamic flag, true = dynamic (excluded from supervision).
struct Mask {
  int width = 0, height = 0;
  std::vector<std::uint8_t> dynamic;

  static Mask clear(int w, int h) {
    Mask m;
    m.width = w;
    m.height = h;
    m.dynamic.assign(static_cast<std::size_t>(w) * h, 0);
    return m;
  }
  bool at(int y, int x) const { return dynamic[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v) {
    dynamic[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
  }
};

// Sensor-frame points; stored as float32 to match the on-disk format exactly.
struct LidarScan {
  std::vector<Eigen::Vector3f> points;
};

struct SensorFrame {
  std::string sensor;
  double timestamp = 0.0;
  SensorKind kind = SensorKind::Camera;
  Image image;
  std::optional<Mask> mask;
  LidarScan scan;
};

struct KeypointObservation {
  std::string sensor;
  double t = 0.0;
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
};

// One tracked scene point seen in two or more images.
struct KeypointTrack {
  int id = 0;
  std::vector<KeypointObservation> obs;
};

// Offsets injected by perturb(), right-composed in the local frame:
// noisy = truth ∘ offset. Composing the inverse recovers the truth.
struct NoiseRecord {
  std::map<std::string, Pose> extrinsic_offsets;
  std::vector<Pose> knot_offsets;
};

struct GroundTruth {
  RigCalibration rig;
  std::vector<TrajectoryKnot> knots;
  std::string reference;
  std::vector<KeypointTrack> tracks;
  std::optional<NoiseRecord> noise;

  Trajectory trajectory() const { return Trajectory(knots, reference); }
};

enum class Provenance { SyntheticGt, Perturbed, External };

struct SceneDataset {
  std::string scene_id;
  RigCalibration rig;
  std::vector<TrajectoryKnot> knots;
  std::vector<SensorFrame> frames;  // sorted by (sensor, timestamp)
  Provenance provenance = Provenance::External;
  std::optional<GroundTruth> gt;

  Trajectory trajectory() const { return Trajectory(knots, rig.reference); }
  void sort_frames();
  // Frame timestamps inside the trajectory span, known sensors, value ranges.
  void validate() const;

  std::vector<const SensorFrame*> frames_of(const std::string& sensor) const;
};

struct NoiseSpec {
  struct ExtrinsicNoise {
    double translation_m = 0.0;  // bound on the injected translation magnitude
    double rotation_deg = 0.0;   // bound on the injected rotation angle
    // Per-axis uniform sampling instead of isotropic direction + magnitude;
    // bounds then apply per component.
    bool per_axis = false;
  };
  struct TrajectoryNoise {
    double amplitude_m = 0.0;
    double amplitude_deg = 0.0;
    double spatial_frequency = 0.02;  // cycles per meter of arc length
    double jitter_translation_m = 0.0;
    double jitter_rotation_deg = 0.0;
  };

  ExtrinsicNoise extrinsic;
  TrajectoryNoise trajectory;
  std::uint64_t seed = 0;

  // Stress levels of 0.5 m translation and 5 degree rotation per sensor.
  static NoiseSpec soac_preset(std::uint64_t seed = 0);
};

// Returns a perturbed copy (provenance = Perturbed) plus the injected offsets.
// The input must carry ground truth provenance.
SceneDataset perturb(const SceneDataset& dataset, const NoiseSpec& noise);

// Cuts along cumulative reference-translation arc length. Knots may be shared
// at the cut boundaries; every frame lands in exactly one subsequence.
std::vector<SceneDataset> split_subsequences(const SceneDataset& dataset, double length_m);

// World-frame oriented box, used for dynamic-object masking.
struct DynamicBox {
  Pose pose;  // world <- box
  Vec3 half_extents = Vec3::Zero();
};

using BoxProvider = std::function<std::vector<DynamicBox>(double timestamp)>;

// Masks camera pixels whose rays hit a margin-scaled box and drops lidar
// points inside a scaled box. Uses the dataset's own poses.
SceneDataset apply_masks(const SceneDataset& dataset, const BoxProvider& boxes_at,
                         double margin = 1.1);

}  // namespace rigrefine
