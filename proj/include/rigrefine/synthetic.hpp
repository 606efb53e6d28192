#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rigrefine/dataset.hpp"

namespace rigrefine {

struct WorldSpec {
  double region_half_extent_m = 24.0;  // lateral scatter half width
  double path_length_m = 20.0;         // forward extent covered by primitives
  int boxes = 14;
  int cylinders = 6;
  int spheres = 5;
  double min_size_m = 0.8;
  double max_size_m = 3.5;
  int landmarks = 600;
  double texture_frequency = 1.1;  // base spatial frequency of the albedo patterns
};

// Procedural static world with analytic ray intersections. Surface color is a
// smooth band-limited function of the world position, so every view of a
// point agrees and photometric gradients exist everywhere.
class SyntheticWorld {
 public:
  enum class PrimitiveKind { Ground, Box, Cylinder, Sphere };

  struct Primitive {
    PrimitiveKind kind = PrimitiveKind::Box;
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Ones();  // box half sizes; cylinder (radius, radius, half height)
    double yaw = 0.0;                  // box rotation about z
    double radius = 1.0;               // sphere / cylinder
    // Albedo model: base + sum of sinusoids over projected world position.
    Vec3 base_color = Vec3(0.5, 0.5, 0.5);
    Vec3 pattern_dir[3];
    Vec3 pattern_amp[3];
    double pattern_freq[3] = {1.0, 1.0, 1.0};
    double pattern_phase[3] = {0.0, 0.0, 0.0};
  };

  struct Hit {
    double t = 0.0;
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
    Vec3 color = Vec3::Zero();  // shaded
    int primitive = -1;
  };

  static SyntheticWorld generate(const WorldSpec& spec, std::uint64_t seed);

  std::optional<Hit> raycast(const Vec3& origin, const Vec3& dir, double t_min,
                             double t_max) const;
  Vec3 sky_color() const { return sky_; }
  const std::vector<Primitive>& primitives() const { return primitives_; }
  const std::vector<Vec3>& landmarks() const { return landmarks_; }

 private:
  std::vector<Primitive> primitives_;
  std::vector<Vec3> landmarks_;
  Vec3 sky_ = Vec3(0.62, 0.72, 0.88);
  Vec3 sun_dir_ = Vec3(0.4, 0.25, 0.88).normalized();

  Vec3 shade(const Primitive& prim, const Vec3& point, const Vec3& normal) const;
};

struct TrajectorySpec {
  double duration_s = 10.0;
  double speed_mps = 5.0;
  double knot_rate_hz = 10.0;
  double lateral_amplitude_m = 3.0;
  double lateral_wavelength_m = 35.0;
  double height_m = 1.6;
  double roll_pitch_amplitude_deg = 1.2;
  double yaw_noise_deg = 0.0;
};

// Smooth curving path at roughly constant speed; yaw follows the tangent,
// with mild sinusoidal roll and pitch.
std::vector<TrajectoryKnot> generate_trajectory(const TrajectorySpec& spec, std::uint64_t seed);

struct RigSpec {
  int image_width = 256;
  int image_height = 256;
  double hfov_deg = 90.0;
  double camera_height_m = 0.0;  // relative to the reference sensor
};

// Four cameras (front, left, right, rear) around a roof lidar that serves as
// the reference sensor.
RigCalibration default_rig(const RigSpec& spec = {});

struct CaptureSpec {
  double camera_rate_hz = 5.0;
  double lidar_rate_hz = 10.0;
  int lidar_rings = 16;
  int lidar_azimuth_steps = 720;
  double lidar_elevation_min_deg = -18.0;
  double lidar_elevation_max_deg = 12.0;
  double lidar_min_range_m = 0.6;
  double lidar_max_range_m = 150.0;
  double camera_near_m = 0.2;
  double camera_far_m = 300.0;
  int max_track_length = 12;
  int threads = 1;
};

// Renders every frame from the exact sensor poses and builds keypoint tracks
// from the world landmarks (exact projections, occlusion tested against the
// world). The result carries SyntheticGt provenance.
SceneDataset capture(const SyntheticWorld& world, const RigCalibration& rig,
                     const std::vector<TrajectoryKnot>& knots, const CaptureSpec& spec,
                     const std::string& scene_id = "scene");

}  // namespace rigrefine
