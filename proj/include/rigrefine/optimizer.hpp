#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rigrefine/corrections.hpp"
#include "rigrefine/dataset.hpp"
#include "rigrefine/scene_field.hpp"

namespace rigrefine {

struct TrainConfig {
  int epochs = 15;
  int rays_per_batch = 4096;
  double lr_field = 1e-2;
  double lr_extrinsic = 1e-3;
  double lr_trajectory = 5e-4;
  double lr_final_fraction = 0.1;  // cosine decay floor
  double photometric_weight = 1.0;
  double depth_weight = 0.1;
  int downscale = 4;  // one of {1, 2, 4, 6, 8}
  int n_samples = 96;
  std::uint64_t seed = 0;
  bool deterministic = true;
  int threads = 1;
  double near_m = 0.3;
  double far_m = 80.0;
  // Lidar rays stop shortly after their measured return; the sample budget
  // then concentrates around the supervised depth.
  double lidar_far_margin_m = 5.0;
  double camera_ray_fraction = 0.75;
  int warmup_epochs = 1;  // pose-correction learning rates start at zero
  double decay_lambda_max = 1e-2;
  int decay_coarse_epochs = -1;  // -1 derives ceil(epochs / 3)
  double decay_density_fraction = 1.0;  // share of the decay applied to density
  std::vector<int> level_resolutions = {32, 64, 128};
  double bounds_margin_m = 2.0;
  bool log_progress = true;
  // Stage-1 ablation switch; stage 2 always trains the trajectory net.
  bool enable_trajectory_correction = true;
  // Diagnostic hook, called after every optimization step with the first
  // scene's field and the live correction set.
  std::function<void(int step, const VoxelField&, const CorrectionSet&)> on_step;

  void validate() const;
  int coarse_epochs() const;
};

struct RayTarget {
  bool is_camera = true;
  Eigen::Vector3f rgb = Eigen::Vector3f::Zero();
  float depth = 0.0f;
};

struct RayBundle {
  std::vector<Ray> rays;
  std::vector<RayTarget> targets;
  std::vector<Vec3> sensor_dirs;  // unit directions in the sensor frame
};

// Back-projects one frame into world rays: one ray per unmasked pixel of the
// box-downscaled image for cameras, one ray per point for lidar.
RayBundle build_rays(const SensorFrame& frame, const Pose& pose,
                     const std::optional<CameraIntrinsics>& intrinsics, int downscale,
                     double near, double far, int camera_index);

struct LossWeights {
  double photometric = 1.0;
  double depth = 0.1;
};

struct LossResult {
  double total = 0.0;
  double photometric = 0.0;
  double depth = 0.0;
  std::vector<RenderUpstream> upstream;
  int camera_rays = 0;
  int valid_depth_rays = 0;
};

// Photometric L2 over camera rays plus L1 depth over lidar rays with valid
// rendered depth; returns the matching per-ray upstream gradients.
LossResult compute_loss(const std::vector<RayTarget>& targets,
                        const std::vector<RenderResult>& rendered, const LossWeights& weights);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
};

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamParams& hypers = {}, int threads = 1);

struct EpochLog {
  std::string scene;
  int epoch = 0;
  double photometric = 0.0;
  double depth = 0.0;
  double ext_corr_norm_m = 0.0;
  double ext_corr_norm_deg = 0.0;
};

struct TrainSummary {
  std::vector<EpochLog> epochs;
  int total_steps = 0;
  double extrinsic_grad_norm = 0.0;  // cumulative over the run; 0 when frozen
};

struct CalibrationResult {
  CorrectionSet corrections;       // shared extrinsic block + per-scene nets
  std::vector<VoxelField> fields;  // one per scene, scene order
  TrainSummary summary;
};

// Stage 1: every scene owns a field and a trajectory net; the extrinsic
// correction block is shared, with per-step gradient aggregation across
// scenes before a single update.
CalibrationResult run_calibration_stage(const std::vector<const SceneDataset*>& scenes,
                                        const RigCalibration& calib, const TrainConfig& cfg);

struct TrajectoryResult {
  TrajectoryCorrectionNet net;
  VoxelField field;
  TrainSummary summary;
};

// Stage 2: the extrinsic correction is held constant; only the trajectory
// correction and the scene field receive updates.
TrajectoryResult run_trajectory_stage(const SceneDataset& scene, const RigCalibration& calib,
                                      const std::map<std::string, ExtrinsicCorrection>& frozen_ext,
                                      const TrainConfig& cfg);

// Trains a fresh field with every pose frozen (no corrections); used by the
// evaluation protocols. frame_filter selects training frames per sensor by
// their time-ordered index; null keeps everything.
struct FrozenTrainOptions {
  bool camera_only = false;
  std::function<bool(const std::string& sensor, int index)> frame_filter;
};

VoxelField train_field_frozen(const SceneDataset& scene, const RigCalibration& rig,
                              const std::vector<TrajectoryKnot>& knots, const TrainConfig& cfg,
                              const FrozenTrainOptions& options = {});

// Scene bounds for field construction: world-frame lidar extent (or the
// trajectory envelope when no lidar is present) padded by the margin.
Eigen::AlignedBox3d compute_scene_bounds(const SceneDataset& scene, const RigCalibration& rig,
                                         const std::vector<TrajectoryKnot>& knots,
                                         const TrainConfig& cfg);

}  // namespace rigrefine
