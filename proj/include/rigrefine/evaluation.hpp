#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rigrefine/dataset.hpp"
#include "rigrefine/mesh.hpp"
#include "rigrefine/optimizer.hpp"

namespace rigrefine {

// One candidate assignment of poses to a dataset: a rig plus a reference
// trajectory. The image/lidar content always stays with the dataset.
struct PoseSet {
  RigCalibration rig;
  std::vector<TrajectoryKnot> knots;

  Trajectory trajectory() const { return Trajectory(knots, rig.reference); }
};

// ---------------------------------------------------------------------------
// Triangulation metrics
// ---------------------------------------------------------------------------

struct TriangulationStats {
  double mean_reproj_px = 0.0;
  double mean_track_length = 0.0;
  int surviving_tracks = 0;
  int discarded_tracks = 0;
  int degenerate_tracks = 0;
};

// Linear DLT triangulation of every track against fixed poses, with
// iterative worst-observation rejection above outlier_px. Tracks reduced
// below two observations are discarded; parallel-ray tracks count as
// degenerate and are skipped.
TriangulationStats triangulate_tracks(const std::vector<KeypointTrack>& tracks,
                                      const PoseSet& poses, double outlier_px = 4.0);

// ---------------------------------------------------------------------------
// Novel view synthesis metrics
// ---------------------------------------------------------------------------

struct ImagePairMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
};

inline constexpr double kPsnrCap = 99.0;

// PSNR capped at 99 dB; SSIM with an 11x11 Gaussian window (sigma 1.5,
// K1 = 0.01, K2 = 0.03, dynamic range 1), averaged over channels and fully
// interior window positions.
ImagePairMetrics nvs_metrics(const Image& rendered, const Image& reference);

struct NvsProtocolConfig {
  TrainConfig train;       // epochs defaults to 10 for the retrain
  int eval_downscale = 1;  // rendering scale of the held-out views
  int eval_n_samples = 96;

  NvsProtocolConfig() { train.epochs = 10; }
};

struct NvsProtocolResult {
  std::map<std::string, ImagePairMetrics> per_camera;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  int evaluated_frames = 0;
};

// Retrains a fresh field with frozen candidate poses on every second camera
// frame and scores the held-out frames.
NvsProtocolResult nvs_protocol(const SceneDataset& dataset, const PoseSet& poses,
                               const NvsProtocolConfig& cfg);

// Renders a full camera view of a trained field.
Image render_view(const VoxelField& field, const Pose& pose, const CameraIntrinsics& intrinsics,
                  int downscale, int n_samples, int camera_index, std::uint64_t seed,
                  int threads, double near = 0.2, double far = 120.0);

// ---------------------------------------------------------------------------
// Geometric consistency
// ---------------------------------------------------------------------------

struct GeometricConsistency {
  double precision = 0.0;    // fraction of points within threshold
  double mean_distance_m = 0.0;
  std::size_t points = 0;
};

// Accumulates every lidar point into the world frame with the candidate
// poses and measures point-to-mesh distances against the given mesh.
GeometricConsistency geometric_consistency(const SceneDataset& dataset, const PoseSet& poses,
                                           const TriangleMesh& mesh, double threshold_m = 0.15);

struct ConsistencyMeshConfig {
  TrainConfig train;          // camera-only field retrain
  int mesh_resolution = 128;
  double alpha_distance_m = 0.10;  // iso chosen so alpha over this span is 0.5

  ConsistencyMeshConfig() { train.epochs = 10; }
  double iso() const;
};

// Camera-only field trained with frozen candidate poses, then the
// marching-cubes surface of its density.
TriangleMesh consistency_mesh(const SceneDataset& dataset, const PoseSet& poses,
                              const ConsistencyMeshConfig& cfg);

// ---------------------------------------------------------------------------
// Metric bookkeeping, sign agreement, selection
// ---------------------------------------------------------------------------

enum MetricId : int {
  kMetricReproj = 0,
  kMetricTrackLength,
  kMetricPsnr,
  kMetricSsim,
  kMetricPrecision,
  kMetricP2mMean,
  kMetricCount,
};

const char* metric_name(int metric);
bool metric_higher_is_better(int metric);

struct MetricVector {
  std::array<double, kMetricCount> values{};
};

// Positive means the optimized pose set improves on the original.
double oriented_delta(int metric, double original, double optimized);

struct SignAgreementMatrix {
  Eigen::MatrixXd values;  // MxM in [0, 1], unit diagonal, symmetric
  std::vector<std::string> labels;
};

// A[i][j] = fraction of scenes on which metrics i and j agree in sign about
// the improvement; zero deltas count as improvements.
SignAgreementMatrix sign_agreement(const std::vector<std::array<double, kMetricCount>>& deltas);

enum class PoseChoice { Original, Optimized };

// Majority vote per scene: optimized only when strictly more than half of
// the metrics improved.
std::vector<PoseChoice> select_poses(const std::vector<std::array<double, kMetricCount>>& deltas);

// ---------------------------------------------------------------------------
// True errors against synthetic ground truth
// ---------------------------------------------------------------------------

struct SensorPoseError {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

struct TruePoseErrors {
  std::map<std::string, SensorPoseError> extrinsic;  // non-reference sensors
  double ate_rms_m = 0.0;        // after rigid alignment, no scale
  double rotation_rms_deg = 0.0;
  double overall_rms_m = 0.0;    // sensor positions over time, after alignment
};

TruePoseErrors true_pose_errors(const PoseSet& candidate, const PoseSet& ground_truth);

// ---------------------------------------------------------------------------
// Full per-scene evaluation and reports
// ---------------------------------------------------------------------------

struct EvalConfig {
  NvsProtocolConfig nvs;
  ConsistencyMeshConfig consistency;
  double p2m_threshold_m = 0.15;
  double outlier_px = 4.0;
  double track_pixel_noise = 0.0;  // Gaussian sigma added to observations
  std::uint64_t seed = 0;
  int threads = 1;
};

MetricVector evaluate_pose_set(const SceneDataset& dataset, const PoseSet& poses,
                               const std::vector<KeypointTrack>& tracks, const EvalConfig& cfg);

// Adds Gaussian pixel noise to track observations (same draw for every pose
// set under the same seed).
std::vector<KeypointTrack> noisy_tracks(const std::vector<KeypointTrack>& tracks, double sigma_px,
                                        std::uint64_t seed);

struct SceneEvaluation {
  std::string scene_id;
  MetricVector original;
  MetricVector optimized;
  std::array<double, kMetricCount> oriented_deltas{};
  PoseChoice selection = PoseChoice::Original;
  std::optional<TruePoseErrors> true_original;
  std::optional<TruePoseErrors> true_optimized;
};

struct EvaluationReport {
  std::vector<SceneEvaluation> scenes;
  SignAgreementMatrix agreement;
};

EvaluationReport build_report(std::vector<SceneEvaluation> scenes);
void write_report_json(const EvaluationReport& report, const std::filesystem::path& path);
EvaluationReport read_report_json(const std::filesystem::path& path);
void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path);

}  // namespace rigrefine
