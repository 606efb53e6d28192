#include "rigrefine/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rigrefine/parallel.hpp"
#include "rigrefine/rng.hpp"

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kRadToDeg = 180.0 / kPi;

struct ProjectedCamera {
  Pose world_from_cam;
  Pose cam_from_world;
  CameraIntrinsics intrinsics;
};

Eigen::Matrix<double, 3, 4> projection_matrix(const ProjectedCamera& cam) {
  Eigen::Matrix<double, 3, 4> p;
  p.leftCols<3>() = cam.cam_from_world.rotation.toRotationMatrix();
  p.col(3) = cam.cam_from_world.translation;
  Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
  k(0, 0) = cam.intrinsics.fx;
  k(1, 1) = cam.intrinsics.fy;
  k(0, 2) = cam.intrinsics.cx;
  k(1, 2) = cam.intrinsics.cy;
  return k * p;
}

}  // namespace

TriangulationStats triangulate_tracks(const std::vector<KeypointTrack>& tracks,
                                      const PoseSet& poses, double outlier_px) {
  const Trajectory traj = poses.trajectory();
  TriangulationStats stats;
  double err_sum = 0.0;
  std::size_t err_count = 0;
  std::size_t length_sum = 0;

  for (const auto& track : tracks) {
    if (track.obs.size() < 2) {
      ++stats.discarded_tracks;
      continue;
    }

    struct ObsCam {
      Eigen::Vector2d uv;
      ProjectedCamera cam;
      Eigen::Matrix<double, 3, 4> p;
      Vec3 ray_world;
    };
    std::vector<ObsCam> obs;
    obs.reserve(track.obs.size());
    bool usable = true;
    for (const auto& ob : track.obs) {
      const SensorInfo& info = poses.rig.sensor(ob.sensor);
      if (!info.intrinsics || !traj.contains(ob.t)) {
        usable = false;
        break;
      }
      ObsCam oc;
      oc.uv = ob.uv;
      oc.cam.world_from_cam = sensor_pose(poses.rig, traj, ob.sensor, ob.t);
      oc.cam.cam_from_world = oc.cam.world_from_cam.inverse();
      oc.cam.intrinsics = *info.intrinsics;
      oc.p = projection_matrix(oc.cam);
      const Vec3 dir_cam((ob.uv.x() - oc.cam.intrinsics.cx) / oc.cam.intrinsics.fx,
                         (ob.uv.y() - oc.cam.intrinsics.cy) / oc.cam.intrinsics.fy, 1.0);
      oc.ray_world = oc.cam.world_from_cam.rotate(dir_cam.normalized());
      obs.push_back(std::move(oc));
    }
    if (!usable) {
      ++stats.discarded_tracks;
      continue;
    }

    // Parallel-ray tracks cannot be triangulated.
    double max_angle = 0.0;
    for (std::size_t i = 0; i + 1 < obs.size(); ++i) {
      for (std::size_t j = i + 1; j < obs.size(); ++j) {
        const double c = std::clamp(obs[i].ray_world.dot(obs[j].ray_world), -1.0, 1.0);
        max_angle = std::max(max_angle, std::acos(c));
      }
    }
    if (max_angle < 1e-7) {
      ++stats.degenerate_tracks;
      continue;
    }

    // DLT + iterative worst-observation rejection.
    std::vector<double> errors;
    bool keep = true;
    for (;;) {
      Eigen::MatrixXd a(2 * obs.size(), 4);
      for (std::size_t i = 0; i < obs.size(); ++i) {
        a.row(2 * i) = obs[i].uv.x() * obs[i].p.row(2) - obs[i].p.row(0);
        a.row(2 * i + 1) = obs[i].uv.y() * obs[i].p.row(2) - obs[i].p.row(1);
      }
      const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinV);
      const Eigen::Vector4d xh = svd.matrixV().col(3);
      if (std::abs(xh[3]) < 1e-12 * xh.head<3>().norm()) {
        ++stats.degenerate_tracks;
        keep = false;
        break;
      }
      const Vec3 x = xh.head<3>() / xh[3];

      errors.assign(obs.size(), 0.0);
      double worst = -1.0;
      std::size_t worst_index = 0;
      for (std::size_t i = 0; i < obs.size(); ++i) {
        const Vec3 local = obs[i].cam.cam_from_world.apply(x);
        double err;
        if (local.z() <= 1e-9) {
          err = 1e9;  // behind the camera
        } else {
          const double u = obs[i].cam.intrinsics.fx * local.x() / local.z() + obs[i].cam.intrinsics.cx;
          const double v = obs[i].cam.intrinsics.fy * local.y() / local.z() + obs[i].cam.intrinsics.cy;
          err = std::hypot(u - obs[i].uv.x(), v - obs[i].uv.y());
        }
        errors[i] = err;
        if (err > worst) {
          worst = err;
          worst_index = i;
        }
      }

      if (worst <= outlier_px) break;
      obs.erase(obs.begin() + static_cast<std::ptrdiff_t>(worst_index));
      if (obs.size() < 2) {
        ++stats.discarded_tracks;
        keep = false;
        break;
      }
    }
    if (!keep) continue;

    ++stats.surviving_tracks;
    length_sum += obs.size();
    for (double e : errors) err_sum += e;
    err_count += errors.size();
  }

  if (stats.surviving_tracks > 0) {
    stats.mean_reproj_px = err_sum / static_cast<double>(err_count);
    stats.mean_track_length =
        static_cast<double>(length_sum) / static_cast<double>(stats.surviving_tracks);
  }
  return stats;
}

ImagePairMetrics nvs_metrics(const Image& rendered, const Image& reference) {
  if (rendered.width != reference.width || rendered.height != reference.height) {
    throw DimensionMismatchError("nvs_metrics needs images of equal size");
  }
  const int w = rendered.width;
  const int h = rendered.height;

  ImagePairMetrics out;

  double mse = 0.0;
  for (std::size_t i = 0; i < rendered.rgb.size(); ++i) {
    const double d = static_cast<double>(rendered.rgb[i]) - reference.rgb[i];
    mse += d * d;
  }
  mse /= static_cast<double>(rendered.rgb.size());
  out.psnr = mse <= 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));

  // 11x11 Gaussian window, sigma 1.5.
  constexpr int kWin = 11;
  constexpr int kHalf = kWin / 2;
  double kernel[kWin][kWin];
  double ksum = 0.0;
  for (int y = 0; y < kWin; ++y) {
    for (int x = 0; x < kWin; ++x) {
      const double dy = y - kHalf, dx = x - kHalf;
      kernel[y][x] = std::exp(-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5));
      ksum += kernel[y][x];
    }
  }
  for (auto& row : kernel) {
    for (double& v : row) v /= ksum;
  }

  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double ssim_sum = 0.0;
  std::size_t ssim_count = 0;
  for (int cy = kHalf; cy < h - kHalf; ++cy) {
    for (int cx = kHalf; cx < w - kHalf; ++cx) {
      for (int ch = 0; ch < 3; ++ch) {
        double mx = 0.0, my = 0.0;
        for (int dy = -kHalf; dy <= kHalf; ++dy) {
          for (int dx = -kHalf; dx <= kHalf; ++dx) {
            const double k = kernel[dy + kHalf][dx + kHalf];
            mx += k * rendered.at(cy + dy, cx + dx, ch);
            my += k * reference.at(cy + dy, cx + dx, ch);
          }
        }
        double vx = 0.0, vy = 0.0, cov = 0.0;
        for (int dy = -kHalf; dy <= kHalf; ++dy) {
          for (int dx = -kHalf; dx <= kHalf; ++dx) {
            const double k = kernel[dy + kHalf][dx + kHalf];
            const double ex = rendered.at(cy + dy, cx + dx, ch) - mx;
            const double ey = reference.at(cy + dy, cx + dx, ch) - my;
            vx += k * ex * ex;
            vy += k * ey * ey;
            cov += k * ex * ey;
          }
        }
        ssim_sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                    ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++ssim_count;
      }
    }
  }
  out.ssim = ssim_count ? ssim_sum / static_cast<double>(ssim_count) : 1.0;
  return out;
}

Image render_view(const VoxelField& field, const Pose& pose, const CameraIntrinsics& intrinsics,
                  int downscale, int n_samples, int camera_index, std::uint64_t seed,
                  int threads, double near, double far) {
  const int s = std::max(1, downscale);
  const int w = intrinsics.width / s;
  const int h = intrinsics.height / s;
  const double fx = intrinsics.fx / s;
  const double fy = intrinsics.fy / s;
  const double cx = intrinsics.cx / s;
  const double cy = intrinsics.cy / s;
  Image img = Image::zeros(w, h);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  parallel_chunks(n, 256, threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const int x = static_cast<int>(i % static_cast<std::size_t>(w));
      const int y = static_cast<int>(i / static_cast<std::size_t>(w));
      Ray ray;
      ray.origin = pose.translation;
      ray.direction = pose.rotate(Vec3((x + 0.5 - cx) / fx, (y + 0.5 - cy) / fy, 1.0).normalized());
      ray.near = near;
      ray.far = far;
      ray.camera = camera_index;
      const RenderResult r = render_ray(field, ray, n_samples, {seed, i});
      img.at(y, x, 0) = static_cast<float>(r.color.x());
      img.at(y, x, 1) = static_cast<float>(r.color.y());
      img.at(y, x, 2) = static_cast<float>(r.color.z());
    }
  });
  return img;
}

NvsProtocolResult nvs_protocol(const SceneDataset& dataset, const PoseSet& poses,
                               const NvsProtocolConfig& cfg) {
  FrozenTrainOptions options;
  options.frame_filter = [&](const std::string& sensor, int index) {
    if (poses.rig.sensor(sensor).kind != SensorKind::Camera) return true;  // keep lidar
    return index % 2 == 0;  // train on even camera frames
  };
  const VoxelField field = train_field_frozen(dataset, poses.rig, poses.knots, cfg.train, options);

  const Trajectory traj = poses.trajectory();
  const std::vector<std::string> cameras = poses.rig.camera_ids();

  NvsProtocolResult result;
  std::map<std::string, std::pair<double, double>> sums;  // psnr, ssim
  std::map<std::string, int> counts;

  std::map<std::string, int> index_in_sensor;
  for (const auto& frame : dataset.frames) {
    if (frame.kind != SensorKind::Camera) continue;
    const int index = index_in_sensor[frame.sensor]++;
    if (index % 2 == 0) continue;  // held-out odd frames only
    const auto& intr = *poses.rig.sensor(frame.sensor).intrinsics;
    const Pose pose = sensor_pose(poses.rig, traj, frame.sensor, frame.timestamp);
    int camera_index = -1;
    for (std::size_t c = 0; c < cameras.size(); ++c) {
      if (cameras[c] == frame.sensor) camera_index = static_cast<int>(c);
    }
    const Image rendered =
        render_view(field, pose, intr, cfg.eval_downscale, cfg.eval_n_samples, camera_index,
                    hash_combine(cfg.train.seed, 0x65766132ull + index), cfg.train.threads,
                    cfg.train.near_m, cfg.train.far_m);

    // Reference downscaled by the same box filter.
    const int s = std::max(1, cfg.eval_downscale);
    Image reference = Image::zeros(intr.width / s, intr.height / s);
    for (int y = 0; y < reference.height; ++y) {
      for (int x = 0; x < reference.width; ++x) {
        Eigen::Vector3f rgb = Eigen::Vector3f::Zero();
        for (int dy = 0; dy < s; ++dy) {
          for (int dx = 0; dx < s; ++dx) {
            rgb += Eigen::Vector3f(frame.image.at(y * s + dy, x * s + dx, 0),
                                   frame.image.at(y * s + dy, x * s + dx, 1),
                                   frame.image.at(y * s + dy, x * s + dx, 2));
          }
        }
        rgb /= static_cast<float>(s * s);
        reference.at(y, x, 0) = rgb[0];
        reference.at(y, x, 1) = rgb[1];
        reference.at(y, x, 2) = rgb[2];
      }
    }

    const ImagePairMetrics m = nvs_metrics(rendered, reference);
    sums[frame.sensor].first += m.psnr;
    sums[frame.sensor].second += m.ssim;
    counts[frame.sensor] += 1;
    ++result.evaluated_frames;
  }

  double psnr_total = 0.0, ssim_total = 0.0;
  for (const auto& [sensor, sum] : sums) {
    ImagePairMetrics mean;
    mean.psnr = sum.first / counts[sensor];
    mean.ssim = sum.second / counts[sensor];
    result.per_camera[sensor] = mean;
    psnr_total += mean.psnr;
    ssim_total += mean.ssim;
  }
  if (!sums.empty()) {
    result.mean_psnr = psnr_total / static_cast<double>(sums.size());
    result.mean_ssim = ssim_total / static_cast<double>(sums.size());
  }
  return result;
}

GeometricConsistency geometric_consistency(const SceneDataset& dataset, const PoseSet& poses,
                                           const TriangleMesh& mesh, double threshold_m) {
  if (mesh.empty()) throw EmptyMeshError("geometric consistency needs a non-empty mesh");
  const Trajectory traj = poses.trajectory();
  const TriangleBvh bvh(mesh);

  GeometricConsistency out;
  double sum = 0.0;
  std::size_t within = 0;
  for (const auto& frame : dataset.frames) {
    if (frame.kind != SensorKind::Lidar) continue;
    if (!traj.contains(frame.timestamp)) continue;
    const Pose pose = sensor_pose(poses.rig, traj, frame.sensor, frame.timestamp);
    for (const auto& pf : frame.scan.points) {
      const double d = bvh.distance(pose.apply(pf.cast<double>()));
      sum += d;
      if (d < threshold_m) ++within;
      ++out.points;
    }
  }
  if (out.points == 0) throw NoLidarError("no lidar points to evaluate");
  out.mean_distance_m = sum / static_cast<double>(out.points);
  out.precision = static_cast<double>(within) / static_cast<double>(out.points);
  return out;
}

double ConsistencyMeshConfig::iso() const { return std::log(2.0) / alpha_distance_m; }

TriangleMesh consistency_mesh(const SceneDataset& dataset, const PoseSet& poses,
                              const ConsistencyMeshConfig& cfg) {
  FrozenTrainOptions options;
  options.camera_only = true;
  const VoxelField field = train_field_frozen(dataset, poses.rig, poses.knots, cfg.train, options);
  return extract_mesh(field, cfg.iso(), cfg.mesh_resolution);
}

const char* metric_name(int metric) {
  switch (metric) {
    case kMetricReproj: return "reproj_error";
    case kMetricTrackLength: return "track_length";
    case kMetricPsnr: return "psnr";
    case kMetricSsim: return "ssim";
    case kMetricPrecision: return "p2m_precision";
    case kMetricP2mMean: return "p2m_mean";
    default: return "unknown";
  }
}

bool metric_higher_is_better(int metric) {
  return metric != kMetricReproj && metric != kMetricP2mMean;
}

double oriented_delta(int metric, double original, double optimized) {
  return metric_higher_is_better(metric) ? optimized - original : original - optimized;
}

namespace {
inline int sign_of(double v) { return v >= 0.0 ? 1 : -1; }  // sgn(0) counts as +
}  // namespace

SignAgreementMatrix sign_agreement(const std::vector<std::array<double, kMetricCount>>& deltas) {
  if (deltas.empty()) throw EmptyListError("sign agreement needs at least one scene");
  SignAgreementMatrix out;
  out.values = Eigen::MatrixXd::Zero(kMetricCount, kMetricCount);
  for (int m = 0; m < kMetricCount; ++m) out.labels.push_back(metric_name(m));
  for (int i = 0; i < kMetricCount; ++i) {
    for (int j = 0; j < kMetricCount; ++j) {
      int agree = 0;
      for (const auto& scene : deltas) {
        if (sign_of(scene[static_cast<std::size_t>(i)]) ==
            sign_of(scene[static_cast<std::size_t>(j)])) {
          ++agree;
        }
      }
      out.values(i, j) = static_cast<double>(agree) / static_cast<double>(deltas.size());
    }
  }
  return out;
}

std::vector<PoseChoice> select_poses(const std::vector<std::array<double, kMetricCount>>& deltas) {
  std::vector<PoseChoice> out;
  out.reserve(deltas.size());
  for (const auto& scene : deltas) {
    int improved = 0;
    for (double d : scene) {
      if (d > 0.0) ++improved;
    }
    out.push_back(2 * improved > kMetricCount ? PoseChoice::Optimized : PoseChoice::Original);
  }
  return out;
}

TruePoseErrors true_pose_errors(const PoseSet& candidate, const PoseSet& ground_truth) {
  TruePoseErrors out;
  for (const auto& sensor : candidate.rig.sensors) {
    if (sensor.id == candidate.rig.reference) continue;
    const SensorInfo* gt = ground_truth.rig.find(sensor.id);
    if (!gt) throw NoGroundTruthError("no ground-truth extrinsic for '" + sensor.id + "'");
    const Pose delta = gt->extrinsic.inverse() * sensor.extrinsic;
    SensorPoseError err;
    err.translation_m = delta.translation.norm();
    err.rotation_deg = rotation_angle(delta.rotation) * kRadToDeg;
    out.extrinsic[sensor.id] = err;
  }

  // Rigid alignment (rotation + translation, no scale) of the candidate
  // trajectory onto the truth, evaluated at the candidate knot times.
  const Trajectory cand_traj = candidate.trajectory();
  const Trajectory gt_traj = ground_truth.trajectory();
  std::vector<double> times;
  for (const auto& k : candidate.knots) {
    if (gt_traj.contains(k.t)) times.push_back(k.t);
  }
  if (times.size() < 3) throw NoGroundTruthError("too little trajectory overlap for alignment");

  Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(times.size()));
  Eigen::Matrix3Xd dst(3, static_cast<Eigen::Index>(times.size()));
  for (std::size_t i = 0; i < times.size(); ++i) {
    src.col(static_cast<Eigen::Index>(i)) = cand_traj.interpolate(times[i]).translation;
    dst.col(static_cast<Eigen::Index>(i)) = gt_traj.interpolate(times[i]).translation;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  Pose align;
  align.rotation = Quat(Eigen::Matrix3d(t.topLeftCorner<3, 3>()));
  align.translation = t.topRightCorner<3, 1>();

  double pos_sq = 0.0, rot_sq = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const Pose cand = cand_traj.interpolate(times[i]);
    const Pose gt = gt_traj.interpolate(times[i]);
    const Pose aligned = align * cand;
    pos_sq += (aligned.translation - gt.translation).squaredNorm();
    const double ang = angular_distance(aligned.rotation, gt.rotation) * kRadToDeg;
    rot_sq += ang * ang;
  }
  out.ate_rms_m = std::sqrt(pos_sq / static_cast<double>(times.size()));
  out.rotation_rms_deg = std::sqrt(rot_sq / static_cast<double>(times.size()));

  // Sensor positions through time, same alignment.
  double overall_sq = 0.0;
  std::size_t overall_n = 0;
  for (const auto& sensor : candidate.rig.sensors) {
    for (std::size_t i = 0; i < times.size(); ++i) {
      const Pose cand = sensor_pose(candidate.rig, cand_traj, sensor.id, times[i]);
      const Pose gt = sensor_pose(ground_truth.rig, gt_traj, sensor.id, times[i]);
      overall_sq += ((align * cand).translation - gt.translation).squaredNorm();
      ++overall_n;
    }
  }
  out.overall_rms_m = std::sqrt(overall_sq / static_cast<double>(overall_n));
  return out;
}

std::vector<KeypointTrack> noisy_tracks(const std::vector<KeypointTrack>& tracks, double sigma_px,
                                        std::uint64_t seed) {
  if (sigma_px <= 0.0) return tracks;
  std::vector<KeypointTrack> out = tracks;
  for (std::size_t ti = 0; ti < out.size(); ++ti) {
    CounterRng rng(seed, 0x74726b00ull + ti);
    for (auto& ob : out[ti].obs) {
      ob.uv.x() += sigma_px * rng.next_normal();
      ob.uv.y() += sigma_px * rng.next_normal();
    }
  }
  return out;
}

MetricVector evaluate_pose_set(const SceneDataset& dataset, const PoseSet& poses,
                               const std::vector<KeypointTrack>& tracks, const EvalConfig& cfg) {
  MetricVector out;

  const TriangulationStats tri = triangulate_tracks(tracks, poses, cfg.outlier_px);
  out.values[kMetricReproj] = tri.mean_reproj_px;
  out.values[kMetricTrackLength] = tri.mean_track_length;

  NvsProtocolConfig nvs_cfg = cfg.nvs;
  nvs_cfg.train.seed = hash_combine(cfg.seed, 0x6e7673ull);
  nvs_cfg.train.threads = cfg.threads;
  nvs_cfg.train.log_progress = false;
  const NvsProtocolResult nvs = nvs_protocol(dataset, poses, nvs_cfg);
  out.values[kMetricPsnr] = nvs.mean_psnr;
  out.values[kMetricSsim] = nvs.mean_ssim;

  ConsistencyMeshConfig mesh_cfg = cfg.consistency;
  mesh_cfg.train.seed = hash_combine(cfg.seed, 0x6d657368ull);
  mesh_cfg.train.threads = cfg.threads;
  mesh_cfg.train.log_progress = false;
  const TriangleMesh mesh = consistency_mesh(dataset, poses, mesh_cfg);
  const GeometricConsistency gc =
      geometric_consistency(dataset, poses, mesh, cfg.p2m_threshold_m);
  out.values[kMetricPrecision] = gc.precision;
  out.values[kMetricP2mMean] = gc.mean_distance_m;
  return out;
}

EvaluationReport build_report(std::vector<SceneEvaluation> scenes) {
  EvaluationReport report;
  std::vector<std::array<double, kMetricCount>> deltas;
  for (auto& scene : scenes) {
    for (int m = 0; m < kMetricCount; ++m) {
      scene.oriented_deltas[static_cast<std::size_t>(m)] = oriented_delta(
          m, scene.original.values[static_cast<std::size_t>(m)],
          scene.optimized.values[static_cast<std::size_t>(m)]);
    }
    deltas.push_back(scene.oriented_deltas);
  }
  const auto choices = select_poses(deltas);
  for (std::size_t i = 0; i < scenes.size(); ++i) scenes[i].selection = choices[i];
  report.agreement = sign_agreement(deltas);
  report.scenes = std::move(scenes);
  return report;
}

namespace {

using nlohmann::json;

json metrics_to_json(const MetricVector& m) {
  json out;
  for (int i = 0; i < kMetricCount; ++i) {
    out[metric_name(i)] = m.values[static_cast<std::size_t>(i)];
  }
  return out;
}

MetricVector metrics_from_json(const json& j) {
  MetricVector m;
  for (int i = 0; i < kMetricCount; ++i) {
    m.values[static_cast<std::size_t>(i)] = j.at(metric_name(i)).get<double>();
  }
  return m;
}

json true_errors_to_json(const TruePoseErrors& t) {
  json ext = json::object();
  for (const auto& [id, err] : t.extrinsic) {
    ext[id] = {{"translation_m", err.translation_m}, {"rotation_deg", err.rotation_deg}};
  }
  return {{"extrinsic", ext},
          {"ate_rms_m", t.ate_rms_m},
          {"rotation_rms_deg", t.rotation_rms_deg},
          {"overall_rms_m", t.overall_rms_m}};
}

TruePoseErrors true_errors_from_json(const json& j) {
  TruePoseErrors t;
  for (const auto& [id, ej] : j.at("extrinsic").items()) {
    t.extrinsic[id] = {ej.at("translation_m").get<double>(), ej.at("rotation_deg").get<double>()};
  }
  t.ate_rms_m = j.at("ate_rms_m").get<double>();
  t.rotation_rms_deg = j.at("rotation_rms_deg").get<double>();
  t.overall_rms_m = j.at("overall_rms_m").get<double>();
  return t;
}

}  // namespace

void write_report_json(const EvaluationReport& report, const std::filesystem::path& path) {
  json scenes = json::array();
  for (const auto& scene : report.scenes) {
    json deltas;
    for (int m = 0; m < kMetricCount; ++m) {
      deltas[metric_name(m)] = scene.oriented_deltas[static_cast<std::size_t>(m)];
    }
    json entry{{"scene", scene.scene_id},
               {"original", metrics_to_json(scene.original)},
               {"optimized", metrics_to_json(scene.optimized)},
               {"oriented_delta", deltas},
               {"selection", scene.selection == PoseChoice::Optimized ? "optimized" : "original"}};
    if (scene.true_original) entry["true_errors_original"] = true_errors_to_json(*scene.true_original);
    if (scene.true_optimized) entry["true_errors_optimized"] = true_errors_to_json(*scene.true_optimized);
    scenes.push_back(std::move(entry));
  }

  json agreement;
  agreement["labels"] = report.agreement.labels;
  json rows = json::array();
  for (int i = 0; i < report.agreement.values.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < report.agreement.values.cols(); ++j) {
      row.push_back(report.agreement.values(i, j));
    }
    rows.push_back(std::move(row));
  }
  agreement["matrix"] = std::move(rows);

  const json doc{{"version", 1}, {"scenes", scenes}, {"sign_agreement", agreement}};
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << doc.dump(2) << "\n";
}

EvaluationReport read_report_json(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  json doc;
  try {
    f >> doc;
  } catch (const json::parse_error& e) {
    throw IoError("invalid report JSON: " + std::string(e.what()));
  }
  EvaluationReport report;
  for (const auto& sj : doc.at("scenes")) {
    SceneEvaluation scene;
    scene.scene_id = sj.at("scene").get<std::string>();
    scene.original = metrics_from_json(sj.at("original"));
    scene.optimized = metrics_from_json(sj.at("optimized"));
    for (int m = 0; m < kMetricCount; ++m) {
      scene.oriented_deltas[static_cast<std::size_t>(m)] =
          sj.at("oriented_delta").at(metric_name(m)).get<double>();
    }
    scene.selection = sj.at("selection").get<std::string>() == "optimized"
                          ? PoseChoice::Optimized
                          : PoseChoice::Original;
    if (sj.contains("true_errors_original")) {
      scene.true_original = true_errors_from_json(sj.at("true_errors_original"));
    }
    if (sj.contains("true_errors_optimized")) {
      scene.true_optimized = true_errors_from_json(sj.at("true_errors_optimized"));
    }
    report.scenes.push_back(std::move(scene));
  }
  const auto& aj = doc.at("sign_agreement");
  report.agreement.labels = aj.at("labels").get<std::vector<std::string>>();
  const auto& rows = aj.at("matrix");
  report.agreement.values.resize(static_cast<Eigen::Index>(rows.size()),
                                 static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      report.agreement.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j].get<double>();
    }
  }
  return report;
}

void write_report_csv(const EvaluationReport& report, const std::filesystem::path& path) {
  std::string out = "scene,metric,original,optimized,delta,improved\n";
  char buf[256];
  for (const auto& scene : report.scenes) {
    for (int m = 0; m < kMetricCount; ++m) {
      const std::size_t mi = static_cast<std::size_t>(m);
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%.17g,%d\n", scene.scene_id.c_str(),
                    metric_name(m), scene.original.values[mi], scene.optimized.values[mi],
                    scene.oriented_deltas[mi], scene.oriented_deltas[mi] > 0.0 ? 1 : 0);
      out += buf;
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f << out;
}

}  // namespace rigrefine
