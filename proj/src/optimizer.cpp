#include "rigrefine/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <set>

#include "rigrefine/parallel.hpp"
#include "rigrefine/rng.hpp"

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kRadToDeg = 180.0 / kPi;
}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (rays_per_batch < 1) throw ConfigError("rays_per_batch must be >= 1");
  if (!(lr_field > 0.0) || !(lr_extrinsic > 0.0) || !(lr_trajectory > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  const std::set<int> allowed = {1, 2, 4, 6, 8};
  if (!allowed.count(downscale)) throw ConfigError("downscale must be one of {1, 2, 4, 6, 8}");
  if (n_samples < 2) throw ConfigError("n_samples must be >= 2");
  if (!(near_m > 0.0) || !(far_m > near_m)) throw ConfigError("need 0 < near < far");
  if (level_resolutions.empty()) throw ConfigError("need at least one field level");
}

int TrainConfig::coarse_epochs() const {
  if (decay_coarse_epochs >= 0) return decay_coarse_epochs;
  return (epochs + 2) / 3;
}

RayBundle build_rays(const SensorFrame& frame, const Pose& pose,
                     const std::optional<CameraIntrinsics>& intrinsics, int downscale,
                     double near, double far, int camera_index) {
  RayBundle bundle;
  if (frame.kind == SensorKind::Camera) {
    if (!intrinsics) throw MissingIntrinsicsError("camera frame '" + frame.sensor + "' needs intrinsics");
    const int s = std::max(1, downscale);
    const int w = frame.image.width / s;
    const int h = frame.image.height / s;
    const double fx = intrinsics->fx / s;
    const double fy = intrinsics->fy / s;
    const double cx = intrinsics->cx / s;
    const double cy = intrinsics->cy / s;
    bundle.rays.reserve(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // Box-average the block; skip it if any source pixel is dynamic.
        Eigen::Vector3f rgb = Eigen::Vector3f::Zero();
        bool masked = false;
        for (int dy = 0; dy < s && !masked; ++dy) {
          for (int dx = 0; dx < s; ++dx) {
            const int sy = y * s + dy;
            const int sx = x * s + dx;
            if (frame.mask && frame.mask->at(sy, sx)) {
              masked = true;
              break;
            }
            rgb += Eigen::Vector3f(frame.image.at(sy, sx, 0), frame.image.at(sy, sx, 1),
                                   frame.image.at(sy, sx, 2));
          }
        }
        if (masked) continue;
        rgb /= static_cast<float>(s * s);

        const Vec3 dir_cam =
            Vec3((x + 0.5 - cx) / fx, (y + 0.5 - cy) / fy, 1.0).normalized();
        Ray ray;
        ray.origin = pose.translation;
        ray.direction = pose.rotate(dir_cam);
        ray.near = near;
        ray.far = far;
        ray.camera = camera_index;
        bundle.rays.push_back(ray);
        bundle.sensor_dirs.push_back(dir_cam);
        RayTarget target;
        target.is_camera = true;
        target.rgb = rgb;
        bundle.targets.push_back(target);
      }
    }
  } else {
    bundle.rays.reserve(frame.scan.points.size());
    for (const auto& pf : frame.scan.points) {
      const Vec3 p = pf.cast<double>();
      const double range = p.norm();
      if (range <= near || range >= far) continue;
      const Vec3 dir_sensor = p / range;
      Ray ray;
      ray.origin = pose.translation;
      ray.direction = pose.rotate(dir_sensor);
      ray.near = near;
      ray.far = far;
      ray.camera = -1;
      bundle.rays.push_back(ray);
      bundle.sensor_dirs.push_back(dir_sensor);
      RayTarget target;
      target.is_camera = false;
      target.depth = static_cast<float>(range);
      bundle.targets.push_back(target);
    }
  }
  return bundle;
}

LossResult compute_loss(const std::vector<RayTarget>& targets,
                        const std::vector<RenderResult>& rendered, const LossWeights& weights) {
  if (targets.size() != rendered.size()) {
    throw ShapeMismatchError("loss needs one rendered result per target");
  }
  LossResult out;
  out.upstream.assign(targets.size(), RenderUpstream{});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].is_camera) ++out.camera_rays;
    else if (rendered[i].depth_valid) ++out.valid_depth_rays;
  }

  const double photo_norm = out.camera_rays > 0 ? 1.0 / (3.0 * out.camera_rays) : 0.0;
  const double depth_norm = out.valid_depth_rays > 0 ? 1.0 / out.valid_depth_rays : 0.0;

  for (std::size_t i = 0; i < targets.size(); ++i) {
    const RayTarget& t = targets[i];
    const RenderResult& r = rendered[i];
    if (t.is_camera) {
      const Vec3 err = r.color - t.rgb.cast<double>();
      out.photometric += photo_norm * err.squaredNorm();
      out.upstream[i].color = weights.photometric * 2.0 * photo_norm * err;
    } else if (r.depth_valid) {
      const double err = r.expected_depth - static_cast<double>(t.depth);
      out.depth += depth_norm * std::abs(err);
      out.upstream[i].depth =
          weights.depth * depth_norm * (err > 0.0 ? 1.0 : (err < 0.0 ? -1.0 : 0.0));
    }
  }
  out.total = weights.photometric * out.photometric + weights.depth * out.depth;
  if (!std::isfinite(out.total)) throw NonFiniteLossError("loss is not finite");
  return out;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, const AdamParams& hypers, int threads) {
  if (params.size() != grads.size()) throw ShapeMismatchError("adam: params/grads size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hypers.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hypers.beta2, static_cast<double>(state.step));

  auto update = [&](std::size_t i) {
    const double g = grads[i];
    state.m[i] = hypers.beta1 * state.m[i] + (1.0 - hypers.beta1) * g;
    state.v[i] = hypers.beta2 * state.v[i] + (1.0 - hypers.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + hypers.eps);
  };
  if (threads > 1 && params.size() > 65536) {
    parallel_for_each(params.size(), threads, update);
  } else {
    for (std::size_t i = 0; i < params.size(); ++i) update(i);
  }
}

Eigen::AlignedBox3d compute_scene_bounds(const SceneDataset& scene, const RigCalibration& rig,
                                         const std::vector<TrajectoryKnot>& knots,
                                         const TrainConfig& cfg) {
  const Trajectory traj(knots, rig.reference);
  Eigen::AlignedBox3d box;
  bool any_lidar = false;
  for (const auto& frame : scene.frames) {
    if (frame.kind != SensorKind::Lidar) continue;
    const Pose pose = sensor_pose(rig, traj, frame.sensor, frame.timestamp);
    for (std::size_t i = 0; i < frame.scan.points.size(); i += 7) {
      box.extend(pose.apply(frame.scan.points[i].cast<double>()));
      any_lidar = true;
    }
  }
  for (const auto& k : knots) box.extend(k.pose.translation);
  if (!any_lidar) {
    const Vec3 pad = Vec3::Constant(0.4 * cfg.far_m);
    box.extend(box.min() - pad);
    box.extend(box.max() + pad);
  }
  const Vec3 margin = Vec3::Constant(cfg.bounds_margin_m);
  return {box.min() - margin, box.max() + margin};
}

namespace {

bool rigs_equal(const RigCalibration& a, const RigCalibration& b) {
  if (a.reference != b.reference || a.sensors.size() != b.sensors.size()) return false;
  for (std::size_t i = 0; i < a.sensors.size(); ++i) {
    const auto& sa = a.sensors[i];
    const auto& sb = b.sensors[i];
    if (sa.id != sb.id || sa.kind != sb.kind) return false;
    if (sa.extrinsic.translation != sb.extrinsic.translation) return false;
    if (sa.extrinsic.rotation.coeffs() != sb.extrinsic.rotation.coeffs()) return false;
  }
  return true;
}

// Commits per-chunk outputs strictly in chunk order while later chunks keep
// rendering, which keeps reductions bit-identical at any thread count.
class OrderedCommitter {
 public:
  void commit(std::size_t chunk, const std::function<void()>& fn) {
    std::unique_lock<std::mutex> lock(mutex_);
    cv_.wait(lock, [&] { return next_ == chunk; });
    fn();
    ++next_;
    cv_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t next_ = 0;
};

struct FrameEntry {
  const SensorFrame* frame = nullptr;
  std::string sensor;
  double t = 0.0;
  SensorKind kind = SensorKind::Camera;
  int camera_index = -1;
  // Downscaled camera data.
  int width = 0, height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Image target;  // downscaled
  std::vector<std::uint8_t> masked;
};

struct CameraPixelRef {
  std::uint32_t frame;
  std::uint16_t x, y;
};

struct LidarPointRef {
  std::uint32_t frame;
  std::uint32_t point;
};

struct SceneState {
  std::string scene_id;
  std::vector<std::string> camera_ids;
  const SceneDataset* data = nullptr;
  std::vector<TrajectoryKnot> knots;
  std::unique_ptr<Trajectory> traj;
  std::vector<FrameEntry> frames;
  std::vector<CameraPixelRef> camera_pool;
  std::vector<LidarPointRef> lidar_pool;

  VoxelField field;
  FieldGradients grads;
  std::vector<RayForwardCache> ray_caches;
  std::vector<AdamState> adam_density;
  std::vector<AdamState> adam_color;
  AdamState adam_background;
  AdamState adam_appearance;
  AdamState adam_net;

  double epoch_photo = 0.0;
  double epoch_depth = 0.0;
  int epoch_batches = 0;
};

struct TrainerOptions {
  bool train_extrinsic = false;
  bool train_trajectory = false;
  bool camera_only = false;
  std::function<bool(const std::string&, int)> frame_filter;
  bool frozen_poses = false;  // plain sensor_pose, no corrections
};

class Trainer {
 public:
  Trainer(std::vector<const SceneDataset*> scenes, const RigCalibration& rig,
          const TrainConfig& cfg, const TrainerOptions& options)
      : rig_(rig), cfg_(cfg), options_(options) {
    cfg_.validate();
    rig_.validate();
    for (const SceneDataset* s : scenes) {
      if (!rigs_equal(s->rig, rig_)) {
        throw RigMismatchError("scene '" + s->scene_id + "' uses a different rig");
      }
    }

    corrections_ = CorrectionSet(rig_);

    for (const SceneDataset* data : scenes) {
      auto state = std::make_unique<SceneState>();
      state->scene_id = data->scene_id;
      state->camera_ids = rig_.camera_ids();
      state->data = data;
      state->knots = data->knots;
      state->traj = std::make_unique<Trajectory>(state->knots, rig_.reference);
      build_frames(*state);
      const Eigen::AlignedBox3d bounds = compute_scene_bounds(*data, rig_, state->knots, cfg_);
      state->field = VoxelField(bounds, cfg_.level_resolutions, rig_.camera_ids());
      state->grads.init_like(state->field);
      state->adam_density.resize(static_cast<std::size_t>(state->field.levels()));
      state->adam_color.resize(static_cast<std::size_t>(state->field.levels()));
      if (options_.train_trajectory) {
        corrections_.set_trajectory_net(
            state->scene_id,
            TrajectoryCorrectionNet(state->traj->t_min(), state->traj->t_max(),
                                    hash_combine(cfg_.seed, scenes_.size())));
      }
      scenes_.push_back(std::move(state));
    }

    std::size_t max_pool = 1;
    for (const auto& s : scenes_) {
      max_pool = std::max(max_pool, s->camera_pool.size() + s->lidar_pool.size());
    }
    steps_per_epoch_ =
        static_cast<int>((max_pool + cfg_.rays_per_batch - 1) / cfg_.rays_per_batch);
    total_steps_ = steps_per_epoch_ * cfg_.epochs;
  }

  TrainSummary run() {
    TrainSummary summary;
    int global_step = 0;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      const auto decay =
          coarse_to_fine_decay(epoch, {cfg_.decay_lambda_max, cfg_.coarse_epochs(), 2},
                               static_cast<int>(cfg_.level_resolutions.size()));
      for (auto& s : scenes_) {
        s->epoch_photo = 0.0;
        s->epoch_depth = 0.0;
        s->epoch_batches = 0;
      }
      for (int step = 0; step < steps_per_epoch_; ++step, ++global_step) {
        run_step(epoch, global_step, decay);
        if (cfg_.on_step) cfg_.on_step(global_step, scenes_.front()->field, corrections_);
      }
      for (const auto& s : scenes_) {
        EpochLog log;
        log.scene = s->scene_id;
        log.epoch = epoch;
        log.photometric = s->epoch_batches ? s->epoch_photo / s->epoch_batches : 0.0;
        log.depth = s->epoch_batches ? s->epoch_depth / s->epoch_batches : 0.0;
        ext_norms(log.ext_corr_norm_m, log.ext_corr_norm_deg);
        summary.epochs.push_back(log);
        if (cfg_.log_progress) {
          std::fprintf(stderr, "%s\t%d\t%.6g\t%.6g\t%.6g\t%.6g\n", log.scene.c_str(), log.epoch,
                       log.photometric, log.depth, log.ext_corr_norm_m, log.ext_corr_norm_deg);
        }
      }
    }
    summary.total_steps = total_steps_;
    summary.extrinsic_grad_norm = ext_grad_norm_;
    return summary;
  }

  CorrectionSet& corrections() { return corrections_; }
  std::vector<VoxelField> take_fields() {
    std::vector<VoxelField> out;
    out.reserve(scenes_.size());
    for (auto& s : scenes_) out.push_back(std::move(s->field));
    return out;
  }

 private:
  void build_frames(SceneState& state) {
    std::map<std::string, int> index_in_sensor;
    for (const auto& frame : state.data->frames) {
      const int index = index_in_sensor[frame.sensor]++;
      if (options_.frame_filter && !options_.frame_filter(frame.sensor, index)) continue;
      if (options_.camera_only && frame.kind != SensorKind::Camera) continue;

      FrameEntry entry;
      entry.frame = &frame;
      entry.sensor = frame.sensor;
      entry.t = frame.timestamp;
      entry.kind = frame.kind;
      const std::uint32_t frame_id = static_cast<std::uint32_t>(state.frames.size());

      if (frame.kind == SensorKind::Camera) {
        const auto& intr = rig_.sensor(frame.sensor).intrinsics;
        if (!intr) throw MissingIntrinsicsError("camera '" + frame.sensor + "' needs intrinsics");
        const int s = cfg_.downscale;
        entry.width = frame.image.width / s;
        entry.height = frame.image.height / s;
        entry.fx = intr->fx / s;
        entry.fy = intr->fy / s;
        entry.cx = intr->cx / s;
        entry.cy = intr->cy / s;
        entry.camera_index = -1;
        for (std::size_t c = 0; c < state.camera_ids.size(); ++c) {
          if (state.camera_ids[c] == frame.sensor) entry.camera_index = static_cast<int>(c);
        }
        entry.target = Image::zeros(entry.width, entry.height);
        entry.masked.assign(static_cast<std::size_t>(entry.width) * entry.height, 0);
        for (int y = 0; y < entry.height; ++y) {
          for (int x = 0; x < entry.width; ++x) {
            Eigen::Vector3f rgb = Eigen::Vector3f::Zero();
            bool masked = false;
            for (int dy = 0; dy < s && !masked; ++dy) {
              for (int dx = 0; dx < s; ++dx) {
                const int sy = y * s + dy;
                const int sx = x * s + dx;
                if (frame.mask && frame.mask->at(sy, sx)) {
                  masked = true;
                  break;
                }
                rgb += Eigen::Vector3f(frame.image.at(sy, sx, 0), frame.image.at(sy, sx, 1),
                                       frame.image.at(sy, sx, 2));
              }
            }
            if (masked) {
              entry.masked[static_cast<std::size_t>(y) * entry.width + x] = 1;
              continue;
            }
            rgb /= static_cast<float>(s * s);
            entry.target.at(y, x, 0) = rgb[0];
            entry.target.at(y, x, 1) = rgb[1];
            entry.target.at(y, x, 2) = rgb[2];
            state.camera_pool.push_back(
                {frame_id, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y)});
          }
        }
      } else {
        for (std::uint32_t p = 0; p < frame.scan.points.size(); ++p) {
          const double range = frame.scan.points[p].cast<double>().norm();
          if (range > cfg_.near_m && range < cfg_.far_m) state.lidar_pool.push_back({frame_id, p});
        }
      }
      state.frames.push_back(std::move(entry));
    }
  }

  double cosine_lr(double lr0, int global_step) const {
    const double f = cfg_.lr_final_fraction;
    const double u = total_steps_ > 1
                         ? static_cast<double>(global_step) / (total_steps_ - 1)
                         : 1.0;
    return lr0 * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(kPi * u)));
  }

  void ext_norms(double& norm_m, double& norm_deg) const {
    norm_m = 0.0;
    norm_deg = 0.0;
    int n = 0;
    for (const auto& [id, corr] : corrections_.extrinsics()) {
      norm_m += corr.v.head<3>().norm();
      norm_deg += corr.v.tail<3>().norm() * kRadToDeg;
      ++n;
    }
    if (n > 0) {
      norm_m /= n;
      norm_deg /= n;
    }
  }

  void run_step(int epoch, int global_step, const std::vector<double>& decay) {
    const bool warmup = epoch < cfg_.warmup_epochs;
    std::vector<std::map<std::string, Vec6>> scene_ext_grads;

    for (std::size_t scene_index = 0; scene_index < scenes_.size(); ++scene_index) {
      SceneState& s = *scenes_[scene_index];

      // --- sample the batch -------------------------------------------------
      CounterRng rng(cfg_.seed, 0xba7c4000ull + scene_index, static_cast<std::uint64_t>(global_step));
      const int batch = cfg_.rays_per_batch;
      int n_cam = static_cast<int>(std::lround(cfg_.camera_ray_fraction * batch));
      if (s.lidar_pool.empty()) n_cam = batch;
      if (s.camera_pool.empty()) n_cam = 0;
      const int n_lidar = s.lidar_pool.empty() ? 0 : batch - n_cam;

      struct Draw {
        std::uint32_t frame;
        std::uint32_t x, y, point;
        bool is_camera;
      };
      std::vector<Draw> draws;
      draws.reserve(static_cast<std::size_t>(n_cam + n_lidar));
      for (int i = 0; i < n_cam; ++i) {
        const auto& ref = s.camera_pool[rng.next_below(s.camera_pool.size())];
        draws.push_back({ref.frame, ref.x, ref.y, 0, true});
      }
      for (int i = 0; i < n_lidar; ++i) {
        const auto& ref = s.lidar_pool[rng.next_below(s.lidar_pool.size())];
        draws.push_back({ref.frame, 0, 0, ref.point, false});
      }
      if (draws.empty()) continue;

      // --- forward pose chains per touched frame ----------------------------
      std::map<std::uint32_t, PoseChainForward> chains;
      for (const Draw& d : draws) {
        if (chains.count(d.frame)) continue;
        const FrameEntry& fe = s.frames[d.frame];
        if (options_.frozen_poses) {
          PoseChainForward ctx;
          const Pose pose = sensor_pose(rig_, *s.traj, fe.sensor, fe.t);
          ctx.q3 = pose.rotation;
          ctx.t3 = pose.translation;
          chains.emplace(d.frame, std::move(ctx));
        } else {
          chains.emplace(d.frame, corrected_pose_forward(corrections_, s.scene_id, rig_, *s.traj,
                                                         fe.sensor, fe.t));
        }
      }

      // --- build rays --------------------------------------------------------
      const std::size_t n_rays = draws.size();
      std::vector<Ray> rays(n_rays);
      std::vector<Vec3> sensor_dirs(n_rays);
      std::vector<RayTarget> targets(n_rays);
      for (std::size_t i = 0; i < n_rays; ++i) {
        const Draw& d = draws[i];
        const FrameEntry& fe = s.frames[d.frame];
        const PoseChainForward& chain = chains.at(d.frame);
        const Pose pose = chain.pose();
        Ray& ray = rays[i];
        ray.origin = pose.translation;
        ray.near = cfg_.near_m;
        ray.far = cfg_.far_m;
        if (d.is_camera) {
          const Vec3 dir_cam = Vec3((d.x + 0.5 - fe.cx) / fe.fx, (d.y + 0.5 - fe.cy) / fe.fy, 1.0)
                                   .normalized();
          sensor_dirs[i] = dir_cam;
          ray.direction = pose.rotate(dir_cam);
          ray.camera = fe.camera_index;
          targets[i].is_camera = true;
          targets[i].rgb = Eigen::Vector3f(fe.target.at(static_cast<int>(d.y), static_cast<int>(d.x), 0),
                                           fe.target.at(static_cast<int>(d.y), static_cast<int>(d.x), 1),
                                           fe.target.at(static_cast<int>(d.y), static_cast<int>(d.x), 2));
        } else {
          const Vec3 p = fe.frame->scan.points[d.point].cast<double>();
          const double range = p.norm();
          const Vec3 dir_sensor = p / range;
          sensor_dirs[i] = dir_sensor;
          ray.direction = pose.rotate(dir_sensor);
          ray.camera = -1;
          ray.far = std::min(cfg_.far_m, range + cfg_.lidar_far_margin_m);
          targets[i].is_camera = false;
          targets[i].depth = static_cast<float>(range);
        }
      }

      // --- forward renders, per-ray state kept for the backward pass ----------
      std::vector<RenderResult> results(n_rays);
      if (s.ray_caches.size() < n_rays) s.ray_caches.resize(n_rays);
      const std::uint64_t ray_stream_base =
          hash_combine(hash_combine(cfg_.seed, 0x52415953ull + scene_index),
                       static_cast<std::uint64_t>(global_step));
      parallel_chunks(n_rays, 64, cfg_.threads, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          results[i] = render_ray_cached(s.field, rays[i], cfg_.n_samples,
                                         {ray_stream_base, static_cast<std::uint64_t>(i)},
                                         s.ray_caches[i]);
        }
      });

      const LossWeights weights{cfg_.photometric_weight, cfg_.depth_weight};
      const LossResult loss = compute_loss(targets, results, weights);
      s.epoch_photo += loss.photometric;
      s.epoch_depth += loss.depth;
      ++s.epoch_batches;

      // --- backward, committed in chunk order ---------------------------------
      s.grads.set_zero();
      std::map<std::uint32_t, PoseGrad> pose_grads;
      OrderedCommitter committer;
      parallel_chunks(n_rays, 64, cfg_.threads, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        std::vector<RayGradients> local;
        local.reserve(e - b);
        for (std::size_t i = b; i < e; ++i) {
          RayGradients rg;
          render_ray_backward_cached(s.field, rays[i], s.ray_caches[i], results[i],
                                     loss.upstream[i], rg);
          local.push_back(std::move(rg));
        }
        committer.commit(chunk, [&] {
          for (std::size_t i = b; i < e; ++i) {
            const RayGradients& rg = local[i - b];
            s.grads.accumulate(rg);
            if (!options_.frozen_poses) {
              PoseGrad& pg = pose_grads[draws[i].frame];
              pg.translation += rg.origin;
              pg.rotation += rotate_backward_rotation(chains.at(draws[i].frame).q3, sensor_dirs[i],
                                                      rg.direction);
            }
          }
        });
      });

      // --- chain pose gradients into correction parameters --------------------
      CorrectionGradients corr_grads;
      corr_grads.init_like(corrections_);
      if (!options_.frozen_poses) {
        for (const auto& [frame_id, pg] : pose_grads) {
          correction_gradients(corrections_, chains.at(frame_id), pg, corr_grads);
        }
      }

      // --- field update --------------------------------------------------------
      const double lr_f = cosine_lr(cfg_.lr_field, global_step);
      for (int l = 0; l < s.field.levels(); ++l) {
        const double lambda = decay[static_cast<std::size_t>(l)];
        if (lambda != 0.0) {
          const double lambda_density = lambda * cfg_.decay_density_fraction;
          auto& gd = s.grads.density[static_cast<std::size_t>(l)];
          auto& gc = s.grads.color[static_cast<std::size_t>(l)];
          const auto& pd = s.field.density(l);
          const auto& pc = s.field.color(l);
          if (lambda_density != 0.0) {
            parallel_for_each(gd.size(), cfg_.threads,
                              [&](std::size_t i) { gd[i] += lambda_density * pd[i]; });
          }
          parallel_for_each(gc.size(), cfg_.threads,
                            [&](std::size_t i) { gc[i] += lambda * pc[i]; });
        }
        adam_step(s.field.density(l), s.grads.density[static_cast<std::size_t>(l)],
                  s.adam_density[static_cast<std::size_t>(l)], lr_f, {}, cfg_.threads);
        adam_step(s.field.color(l), s.grads.color[static_cast<std::size_t>(l)],
                  s.adam_color[static_cast<std::size_t>(l)], lr_f, {}, cfg_.threads);
      }
      {
        std::array<double, 3> bg_grad = {s.grads.background[0], s.grads.background[1],
                                         s.grads.background[2]};
        std::array<double, 3> bg = {s.field.background_logit()[0], s.field.background_logit()[1],
                                    s.field.background_logit()[2]};
        adam_step(std::span<double>(bg.data(), 3), std::span<const double>(bg_grad.data(), 3),
                  s.adam_background, lr_f);
        s.field.background_logit() = Vec3(bg[0], bg[1], bg[2]);
      }
      if (!s.field.appearance().empty()) {
        std::vector<double> app(3 * s.field.appearance().size());
        std::vector<double> app_grad(app.size());
        for (std::size_t a = 0; a < s.field.appearance().size(); ++a) {
          for (int ch = 0; ch < 3; ++ch) {
            app[3 * a + ch] = s.field.appearance()[a][ch];
            app_grad[3 * a + ch] = s.grads.appearance[a][ch];
          }
        }
        adam_step(app, app_grad, s.adam_appearance, lr_f);
        for (std::size_t a = 0; a < s.field.appearance().size(); ++a) {
          for (int ch = 0; ch < 3; ++ch) s.field.appearance()[a][ch] = app[3 * a + ch];
        }
      }

      // --- trajectory net update ------------------------------------------------
      if (options_.train_trajectory && !warmup) {
        auto& net = corrections_.trajectory_net_mutable(s.scene_id);
        auto it = corr_grads.trajectory.find(s.scene_id);
        if (it != corr_grads.trajectory.end()) {
          adam_step(net.params(), it->second, s.adam_net,
                    cosine_lr(cfg_.lr_trajectory, global_step));
        }
      }

      if (options_.train_extrinsic) {
        scene_ext_grads.push_back(std::move(corr_grads.extrinsic));
      }
    }

    // --- shared extrinsic update (one per step, scenes aggregated) -----------
    if (options_.train_extrinsic && !warmup && !scene_ext_grads.empty()) {
      double step_norm = 0.0;
      for (const auto& [id, corr] : corrections_.extrinsics()) {
        std::vector<Eigen::VectorXd> blocks;
        blocks.reserve(scene_ext_grads.size());
        for (const auto& per_scene : scene_ext_grads) {
          const auto it = per_scene.find(id);
          blocks.push_back(it != per_scene.end() ? Eigen::VectorXd(it->second)
                                                 : Eigen::VectorXd::Zero(6));
        }
        const Eigen::VectorXd mean = aggregate_shared_gradients(blocks);
        step_norm += mean.squaredNorm();
        auto& block = corrections_.extrinsic_mutable(id);
        AdamState& adam = adam_ext_[id];
        std::array<double, 6> p, g;
        for (int j = 0; j < 6; ++j) {
          p[static_cast<std::size_t>(j)] = block.v[j];
          g[static_cast<std::size_t>(j)] = mean[j];
        }
        adam_step(std::span<double>(p.data(), 6), std::span<const double>(g.data(), 6), adam,
                  cosine_lr(cfg_.lr_extrinsic, global_step));
        for (int j = 0; j < 6; ++j) block.v[j] = p[static_cast<std::size_t>(j)];
      }
      ext_grad_norm_ += std::sqrt(step_norm);
    }
  }

  RigCalibration rig_;
  TrainConfig cfg_;
  TrainerOptions options_;
  CorrectionSet corrections_;
  std::vector<std::unique_ptr<SceneState>> scenes_;
  std::map<std::string, AdamState> adam_ext_;
  int steps_per_epoch_ = 0;
  int total_steps_ = 0;
  double ext_grad_norm_ = 0.0;
};

}  // namespace

CalibrationResult run_calibration_stage(const std::vector<const SceneDataset*>& scenes,
                                        const RigCalibration& calib, const TrainConfig& cfg) {
  if (scenes.empty()) throw EmptyListError("calibration stage needs at least one scene");
  TrainerOptions options;
  options.train_extrinsic = true;
  options.train_trajectory = cfg.enable_trajectory_correction;
  Trainer trainer(scenes, calib, cfg, options);
  CalibrationResult result;
  result.summary = trainer.run();
  result.corrections = std::move(trainer.corrections());
  result.fields = trainer.take_fields();
  return result;
}

TrajectoryResult run_trajectory_stage(const SceneDataset& scene, const RigCalibration& calib,
                                      const std::map<std::string, ExtrinsicCorrection>& frozen_ext,
                                      const TrainConfig& cfg) {
  TrainerOptions options;
  options.train_extrinsic = false;
  options.train_trajectory = true;
  Trainer trainer({&scene}, calib, cfg, options);

  // Install the frozen extrinsic corrections; they receive no updates.
  std::map<std::string, Vec6> before;
  for (const auto& [id, corr] : frozen_ext) {
    if (id == calib.reference) continue;
    trainer.corrections().extrinsic_mutable(id).v = corr.v;
    before[id] = corr.v;
  }

  TrajectoryResult result;
  result.summary = trainer.run();
  for (const auto& [id, v] : before) {
    if (trainer.corrections().extrinsic(id).v != v) {
      throw Error("frozen extrinsic correction for '" + id + "' changed during stage 2");
    }
  }
  result.net = trainer.corrections().trajectory_net(scene.scene_id);
  result.field = std::move(trainer.take_fields().front());
  return result;
}

VoxelField train_field_frozen(const SceneDataset& scene, const RigCalibration& rig,
                              const std::vector<TrajectoryKnot>& knots, const TrainConfig& cfg,
                              const FrozenTrainOptions& options) {
  SceneDataset view = scene;  // shallow copy re-pointing the candidate poses
  view.rig = rig;
  view.knots = knots;
  TrainerOptions topt;
  topt.frozen_poses = true;
  topt.camera_only = options.camera_only;
  topt.frame_filter = options.frame_filter;
  Trainer trainer({&view}, rig, cfg, topt);
  trainer.run();
  return std::move(trainer.take_fields().front());
}

}  // namespace rigrefine
