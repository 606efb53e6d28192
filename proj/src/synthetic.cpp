#include "rigrefine/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "rigrefine/parallel.hpp"
#include "rigrefine/rng.hpp"

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;

Vec3 random_color(CounterRng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

Vec3 random_direction(CounterRng& rng) {
  for (;;) {
    Vec3 v(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

void assign_texture(SyntheticWorld::Primitive& prim, CounterRng& rng, double base_freq) {
  prim.base_color = random_color(rng, 0.25, 0.75);
  for (int k = 0; k < 3; ++k) {
    prim.pattern_dir[k] = random_direction(rng);
    prim.pattern_amp[k] = random_color(rng, 0.04, 0.20);
    if (rng.next_double() < 0.5) prim.pattern_amp[k] *= -1.0;
    prim.pattern_freq[k] = base_freq * std::pow(2.0, rng.uniform(-0.8, 1.2));
    prim.pattern_phase[k] = rng.uniform(0.0, 2.0 * kPi);
  }
}

}  // namespace

SyntheticWorld SyntheticWorld::generate(const WorldSpec& spec, std::uint64_t seed) {
  SyntheticWorld world;
  CounterRng rng(seed, 0x776f'726cull);

  // Primitives line the driven path: x spans the path with margins, y the
  // lateral region. The ground plane is finite so rays past the scene edge
  // see sky and the reconstruction volume stays bounded.
  const double r = spec.region_half_extent_m;
  const double x_lo = -0.35 * r;
  const double x_hi = spec.path_length_m + 0.35 * r;

  Primitive ground;
  ground.kind = PrimitiveKind::Ground;
  assign_texture(ground, rng, 0.6 * spec.texture_frequency);
  ground.base_color = Vec3(0.45, 0.42, 0.38);
  ground.half_extents = Vec3(0.5 * (x_hi - x_lo) + r, 2.0 * r, 1.0);
  ground.center = Vec3(0.5 * (x_lo + x_hi), 0.0, 0.0);
  world.primitives_.push_back(ground);

  const auto scatter_xy = [&](Primitive& p) {
    p.center.x() = rng.uniform(x_lo, x_hi);
    // Keep a corridor free around the path centerline.
    const double side = rng.next_double() < 0.5 ? -1.0 : 1.0;
    p.center.y() = side * rng.uniform(5.0, r);
  };
  for (int i = 0; i < spec.boxes; ++i) {
    Primitive p;
    p.kind = PrimitiveKind::Box;
    p.half_extents = Vec3(rng.uniform(spec.min_size_m, spec.max_size_m),
                          rng.uniform(spec.min_size_m, spec.max_size_m),
                          rng.uniform(spec.min_size_m, 1.8 * spec.max_size_m));
    scatter_xy(p);
    p.center.z() = p.half_extents.z();
    p.yaw = rng.uniform(0.0, 2.0 * kPi);
    assign_texture(p, rng, spec.texture_frequency);
    world.primitives_.push_back(p);
  }
  for (int i = 0; i < spec.cylinders; ++i) {
    Primitive p;
    p.kind = PrimitiveKind::Cylinder;
    p.radius = rng.uniform(0.5 * spec.min_size_m, 0.6 * spec.max_size_m);
    const double half_h = rng.uniform(spec.min_size_m, 2.2 * spec.max_size_m);
    p.half_extents = Vec3(p.radius, p.radius, half_h);
    scatter_xy(p);
    p.center.z() = half_h;
    assign_texture(p, rng, spec.texture_frequency);
    world.primitives_.push_back(p);
  }
  for (int i = 0; i < spec.spheres; ++i) {
    Primitive p;
    p.kind = PrimitiveKind::Sphere;
    p.radius = rng.uniform(0.6 * spec.min_size_m, 0.8 * spec.max_size_m);
    scatter_xy(p);
    p.center.z() = rng.uniform(p.radius, 3.0 * p.radius);
    assign_texture(p, rng, spec.texture_frequency);
    world.primitives_.push_back(p);
  }

  // Landmarks: points on primitive surfaces.
  CounterRng lm_rng(seed, 0x6c61'6e64ull);
  world.landmarks_.reserve(static_cast<std::size_t>(spec.landmarks));
  while (static_cast<int>(world.landmarks_.size()) < spec.landmarks) {
    const std::size_t pick = 1 + lm_rng.next_below(world.primitives_.size() - 1);
    const Primitive& p = world.primitives_[pick];
    Vec3 point;
    switch (p.kind) {
      case PrimitiveKind::Box: {
        // Random face.
        Vec3 local(lm_rng.uniform(-1.0, 1.0), lm_rng.uniform(-1.0, 1.0),
                   lm_rng.uniform(-1.0, 1.0));
        const int axis = static_cast<int>(lm_rng.next_below(3));
        local[axis] = lm_rng.next_double() < 0.5 ? -1.0 : 1.0;
        const Vec3 scaled = local.cwiseProduct(p.half_extents);
        const double c = std::cos(p.yaw), s = std::sin(p.yaw);
        point = p.center + Vec3(c * scaled.x() - s * scaled.y(),
                                s * scaled.x() + c * scaled.y(), scaled.z());
        break;
      }
      case PrimitiveKind::Cylinder: {
        const double a = lm_rng.uniform(0.0, 2.0 * kPi);
        const double z = lm_rng.uniform(-p.half_extents.z(), p.half_extents.z());
        point = p.center + Vec3(p.radius * std::cos(a), p.radius * std::sin(a), z);
        break;
      }
      case PrimitiveKind::Sphere: {
        point = p.center + p.radius * random_direction(lm_rng);
        break;
      }
      case PrimitiveKind::Ground:
        continue;
    }
    if (point.z() < 0.05) continue;
    world.landmarks_.push_back(point);
  }
  return world;
}

Vec3 SyntheticWorld::shade(const Primitive& prim, const Vec3& point, const Vec3& normal) const {
  Vec3 albedo = prim.base_color;
  for (int k = 0; k < 3; ++k) {
    const double s =
        std::sin(prim.pattern_freq[k] * prim.pattern_dir[k].dot(point) + prim.pattern_phase[k]);
    albedo += prim.pattern_amp[k] * s;
  }
  const double light = 0.45 + 0.55 * std::max(0.0, normal.dot(sun_dir_));
  Vec3 c = albedo * light;
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

std::optional<SyntheticWorld::Hit> SyntheticWorld::raycast(const Vec3& origin, const Vec3& dir,
                                                           double t_min, double t_max) const {
  Hit best;
  best.t = t_max;
  bool found = false;

  for (std::size_t i = 0; i < primitives_.size(); ++i) {
    const Primitive& p = primitives_[i];
    switch (p.kind) {
      case PrimitiveKind::Ground: {
        if (std::abs(dir.z()) < 1e-12) break;
        const double t = -origin.z() / dir.z();
        if (t > t_min && t < best.t) {
          const Vec3 hit = origin + t * dir;
          if (std::abs(hit.x() - p.center.x()) > p.half_extents.x() ||
              std::abs(hit.y() - p.center.y()) > p.half_extents.y()) {
            break;
          }
          best.t = t;
          best.point = hit;
          best.normal = Vec3::UnitZ();
          best.primitive = static_cast<int>(i);
          found = true;
        }
        break;
      }
      case PrimitiveKind::Sphere: {
        const Vec3 oc = origin - p.center;
        const double b = oc.dot(dir);
        const double c = oc.squaredNorm() - p.radius * p.radius;
        const double disc = b * b - c;
        if (disc < 0.0) break;
        const double sq = std::sqrt(disc);
        for (double t : {-b - sq, -b + sq}) {
          if (t > t_min && t < best.t) {
            best.t = t;
            best.point = origin + t * dir;
            best.normal = (best.point - p.center).normalized();
            best.primitive = static_cast<int>(i);
            found = true;
            break;
          }
        }
        break;
      }
      case PrimitiveKind::Cylinder: {
        const double ox = origin.x() - p.center.x();
        const double oy = origin.y() - p.center.y();
        const double a = dir.x() * dir.x() + dir.y() * dir.y();
        // Side surface.
        if (a > 1e-12) {
          const double b = ox * dir.x() + oy * dir.y();
          const double c = ox * ox + oy * oy - p.radius * p.radius;
          const double disc = b * b - a * c;
          if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / a, (-b + sq) / a}) {
              if (t <= t_min || t >= best.t) continue;
              const Vec3 hit = origin + t * dir;
              if (std::abs(hit.z() - p.center.z()) > p.half_extents.z()) continue;
              best.t = t;
              best.point = hit;
              best.normal = Vec3(hit.x() - p.center.x(), hit.y() - p.center.y(), 0.0).normalized();
              best.primitive = static_cast<int>(i);
              found = true;
              break;
            }
          }
        }
        // Caps.
        if (std::abs(dir.z()) > 1e-12) {
          for (double zcap : {p.center.z() - p.half_extents.z(), p.center.z() + p.half_extents.z()}) {
            const double t = (zcap - origin.z()) / dir.z();
            if (t <= t_min || t >= best.t) continue;
            const Vec3 hit = origin + t * dir;
            const double dx = hit.x() - p.center.x();
            const double dy = hit.y() - p.center.y();
            if (dx * dx + dy * dy > p.radius * p.radius) continue;
            best.t = t;
            best.point = hit;
            best.normal = Vec3(0.0, 0.0, zcap > p.center.z() ? 1.0 : -1.0);
            best.primitive = static_cast<int>(i);
            found = true;
          }
        }
        break;
      }
      case PrimitiveKind::Box: {
        const double c = std::cos(p.yaw), s = std::sin(p.yaw);
        const Vec3 rel = origin - p.center;
        // Rotate into the box frame (inverse yaw).
        const Vec3 o(c * rel.x() + s * rel.y(), -s * rel.x() + c * rel.y(), rel.z());
        const Vec3 d(c * dir.x() + s * dir.y(), -s * dir.x() + c * dir.y(), dir.z());
        double t0 = t_min, t1 = best.t;
        int hit_axis = -1;
        double hit_sign = 1.0;
        bool ok = true;
        for (int axis = 0; axis < 3; ++axis) {
          if (std::abs(d[axis]) < 1e-12) {
            if (std::abs(o[axis]) > p.half_extents[axis]) {
              ok = false;
              break;
            }
            continue;
          }
          double lo = (-p.half_extents[axis] - o[axis]) / d[axis];
          double hi = (p.half_extents[axis] - o[axis]) / d[axis];
          double sign = -1.0;
          if (lo > hi) {
            std::swap(lo, hi);
            sign = 1.0;
          }
          if (lo > t0) {
            t0 = lo;
            hit_axis = axis;
            hit_sign = sign;
          }
          t1 = std::min(t1, hi);
          if (t0 > t1) {
            ok = false;
            break;
          }
        }
        if (!ok || hit_axis < 0 || t0 <= t_min || t0 >= best.t) break;
        best.t = t0;
        best.point = origin + t0 * dir;
        Vec3 n_local = Vec3::Zero();
        n_local[hit_axis] = hit_sign;
        best.normal = Vec3(c * n_local.x() - s * n_local.y(),
                           s * n_local.x() + c * n_local.y(), n_local.z());
        best.primitive = static_cast<int>(i);
        found = true;
        break;
      }
    }
  }

  if (!found) return std::nullopt;
  best.color = shade(primitives_[static_cast<std::size_t>(best.primitive)], best.point, best.normal);
  return best;
}

std::vector<TrajectoryKnot> generate_trajectory(const TrajectorySpec& spec, std::uint64_t seed) {
  CounterRng rng(seed, 0x7472'616aull);
  const double phase_y = rng.uniform(0.0, 2.0 * kPi);
  const double phase_roll = rng.uniform(0.0, 2.0 * kPi);
  const double phase_pitch = rng.uniform(0.0, 2.0 * kPi);

  const int n = std::max(2, static_cast<int>(std::round(spec.duration_s * spec.knot_rate_hz)) + 1);
  const double dt = spec.duration_s / (n - 1);
  const double w = 2.0 * kPi / spec.lateral_wavelength_m;

  std::vector<TrajectoryKnot> knots;
  knots.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    const double s = spec.speed_mps * t;
    TrajectoryKnot k;
    k.t = t;
    const double y = spec.lateral_amplitude_m * std::sin(w * s + phase_y);
    const double dy_ds = spec.lateral_amplitude_m * w * std::cos(w * s + phase_y);
    k.pose.translation = Vec3(s, y, spec.height_m);

    const double yaw = std::atan2(dy_ds, 1.0);
    const double roll = spec.roll_pitch_amplitude_deg * kDegToRad * std::sin(0.6 * w * s + phase_roll);
    const double pitch =
        spec.roll_pitch_amplitude_deg * kDegToRad * std::sin(0.8 * w * s + phase_pitch);
    k.pose.rotation = rodrigues_exp(Vec3(0.0, 0.0, yaw)) * rodrigues_exp(Vec3(0.0, pitch, 0.0)) *
                      rodrigues_exp(Vec3(roll, 0.0, 0.0));
    knots.push_back(k);
  }
  return knots;
}

RigCalibration default_rig(const RigSpec& spec) {
  RigCalibration rig;
  rig.reference = "lidar_top";

  SensorInfo lidar;
  lidar.id = "lidar_top";
  lidar.kind = SensorKind::Lidar;
  rig.sensors.push_back(lidar);

  CameraIntrinsics intr;
  intr.width = spec.image_width;
  intr.height = spec.image_height;
  const double f = 0.5 * spec.image_width / std::tan(0.5 * spec.hfov_deg * kDegToRad);
  intr.fx = f;
  intr.fy = f;
  intr.cx = 0.5 * spec.image_width;
  intr.cy = 0.5 * spec.image_height;

  // Camera axes in the vehicle frame: z forward, x right, y down.
  Eigen::Matrix3d cam_to_vehicle;
  cam_to_vehicle.col(0) = Vec3(0.0, -1.0, 0.0);
  cam_to_vehicle.col(1) = Vec3(0.0, 0.0, -1.0);
  cam_to_vehicle.col(2) = Vec3(1.0, 0.0, 0.0);
  const Quat base(cam_to_vehicle);

  struct Mount {
    const char* id;
    double yaw_deg;
    Vec3 offset;
  };
  const Mount mounts[] = {
      {"cam_front", 0.0, Vec3(1.2, 0.0, spec.camera_height_m - 0.3)},
      {"cam_left", 90.0, Vec3(0.2, 0.7, spec.camera_height_m - 0.3)},
      {"cam_right", -90.0, Vec3(0.2, -0.7, spec.camera_height_m - 0.3)},
      {"cam_rear", 180.0, Vec3(-1.2, 0.0, spec.camera_height_m - 0.3)},
  };
  for (const Mount& m : mounts) {
    SensorInfo cam;
    cam.id = m.id;
    cam.kind = SensorKind::Camera;
    cam.intrinsics = intr;
    const double yaw = m.yaw_deg * kDegToRad;
    const Quat spin(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
    cam.extrinsic.rotation = spin * base;
    cam.extrinsic.translation = m.offset;
    rig.sensors.push_back(cam);
  }
  return rig;
}

SceneDataset capture(const SyntheticWorld& world, const RigCalibration& rig,
                     const std::vector<TrajectoryKnot>& knots, const CaptureSpec& spec,
                     const std::string& scene_id) {
  rig.validate();
  const Trajectory traj(knots, rig.reference);

  SceneDataset out;
  out.scene_id = scene_id;
  out.rig = rig;
  out.knots = knots;
  out.provenance = Provenance::SyntheticGt;

  // Frame schedule per sensor.
  struct Job {
    std::string sensor;
    double t;
    SensorKind kind;
  };
  std::vector<Job> jobs;
  const double span = traj.t_max() - traj.t_min();
  for (const auto& sensor : rig.sensors) {
    const double rate =
        sensor.kind == SensorKind::Camera ? spec.camera_rate_hz : spec.lidar_rate_hz;
    const int count = std::max(1, static_cast<int>(std::floor(span * rate)));
    for (int i = 0; i < count; ++i) {
      // Offset half a period so frames stay strictly inside the span.
      const double t = traj.t_min() + (i + 0.5) / rate;
      if (t > traj.t_max()) break;
      jobs.push_back({sensor.id, t, sensor.kind});
    }
  }

  std::vector<SensorFrame> frames(jobs.size());
  parallel_chunks(jobs.size(), 1, spec.threads, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const Job& job = jobs[j];
      SensorFrame frame;
      frame.sensor = job.sensor;
      frame.timestamp = job.t;
      frame.kind = job.kind;
      const Pose pose = sensor_pose(rig, traj, job.sensor, job.t);

      if (job.kind == SensorKind::Camera) {
        const CameraIntrinsics& intr = *rig.sensor(job.sensor).intrinsics;
        Image img = Image::zeros(intr.width, intr.height);
        for (int y = 0; y < intr.height; ++y) {
          for (int x = 0; x < intr.width; ++x) {
            const Vec3 dir_cam((x + 0.5 - intr.cx) / intr.fx, (y + 0.5 - intr.cy) / intr.fy, 1.0);
            const Vec3 dir = pose.rotate(dir_cam.normalized());
            const auto hit = world.raycast(pose.translation, dir, spec.camera_near_m,
                                           spec.camera_far_m);
            const Vec3 c = hit ? hit->color : world.sky_color();
            img.at(y, x, 0) = static_cast<float>(c.x());
            img.at(y, x, 1) = static_cast<float>(c.y());
            img.at(y, x, 2) = static_cast<float>(c.z());
          }
        }
        frame.image = std::move(img);
      } else {
        LidarScan scan;
        scan.points.reserve(static_cast<std::size_t>(spec.lidar_rings) * spec.lidar_azimuth_steps);
        for (int ring = 0; ring < spec.lidar_rings; ++ring) {
          const double el =
              (spec.lidar_elevation_min_deg +
               (spec.lidar_elevation_max_deg - spec.lidar_elevation_min_deg) *
                   (spec.lidar_rings == 1 ? 0.5 : static_cast<double>(ring) / (spec.lidar_rings - 1))) *
              kDegToRad;
          for (int step = 0; step < spec.lidar_azimuth_steps; ++step) {
            const double az = 2.0 * kPi * step / spec.lidar_azimuth_steps;
            const Vec3 dir_sensor(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                  std::sin(el));
            const Vec3 dir_world = pose.rotate(dir_sensor);
            const auto hit = world.raycast(pose.translation, dir_world, spec.lidar_min_range_m,
                                           spec.lidar_max_range_m);
            if (!hit) continue;
            const double range = hit->t;
            if (range <= 0.5 || range >= 200.0) continue;
            scan.points.push_back((range * dir_sensor).cast<float>());
          }
        }
        frame.scan = std::move(scan);
      }
      frames[j] = std::move(frame);
    }
  });
  out.frames = std::move(frames);
  out.sort_frames();

  // Keypoint tracks: exact projections of world landmarks with world-tested
  // visibility.
  GroundTruth gt;
  gt.rig = rig;
  gt.knots = knots;
  gt.reference = rig.reference;
  int next_track = 0;
  for (const Vec3& landmark : world.landmarks()) {
    KeypointTrack track;
    track.id = next_track;
    for (const auto& frame : out.frames) {
      if (frame.kind != SensorKind::Camera) continue;
      if (static_cast<int>(track.obs.size()) >= spec.max_track_length) break;
      const CameraIntrinsics& intr = *rig.sensor(frame.sensor).intrinsics;
      const Pose pose = sensor_pose(rig, traj, frame.sensor, frame.timestamp);
      const Vec3 local = pose.inverse().apply(landmark);
      if (local.z() < 0.3) continue;
      const double u = intr.fx * local.x() / local.z() + intr.cx;
      const double v = intr.fy * local.y() / local.z() + intr.cy;
      if (u < 1.0 || v < 1.0 || u > intr.width - 1.0 || v > intr.height - 1.0) continue;
      // Occlusion: the landmark must be the first surface along the view ray.
      const Vec3 to_lm = landmark - pose.translation;
      const double dist = to_lm.norm();
      const auto hit = world.raycast(pose.translation, to_lm / dist, 1e-4, dist + 1.0);
      if (!hit || hit->t < dist - 1e-4) continue;
      track.obs.push_back({frame.sensor, frame.timestamp, {u, v}});
    }
    if (track.obs.size() >= 2) {
      gt.tracks.push_back(std::move(track));
      ++next_track;
    }
  }
  out.gt = std::move(gt);
  return out;
}

}  // namespace rigrefine
