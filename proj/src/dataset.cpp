#include "rigrefine/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "rigrefine/corrections.hpp"
#include "rigrefine/rng.hpp"

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
}  // namespace

void SceneDataset::sort_frames() {
  std::stable_sort(frames.begin(), frames.end(), [](const SensorFrame& a, const SensorFrame& b) {
    if (a.sensor != b.sensor) return a.sensor < b.sensor;
    return a.timestamp < b.timestamp;
  });
}

void SceneDataset::validate() const {
  rig.validate();
  const Trajectory traj = trajectory();
  for (const auto& f : frames) {
    if (!rig.has(f.sensor)) throw UnknownSensorError("frame references unknown sensor '" + f.sensor + "'");
    if (!traj.contains(f.timestamp)) {
      throw TimeOutOfRangeError("frame at t=" + std::to_string(f.timestamp) +
                                " outside trajectory span");
    }
    if (f.kind == SensorKind::Camera) {
      for (float v : f.image.rgb) {
        if (v < 0.0f || v > 1.0f) throw Error("image values must lie in [0, 1]");
      }
    } else {
      for (const auto& p : f.scan.points) {
        const double n = p.cast<double>().norm();
        if (n <= 0.5 || n >= 200.0) {
          throw Error("lidar point norm " + std::to_string(n) + " outside (0.5, 200)");
        }
      }
    }
  }
}

std::vector<const SensorFrame*> SceneDataset::frames_of(const std::string& sensor) const {
  std::vector<const SensorFrame*> out;
  for (const auto& f : frames) {
    if (f.sensor == sensor) out.push_back(&f);
  }
  return out;
}

NoiseSpec NoiseSpec::soac_preset(std::uint64_t seed) {
  NoiseSpec spec;
  spec.extrinsic.translation_m = 0.5;
  spec.extrinsic.rotation_deg = 5.0;
  spec.extrinsic.per_axis = false;
  spec.seed = seed;
  return spec;
}

namespace {

Vec3 random_unit_vector(CounterRng& rng) {
  for (;;) {
    Vec3 v(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const double n = v.norm();
    if (n > 1e-6 && n <= 1.0) return v / n;
  }
}

Pose sample_extrinsic_offset(const NoiseSpec::ExtrinsicNoise& spec, CounterRng& rng) {
  Vec6 v = Vec6::Zero();
  if (spec.per_axis) {
    for (int a = 0; a < 3; ++a) v[a] = rng.uniform(-spec.translation_m, spec.translation_m);
    for (int a = 0; a < 3; ++a) {
      v[3 + a] = rng.uniform(-spec.rotation_deg, spec.rotation_deg) * kDegToRad;
    }
    // Keep the combined axis-angle below the decode limit.
    if (v.tail<3>().norm() >= kPi) v.tail<3>() *= 0.9 * kPi / v.tail<3>().norm();
  } else {
    v.head<3>() = random_unit_vector(rng) * rng.uniform(0.0, spec.translation_m);
    v.tail<3>() = random_unit_vector(rng) * rng.uniform(0.0, spec.rotation_deg * kDegToRad);
  }
  return decode_correction(v);
}

}  // namespace

SceneDataset perturb(const SceneDataset& dataset, const NoiseSpec& noise) {
  if (dataset.provenance != Provenance::SyntheticGt || !dataset.gt) {
    throw NotGroundTruthError("perturb needs a dataset with ground-truth provenance");
  }

  SceneDataset out = dataset;
  out.provenance = Provenance::Perturbed;
  NoiseRecord record;

  CounterRng ext_rng(noise.seed, 0x6578'7472ull);
  for (auto& sensor : out.rig.sensors) {
    if (sensor.id == out.rig.reference) continue;
    const Pose offset = sample_extrinsic_offset(noise.extrinsic, ext_rng);
    record.extrinsic_offsets[sensor.id] = offset;
    sensor.extrinsic = sensor.extrinsic * offset;
  }

  // Smooth low-frequency offsets over arc length plus white per-knot jitter,
  // right-composed in the body frame.
  CounterRng traj_rng(noise.seed, 0x7472'616aull);
  double phase[6];
  for (double& p : phase) p = traj_rng.uniform(0.0, 2.0 * kPi);
  const double amp_t = noise.trajectory.amplitude_m;
  const double amp_r = noise.trajectory.amplitude_deg * kDegToRad;
  const double freq = noise.trajectory.spatial_frequency;

  double arc = 0.0;
  record.knot_offsets.reserve(out.knots.size());
  for (std::size_t i = 0; i < out.knots.size(); ++i) {
    if (i > 0) {
      arc += (dataset.knots[i].pose.translation - dataset.knots[i - 1].pose.translation).norm();
    }
    Vec6 v = Vec6::Zero();
    const double w = 2.0 * kPi * freq * arc;
    for (int a = 0; a < 3; ++a) {
      v[a] = amp_t * std::sin(w + phase[a]) +
             noise.trajectory.jitter_translation_m * traj_rng.next_normal();
      v[3 + a] = amp_r * std::sin(w + phase[3 + a]) +
                 noise.trajectory.jitter_rotation_deg * kDegToRad * traj_rng.next_normal();
    }
    if (v.tail<3>().norm() >= kPi) v.tail<3>() *= 0.9 * kPi / v.tail<3>().norm();
    const Pose offset = decode_correction(v);
    record.knot_offsets.push_back(offset);
    out.knots[i].pose = out.knots[i].pose * offset;
  }

  out.gt->noise = record;
  return out;
}

std::vector<SceneDataset> split_subsequences(const SceneDataset& dataset, double length_m) {
  if (!(length_m > 0.0)) throw Error("subsequence length must be positive");
  const auto& knots = dataset.knots;

  // Cut indices along cumulative arc length.
  std::vector<std::size_t> cut_begin = {0};
  double arc_in_piece = 0.0;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    arc_in_piece += (knots[i].pose.translation - knots[i - 1].pose.translation).norm();
    if (arc_in_piece >= length_m && i + 1 < knots.size()) {
      cut_begin.push_back(i);
      arc_in_piece = 0.0;
    }
  }

  std::vector<SceneDataset> out;
  for (std::size_t piece = 0; piece < cut_begin.size(); ++piece) {
    const std::size_t begin = cut_begin[piece];
    const std::size_t end = piece + 1 < cut_begin.size() ? cut_begin[piece + 1] : knots.size() - 1;

    SceneDataset sub;
    sub.scene_id = dataset.scene_id + "_part" + std::to_string(piece);
    sub.rig = dataset.rig;
    sub.provenance = dataset.provenance;
    sub.knots.assign(knots.begin() + static_cast<std::ptrdiff_t>(begin),
                     knots.begin() + static_cast<std::ptrdiff_t>(end) + 1);

    const double t0 = sub.knots.front().t;
    const double t1 = sub.knots.back().t;
    const bool last_piece = piece + 1 == cut_begin.size();
    for (const auto& f : dataset.frames) {
      // Half-open pieces so no frame is duplicated; the final piece keeps its
      // right endpoint.
      if (f.timestamp >= t0 && (f.timestamp < t1 || (last_piece && f.timestamp <= t1))) {
        sub.frames.push_back(f);
      }
    }

    if (dataset.gt) {
      GroundTruth gt;
      gt.rig = dataset.gt->rig;
      gt.reference = dataset.gt->reference;
      gt.knots.assign(dataset.gt->knots.begin() + static_cast<std::ptrdiff_t>(begin),
                      dataset.gt->knots.begin() + static_cast<std::ptrdiff_t>(end) + 1);
      if (dataset.gt->noise) {
        NoiseRecord rec;
        rec.extrinsic_offsets = dataset.gt->noise->extrinsic_offsets;
        rec.knot_offsets.assign(
            dataset.gt->noise->knot_offsets.begin() + static_cast<std::ptrdiff_t>(begin),
            dataset.gt->noise->knot_offsets.begin() + static_cast<std::ptrdiff_t>(end) + 1);
        gt.noise = std::move(rec);
      }
      for (const auto& track : dataset.gt->tracks) {
        KeypointTrack kept;
        kept.id = track.id;
        for (const auto& ob : track.obs) {
          if (ob.t >= t0 && (ob.t < t1 || (last_piece && ob.t <= t1))) kept.obs.push_back(ob);
        }
        if (kept.obs.size() >= 2) gt.tracks.push_back(std::move(kept));
      }
      sub.gt = std::move(gt);
    }
    out.push_back(std::move(sub));
  }
  return out;
}

namespace {

bool point_in_box(const DynamicBox& box, double margin, const Vec3& p_world) {
  const Vec3 local = box.pose.inverse().apply(p_world);
  const Vec3 bound = margin * box.half_extents;
  return std::abs(local.x()) <= bound.x() && std::abs(local.y()) <= bound.y() &&
         std::abs(local.z()) <= bound.z();
}

// Slab test in the box frame.
bool ray_hits_box(const DynamicBox& box, double margin, const Vec3& origin_world,
                  const Vec3& dir_world, double t_max) {
  const Pose inv = box.pose.inverse();
  const Vec3 o = inv.apply(origin_world);
  const Vec3 d = inv.rotate(dir_world);
  const Vec3 bound = margin * box.half_extents;
  double t0 = 0.0, t1 = t_max;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) {
      if (std::abs(o[a]) > bound[a]) return false;
      continue;
    }
    double lo = (-bound[a] - o[a]) / d[a];
    double hi = (bound[a] - o[a]) / d[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

SceneDataset apply_masks(const SceneDataset& dataset, const BoxProvider& boxes_at,
                         double margin) {
  SceneDataset out = dataset;
  const Trajectory traj = out.trajectory();

  for (auto& frame : out.frames) {
    const std::vector<DynamicBox> boxes = boxes_at ? boxes_at(frame.timestamp)
                                                   : std::vector<DynamicBox>{};
    if (boxes.empty()) continue;
    const Pose pose = sensor_pose(out.rig, traj, frame.sensor, frame.timestamp);

    if (frame.kind == SensorKind::Camera) {
      const auto& intr = out.rig.sensor(frame.sensor).intrinsics;
      if (!intr) throw MissingIntrinsicsError("camera frame without intrinsics");
      Mask mask = frame.mask ? *frame.mask : Mask::clear(frame.image.width, frame.image.height);
      for (int y = 0; y < frame.image.height; ++y) {
        for (int x = 0; x < frame.image.width; ++x) {
          if (mask.at(y, x)) continue;
          const Vec3 dir_cam((x + 0.5 - intr->cx) / intr->fx, (y + 0.5 - intr->cy) / intr->fy, 1.0);
          const Vec3 dir_world = pose.rotate(dir_cam.normalized());
          for (const auto& box : boxes) {
            if (ray_hits_box(box, margin, pose.translation, dir_world, 300.0)) {
              mask.set(y, x, true);
              break;
            }
          }
        }
      }
      frame.mask = std::move(mask);
    } else {
      LidarScan kept;
      kept.points.reserve(frame.scan.points.size());
      for (const auto& pf : frame.scan.points) {
        const Vec3 p_world = pose.apply(pf.cast<double>());
        bool inside = false;
        for (const auto& box : boxes) {
          if (point_in_box(box, margin, p_world)) {
            inside = true;
            break;
          }
        }
        if (!inside) kept.points.push_back(pf);
      }
      frame.scan = std::move(kept);
    }
  }
  return out;
}

}  // namespace rigrefine
