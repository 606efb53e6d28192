#pragma once

#include <filesystem>

#include "rigrefine/dataset.hpp"

namespace rigrefine {

// On-disk dataset layout:
//   rig.json                          sensors, kinds, extrinsics, intrinsics, reference
//   trajectory.csv                    t,tx,ty,tz,qw,qx,qy,qz (17 significant digits)
//   frames/<sensor>/<t>.ppm           P6 8-bit camera image
//   frames/<sensor>/<t>.mask.pgm      P5 dynamic mask, 255 = dynamic (optional)
//   frames/<sensor>/<t>.lpc           "LPC1", u32 count, count x 3 float32 (LE)
//   gt/rig.json, gt/trajectory.csv    unperturbed values (synthetic datasets)
//   gt/tracks.json                    keypoint tracks (synthetic datasets)
//   gt/noise.json                     injected offsets (perturbed datasets)
// Timestamps embed in file names with 17 significant digits so they parse
// back bit-identically.

void write_dataset(const SceneDataset& dataset, const std::filesystem::path& dir);
SceneDataset read_dataset(const std::filesystem::path& dir);

void write_rig_json(const RigCalibration& rig, const std::filesystem::path& path);
RigCalibration read_rig_json(const std::filesystem::path& path);

void write_trajectory_csv(const std::vector<TrajectoryKnot>& knots,
                          const std::filesystem::path& path);
std::vector<TrajectoryKnot> read_trajectory_csv(const std::filesystem::path& path);

void write_tracks_json(const std::vector<KeypointTrack>& tracks,
                       const std::filesystem::path& path);
std::vector<KeypointTrack> read_tracks_json(const std::filesystem::path& path);

void write_noise_json(const NoiseRecord& record, const std::filesystem::path& path);
NoiseRecord read_noise_json(const std::filesystem::path& path);

void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
void write_mask_pgm(const Mask& mask, const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);
void write_lpc(const LidarScan& scan, const std::filesystem::path& path);
LidarScan read_lpc(const std::filesystem::path& path);

std::string format_timestamp(double t);

}  // namespace rigrefine
