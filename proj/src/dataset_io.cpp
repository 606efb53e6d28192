#include "rigrefine/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace rigrefine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

json pose_to_json(const Pose& p) {
  return json{{"rotation_wxyz",
               {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
              {"translation_m", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

Pose pose_from_json(const json& j) {
  Pose p;
  const auto& q = j.at("rotation_wxyz");
  p.rotation = Quat(q.at(0).get<double>(), q.at(1).get<double>(), q.at(2).get<double>(),
                    q.at(3).get<double>());
  const auto& t = j.at("translation_m");
  p.translation = Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
  return p;
}

}  // namespace

std::string format_timestamp(double t) { return format_g17(t); }

void write_rig_json(const RigCalibration& rig, const fs::path& path) {
  json sensors = json::array();
  for (const auto& s : rig.sensors) {
    json entry = pose_to_json(s.extrinsic);
    entry["id"] = s.id;
    entry["kind"] = s.kind == SensorKind::Camera ? "camera" : "lidar";
    if (s.intrinsics) {
      entry["intrinsics"] = {{"fx", s.intrinsics->fx}, {"fy", s.intrinsics->fy},
                             {"cx", s.intrinsics->cx}, {"cy", s.intrinsics->cy},
                             {"width", s.intrinsics->width}, {"height", s.intrinsics->height}};
    }
    sensors.push_back(std::move(entry));
  }
  const json doc{{"version", 1}, {"reference", rig.reference}, {"sensors", sensors}};
  write_text(path, doc.dump(2) + "\n");
}

RigCalibration read_rig_json(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError("invalid JSON in '" + path.string() + "': " + e.what());
  }
  RigCalibration rig;
  rig.reference = doc.at("reference").get<std::string>();
  for (const auto& entry : doc.at("sensors")) {
    SensorInfo s;
    s.id = entry.at("id").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    if (kind == "camera") {
      s.kind = SensorKind::Camera;
    } else if (kind == "lidar") {
      s.kind = SensorKind::Lidar;
    } else {
      throw IoError("unknown sensor kind '" + kind + "' in '" + path.string() + "'");
    }
    s.extrinsic = pose_from_json(entry);
    if (entry.contains("intrinsics")) {
      const auto& ij = entry.at("intrinsics");
      CameraIntrinsics intr;
      intr.fx = ij.at("fx").get<double>();
      intr.fy = ij.at("fy").get<double>();
      intr.cx = ij.at("cx").get<double>();
      intr.cy = ij.at("cy").get<double>();
      intr.width = ij.at("width").get<int>();
      intr.height = ij.at("height").get<int>();
      s.intrinsics = intr;
    }
    rig.sensors.push_back(std::move(s));
  }
  rig.validate();
  return rig;
}

void write_trajectory_csv(const std::vector<TrajectoryKnot>& knots, const fs::path& path) {
  std::string out = "t,tx,ty,tz,qw,qx,qy,qz\n";
  for (const auto& k : knots) {
    out += format_g17(k.t);
    for (double v : {k.pose.translation.x(), k.pose.translation.y(), k.pose.translation.z(),
                     k.pose.rotation.w(), k.pose.rotation.x(), k.pose.rotation.y(),
                     k.pose.rotation.z()}) {
      out += ',';
      out += format_g17(v);
    }
    out += '\n';
  }
  write_text(path, out);
}

std::vector<TrajectoryKnot> read_trajectory_csv(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<TrajectoryKnot> knots;
  std::size_t pos = text.find('\n');
  if (pos == std::string::npos) throw IoError("empty trajectory file '" + path.string() + "'");
  if (text.substr(0, pos) != "t,tx,ty,tz,qw,qx,qy,qz") {
    throw IoError("bad trajectory header in '" + path.string() + "'");
  }
  ++pos;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    double v[8];
    int field = 0;
    std::size_t start = 0;
    while (field < 8) {
      std::size_t comma = line.find(',', start);
      const std::string tok =
          line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      try {
        v[field] = std::stod(tok);
      } catch (...) {
        throw IoError("bad number '" + tok + "' in '" + path.string() + "'");
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != 8) throw IoError("short row in '" + path.string() + "'");
    TrajectoryKnot k;
    k.t = v[0];
    k.pose.translation = Vec3(v[1], v[2], v[3]);
    k.pose.rotation = Quat(v[4], v[5], v[6], v[7]);
    knots.push_back(k);
  }
  return knots;
}

void write_tracks_json(const std::vector<KeypointTrack>& tracks, const fs::path& path) {
  json arr = json::array();
  for (const auto& track : tracks) {
    json obs = json::array();
    for (const auto& ob : track.obs) {
      obs.push_back({{"sensor", ob.sensor}, {"t", ob.t}, {"u", ob.uv.x()}, {"v", ob.uv.y()}});
    }
    arr.push_back({{"id", track.id}, {"obs", std::move(obs)}});
  }
  write_text(path, json{{"version", 1}, {"tracks", arr}}.dump() + "\n");
}

std::vector<KeypointTrack> read_tracks_json(const fs::path& path) {
  const json doc = json::parse(read_text(path));
  std::vector<KeypointTrack> tracks;
  for (const auto& tj : doc.at("tracks")) {
    KeypointTrack track;
    track.id = tj.at("id").get<int>();
    for (const auto& oj : tj.at("obs")) {
      KeypointObservation ob;
      ob.sensor = oj.at("sensor").get<std::string>();
      ob.t = oj.at("t").get<double>();
      ob.uv = Eigen::Vector2d(oj.at("u").get<double>(), oj.at("v").get<double>());
      track.obs.push_back(std::move(ob));
    }
    tracks.push_back(std::move(track));
  }
  return tracks;
}

void write_noise_json(const NoiseRecord& record, const fs::path& path) {
  json ext = json::object();
  for (const auto& [id, pose] : record.extrinsic_offsets) ext[id] = pose_to_json(pose);
  json knots = json::array();
  for (const auto& pose : record.knot_offsets) knots.push_back(pose_to_json(pose));
  write_text(path, json{{"version", 1}, {"extrinsic", ext}, {"knots", knots}}.dump() + "\n");
}

NoiseRecord read_noise_json(const fs::path& path) {
  const json doc = json::parse(read_text(path));
  NoiseRecord record;
  for (const auto& [id, pj] : doc.at("extrinsic").items()) {
    record.extrinsic_offsets[id] = pose_from_json(pj);
  }
  for (const auto& pj : doc.at("knots")) record.knot_offsets.push_back(pose_from_json(pj));
  return record;
}

void write_ppm(const Image& image, const fs::path& path) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.reserve(out.size() + image.rgb.size());
  for (float v : image.rgb) {
    const int q = static_cast<int>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  write_text(path, out);
}

namespace {

// Parses "P6\n<w> <h>\n<max>\n" style headers with arbitrary whitespace.
struct PnmHeader {
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::string& data, const char* magic, const fs::path& path) {
  if (data.size() < 2 || data[0] != magic[0] || data[1] != magic[1]) {
    throw IoError("'" + path.string() + "' is not a " + magic + " file");
  }
  std::size_t pos = 2;
  int values[3];
  for (int& value : values) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    std::size_t end = pos;
    while (end < data.size() && !std::isspace(static_cast<unsigned char>(data[end]))) ++end;
    if (pos == end) throw IoError("truncated header in '" + path.string() + "'");
    value = std::stoi(data.substr(pos, end - pos));
    pos = end;
  }
  if (pos >= data.size()) throw IoError("truncated header in '" + path.string() + "'");
  ++pos;  // single whitespace after maxval
  PnmHeader h;
  h.width = values[0];
  h.height = values[1];
  h.maxval = values[2];
  h.data_offset = pos;
  return h;
}

}  // namespace

Image read_ppm(const fs::path& path) {
  const std::string data = read_text(path);
  const PnmHeader h = parse_pnm_header(data, "P6", path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height * 3;
  if (data.size() - h.data_offset < need) throw IoError("truncated pixels in '" + path.string() + "'");
  Image img = Image::zeros(h.width, h.height);
  for (std::size_t i = 0; i < need; ++i) {
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(data[h.data_offset + i])) / 255.0f;
  }
  return img;
}

void write_mask_pgm(const Mask& mask, const fs::path& path) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) +
                    "\n255\n";
  out.reserve(out.size() + mask.dynamic.size());
  for (std::uint8_t v : mask.dynamic) out.push_back(static_cast<char>(v ? 255 : 0));
  write_text(path, out);
}

Mask read_mask_pgm(const fs::path& path) {
  const std::string data = read_text(path);
  const PnmHeader h = parse_pnm_header(data, "P5", path);
  const std::size_t need = static_cast<std::size_t>(h.width) * h.height;
  if (data.size() - h.data_offset < need) throw IoError("truncated mask in '" + path.string() + "'");
  Mask mask = Mask::clear(h.width, h.height);
  for (std::size_t i = 0; i < need; ++i) {
    mask.dynamic[i] = static_cast<unsigned char>(data[h.data_offset + i]) >= 128 ? 1 : 0;
  }
  return mask;
}

void write_lpc(const LidarScan& scan, const fs::path& path) {
  std::string out = "LPC1";
  const std::uint32_t count = static_cast<std::uint32_t>(scan.points.size());
  char buf[4];
  std::memcpy(buf, &count, 4);
  out.append(buf, 4);
  const std::size_t off = out.size();
  out.resize(off + static_cast<std::size_t>(count) * 12);
  std::memcpy(out.data() + off, scan.points.data(), static_cast<std::size_t>(count) * 12);
  write_text(path, out);
}

LidarScan read_lpc(const fs::path& path) {
  const std::string data = read_text(path);
  if (data.size() < 8 || data.compare(0, 4, "LPC1") != 0) {
    throw IoError("'" + path.string() + "' is not an LPC1 file");
  }
  std::uint32_t count;
  std::memcpy(&count, data.data() + 4, 4);
  if (data.size() < 8 + static_cast<std::size_t>(count) * 12) {
    throw IoError("truncated point data in '" + path.string() + "'");
  }
  LidarScan scan;
  scan.points.resize(count);
  std::memcpy(scan.points.data(), data.data() + 8, static_cast<std::size_t>(count) * 12);
  return scan;
}

void write_dataset(const SceneDataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "frames");
  write_rig_json(dataset.rig, dir / "rig.json");
  write_trajectory_csv(dataset.knots, dir / "trajectory.csv");

  for (const auto& frame : dataset.frames) {
    const fs::path sensor_dir = dir / "frames" / frame.sensor;
    fs::create_directories(sensor_dir);
    const std::string stamp = format_timestamp(frame.timestamp);
    if (frame.kind == SensorKind::Camera) {
      write_ppm(frame.image, sensor_dir / (stamp + ".ppm"));
      if (frame.mask) write_mask_pgm(*frame.mask, sensor_dir / (stamp + ".mask.pgm"));
    } else {
      write_lpc(frame.scan, sensor_dir / (stamp + ".lpc"));
    }
  }

  if (dataset.gt) {
    fs::create_directories(dir / "gt");
    write_rig_json(dataset.gt->rig, dir / "gt" / "rig.json");
    write_trajectory_csv(dataset.gt->knots, dir / "gt" / "trajectory.csv");
    write_tracks_json(dataset.gt->tracks, dir / "gt" / "tracks.json");
    if (dataset.gt->noise) write_noise_json(*dataset.gt->noise, dir / "gt" / "noise.json");
  }
}

SceneDataset read_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "rig.json")) throw IoError("no rig.json under '" + dir.string() + "'");
  SceneDataset dataset;
  dataset.scene_id = dir.filename().string();
  dataset.rig = read_rig_json(dir / "rig.json");
  dataset.knots = read_trajectory_csv(dir / "trajectory.csv");

  const fs::path frames_dir = dir / "frames";
  if (fs::exists(frames_dir)) {
    for (const auto& sensor_entry : fs::directory_iterator(frames_dir)) {
      if (!sensor_entry.is_directory()) continue;
      const std::string sensor = sensor_entry.path().filename().string();
      const SensorInfo& info = dataset.rig.sensor(sensor);
      for (const auto& file : fs::directory_iterator(sensor_entry.path())) {
        const std::string name = file.path().filename().string();
        SensorFrame frame;
        frame.sensor = sensor;
        frame.kind = info.kind;
        if (name.size() > 4 && name.ends_with(".ppm")) {
          frame.timestamp = std::stod(name.substr(0, name.size() - 4));
          frame.image = read_ppm(file.path());
          const fs::path mask_path =
              file.path().parent_path() / (name.substr(0, name.size() - 4) + ".mask.pgm");
          if (fs::exists(mask_path)) frame.mask = read_mask_pgm(mask_path);
        } else if (name.ends_with(".lpc")) {
          frame.timestamp = std::stod(name.substr(0, name.size() - 4));
          frame.scan = read_lpc(file.path());
        } else {
          continue;  // mask files are picked up with their image
        }
        dataset.frames.push_back(std::move(frame));
      }
    }
  }
  dataset.sort_frames();

  const fs::path gt_dir = dir / "gt";
  if (fs::exists(gt_dir / "rig.json")) {
    GroundTruth gt;
    gt.rig = read_rig_json(gt_dir / "rig.json");
    gt.knots = read_trajectory_csv(gt_dir / "trajectory.csv");
    gt.reference = gt.rig.reference;
    if (fs::exists(gt_dir / "tracks.json")) gt.tracks = read_tracks_json(gt_dir / "tracks.json");
    if (fs::exists(gt_dir / "noise.json")) {
      gt.noise = read_noise_json(gt_dir / "noise.json");
      dataset.provenance = Provenance::Perturbed;
    } else {
      dataset.provenance = Provenance::SyntheticGt;
    }
    dataset.gt = std::move(gt);
  } else {
    dataset.provenance = Provenance::External;
  }
  return dataset;
}

}  // namespace rigrefine
