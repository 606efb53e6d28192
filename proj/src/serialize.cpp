#include "rigrefine/serialize.hpp"

namespace rigrefine {

Checkpoint corrections_checkpoint(const CorrectionSet& corrections) {
  Checkpoint ckpt;
  ckpt.blocks.push_back({"reference/" + corrections.reference(), {}});
  for (const auto& [id, block] : corrections.extrinsics()) {
    CheckpointBlock b;
    b.name = "ext/" + id;
    b.values.assign(block.v.data(), block.v.data() + 6);
    ckpt.blocks.push_back(std::move(b));
  }
  for (const auto& [scene, net] : corrections.trajectory_nets()) {
    ckpt.blocks.push_back({"traj/" + scene + "/meta",
                           {net.t_min(), net.t_max(), static_cast<double>(net.frequency_pairs()),
                            static_cast<double>(net.hidden())}});
    ckpt.blocks.push_back({"traj/" + scene + "/params", net.params()});
  }
  return ckpt;
}

CorrectionSet corrections_from_checkpoint(const Checkpoint& ckpt) {
  RigCalibration pseudo;
  std::string reference;
  std::vector<std::string> ext_ids;
  for (const auto& block : ckpt.blocks) {
    if (block.name.starts_with("reference/")) reference = block.name.substr(10);
    if (block.name.starts_with("ext/")) ext_ids.push_back(block.name.substr(4));
  }
  if (reference.empty()) throw IoError("corrections checkpoint lacks a reference block");

  pseudo.reference = reference;
  SensorInfo ref;
  ref.id = reference;
  ref.kind = SensorKind::Lidar;
  pseudo.sensors.push_back(ref);
  for (const auto& id : ext_ids) {
    SensorInfo s;
    s.id = id;
    s.kind = SensorKind::Lidar;
    pseudo.sensors.push_back(s);
  }

  CorrectionSet out(pseudo);
  for (const auto& id : ext_ids) {
    const CheckpointBlock& b = ckpt.at("ext/" + id);
    if (b.values.size() != 6) throw IoError("extrinsic block 'ext/" + id + "' must hold 6 values");
    for (int i = 0; i < 6; ++i) out.extrinsic_mutable(id).v[i] = b.values[static_cast<std::size_t>(i)];
  }

  for (const auto& block : ckpt.blocks) {
    if (!block.name.starts_with("traj/") || !block.name.ends_with("/meta")) continue;
    const std::string scene = block.name.substr(5, block.name.size() - 5 - 5);
    if (block.values.size() != 4) throw IoError("bad trajectory meta for scene '" + scene + "'");
    TrajectoryCorrectionNet net(block.values[0], block.values[1],
                                0, static_cast<int>(block.values[2]),
                                static_cast<int>(block.values[3]));
    const CheckpointBlock& params = ckpt.at("traj/" + scene + "/params");
    if (params.values.size() != net.param_count()) {
      throw IoError("trajectory parameter count mismatch for scene '" + scene + "'");
    }
    net.params() = params.values;
    out.set_trajectory_net(scene, std::move(net));
  }
  return out;
}

Checkpoint field_checkpoint(const VoxelField& field) {
  Checkpoint ckpt;
  CheckpointBlock meta;
  meta.name = "field/meta";
  for (int i = 0; i < 3; ++i) meta.values.push_back(field.bounds().min()[i]);
  for (int i = 0; i < 3; ++i) meta.values.push_back(field.bounds().max()[i]);
  meta.values.push_back(static_cast<double>(field.levels()));
  for (int l = 0; l < field.levels(); ++l) meta.values.push_back(static_cast<double>(field.resolution(l)));
  ckpt.blocks.push_back(std::move(meta));

  for (int l = 0; l < field.levels(); ++l) {
    ckpt.blocks.push_back({"field/level" + std::to_string(l) + "/density", field.density(l)});
    ckpt.blocks.push_back({"field/level" + std::to_string(l) + "/color", field.color(l)});
  }
  ckpt.blocks.push_back({"field/background",
                         {field.background_logit()[0], field.background_logit()[1],
                          field.background_logit()[2]}});
  for (std::size_t c = 0; c < field.cameras().size(); ++c) {
    ckpt.blocks.push_back({"field/appearance/" + field.cameras()[c],
                           {field.appearance()[c][0], field.appearance()[c][1],
                            field.appearance()[c][2]}});
  }
  return ckpt;
}

VoxelField field_from_checkpoint(const Checkpoint& ckpt) {
  const CheckpointBlock& meta = ckpt.at("field/meta");
  if (meta.values.size() < 7) throw IoError("bad field meta block");
  Eigen::AlignedBox3d bounds(Vec3(meta.values[0], meta.values[1], meta.values[2]),
                             Vec3(meta.values[3], meta.values[4], meta.values[5]));
  const int levels = static_cast<int>(meta.values[6]);
  if (meta.values.size() != 7 + static_cast<std::size_t>(levels)) throw IoError("bad field meta block");
  std::vector<int> resolutions;
  for (int l = 0; l < levels; ++l) resolutions.push_back(static_cast<int>(meta.values[7 + l]));

  std::vector<std::string> cameras;
  for (const auto& block : ckpt.blocks) {
    if (block.name.starts_with("field/appearance/")) cameras.push_back(block.name.substr(17));
  }

  VoxelField field(bounds, resolutions, cameras);
  for (int l = 0; l < levels; ++l) {
    const auto& d = ckpt.at("field/level" + std::to_string(l) + "/density");
    const auto& c = ckpt.at("field/level" + std::to_string(l) + "/color");
    if (d.values.size() != field.density(l).size() || c.values.size() != field.color(l).size()) {
      throw IoError("field level " + std::to_string(l) + " has the wrong size");
    }
    field.density(l) = d.values;
    field.color(l) = c.values;
  }
  const auto& bg = ckpt.at("field/background");
  field.background_logit() = Vec3(bg.values[0], bg.values[1], bg.values[2]);
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const auto& a = ckpt.at("field/appearance/" + cameras[c]);
    field.appearance()[c] = Vec3(a.values[0], a.values[1], a.values[2]);
  }
  return field;
}

}  // namespace rigrefine
