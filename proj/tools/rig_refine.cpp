// Command-line front end: dataset generation, noise injection, two-stage pose
// refinement, and ground-truth-free evaluation over the on-disk layout.

#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "rigrefine/dataset_io.hpp"
#include "rigrefine/evaluation.hpp"
#include "rigrefine/optimizer.hpp"
#include "rigrefine/serialize.hpp"
#include "rigrefine/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rigrefine;

namespace {

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
  if (g_log_level >= 1) std::fprintf(stderr, "[rig_refine] %s\n", msg.c_str());
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  json doc;
  try {
    f >> doc;
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid config JSON: " + std::string(e.what()));
  }
  if (!doc.contains("version")) throw ConfigError("config needs a 'version' field");
  return doc;
}

json section(const json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name) : json::object();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  return j.at(key).get<T>();
}

// Recursive merge; scalar overrides win over config values.
void merge_into(json& base, const json& overrides) {
  for (const auto& [key, value] : overrides.items()) {
    if (value.is_object() && base.contains(key) && base.at(key).is_object()) {
      merge_into(base.at(key), value);
    } else {
      base[key] = value;
    }
  }
}

// Seed precedence: flag > config > RIG_REFINE_SEED > 0.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, const json& cfg) {
  if (flag->count() > 0) return flag_value;
  if (cfg.contains("seed")) return cfg.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("RIG_REFINE_SEED")) {
    return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
  }
  return 0;
}

// Outputs are staged next to the target and renamed into place, so an
// interrupted run never leaves a partial result at the final path.
class StagedDir {
 public:
  explicit StagedDir(const fs::path& target) : target_(target) {
    if (fs::exists(target_)) throw IoError("output '" + target_.string() + "' already exists");
    if (target_.has_parent_path()) fs::create_directories(target_.parent_path());
    staging_ = target_.parent_path() /
               (".staging-" + target_.filename().string() + "-" + std::to_string(::getpid()));
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  ~StagedDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  const fs::path& path() const { return staging_; }
  void commit() {
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_, staging_;
  bool committed_ = false;
};

TrainConfig train_config_from(const json& j, std::uint64_t seed, int threads, bool deterministic) {
  TrainConfig cfg;
  cfg.epochs = get_or(j, "epochs", cfg.epochs);
  cfg.rays_per_batch = get_or(j, "rays_per_batch", cfg.rays_per_batch);
  cfg.lr_field = get_or(j, "lr_field", cfg.lr_field);
  cfg.lr_extrinsic = get_or(j, "lr_extrinsic", cfg.lr_extrinsic);
  cfg.lr_trajectory = get_or(j, "lr_trajectory", cfg.lr_trajectory);
  cfg.photometric_weight = get_or(j, "photometric_weight", cfg.photometric_weight);
  cfg.depth_weight = get_or(j, "depth_weight", cfg.depth_weight);
  cfg.downscale = get_or(j, "downscale", cfg.downscale);
  cfg.n_samples = get_or(j, "n_samples", cfg.n_samples);
  cfg.near_m = get_or(j, "near_m", cfg.near_m);
  cfg.far_m = get_or(j, "far_m", cfg.far_m);
  cfg.warmup_epochs = get_or(j, "warmup_epochs", cfg.warmup_epochs);
  cfg.decay_lambda_max = get_or(j, "decay_lambda_max", cfg.decay_lambda_max);
  cfg.decay_coarse_epochs = get_or(j, "decay_coarse_epochs", cfg.decay_coarse_epochs);
  cfg.level_resolutions = get_or(j, "level_resolutions", cfg.level_resolutions);
  cfg.bounds_margin_m = get_or(j, "bounds_margin_m", cfg.bounds_margin_m);
  cfg.camera_ray_fraction = get_or(j, "camera_ray_fraction", cfg.camera_ray_fraction);
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.deterministic = deterministic;
  cfg.log_progress = g_log_level >= 1;
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

int cmd_gen(const json& cfg, const std::string& out_flag, std::uint64_t seed, int threads) {
  const json g = section(cfg, "gen");
  const std::string out = out_flag.empty() ? get_or<std::string>(g, "out", "") : out_flag;
  if (out.empty()) throw ConfigError("gen needs an output directory");

  WorldSpec world_spec;
  const json w = section(g, "world");
  world_spec.region_half_extent_m =
      get_or(w, "region_half_extent_m", world_spec.region_half_extent_m);
  world_spec.boxes = get_or(w, "boxes", world_spec.boxes);
  world_spec.cylinders = get_or(w, "cylinders", world_spec.cylinders);
  world_spec.spheres = get_or(w, "spheres", world_spec.spheres);
  world_spec.landmarks = get_or(w, "landmarks", world_spec.landmarks);
  world_spec.texture_frequency = get_or(w, "texture_frequency", world_spec.texture_frequency);

  RigSpec rig_spec;
  const json r = section(g, "rig");
  rig_spec.image_width = get_or(r, "image_width", rig_spec.image_width);
  rig_spec.image_height = get_or(r, "image_height", rig_spec.image_height);
  rig_spec.hfov_deg = get_or(r, "hfov_deg", rig_spec.hfov_deg);

  TrajectorySpec traj_spec;
  const json t = section(g, "trajectory");
  traj_spec.duration_s = get_or(t, "duration_s", traj_spec.duration_s);
  traj_spec.speed_mps = get_or(t, "speed_mps", traj_spec.speed_mps);
  traj_spec.knot_rate_hz = get_or(t, "knot_rate_hz", traj_spec.knot_rate_hz);
  traj_spec.lateral_amplitude_m = get_or(t, "lateral_amplitude_m", traj_spec.lateral_amplitude_m);
  traj_spec.lateral_wavelength_m =
      get_or(t, "lateral_wavelength_m", traj_spec.lateral_wavelength_m);
  traj_spec.roll_pitch_amplitude_deg =
      get_or(t, "roll_pitch_amplitude_deg", traj_spec.roll_pitch_amplitude_deg);

  // The primitive corridor follows the drive unless pinned explicitly.
  world_spec.path_length_m =
      get_or(w, "path_length_m", traj_spec.duration_s * traj_spec.speed_mps);

  CaptureSpec cap_spec;
  const json c = section(g, "capture");
  cap_spec.camera_rate_hz = get_or(c, "camera_rate_hz", cap_spec.camera_rate_hz);
  cap_spec.lidar_rate_hz = get_or(c, "lidar_rate_hz", cap_spec.lidar_rate_hz);
  cap_spec.lidar_rings = get_or(c, "lidar_rings", cap_spec.lidar_rings);
  cap_spec.lidar_azimuth_steps = get_or(c, "lidar_azimuth_steps", cap_spec.lidar_azimuth_steps);
  cap_spec.lidar_max_range_m = get_or(c, "lidar_max_range_m", cap_spec.lidar_max_range_m);
  cap_spec.max_track_length = get_or(c, "max_track_length", cap_spec.max_track_length);
  cap_spec.threads = threads;

  log_info("generating world (seed " + std::to_string(seed) + ")");
  const SyntheticWorld world = SyntheticWorld::generate(world_spec, seed);
  const RigCalibration rig = default_rig(rig_spec);
  const auto knots = generate_trajectory(traj_spec, seed);
  log_info("capturing frames");
  const SceneDataset dataset =
      capture(world, rig, knots, cap_spec, fs::path(out).filename().string());
  dataset.validate();

  StagedDir staged{fs::path(out)};
  write_dataset(dataset, staged.path());
  staged.commit();
  log_info("dataset written to " + out);
  return 0;
}

int cmd_perturb(const CLI::App& app, const json& cfg, const std::string& input_flag,
                const std::string& out_flag, const std::string& preset, std::uint64_t seed) {
  const json p = section(cfg, "perturb");
  const std::string input = input_flag.empty() ? get_or<std::string>(p, "input", "") : input_flag;
  const std::string out = out_flag.empty() ? get_or<std::string>(p, "out", "") : out_flag;
  if (input.empty() || out.empty()) throw ConfigError("perturb needs --input and --out");

  NoiseSpec noise;
  const json n = section(p, "noise");
  if (preset == "soac-noise") {
    noise = NoiseSpec::soac_preset(seed);
  } else if (!preset.empty()) {
    throw ConfigError("unknown noise preset '" + preset + "'");
  }
  noise.extrinsic.translation_m =
      get_or(n, "extrinsic_translation_m", noise.extrinsic.translation_m);
  noise.extrinsic.rotation_deg = get_or(n, "extrinsic_rotation_deg", noise.extrinsic.rotation_deg);
  noise.extrinsic.per_axis = get_or(n, "per_axis", noise.extrinsic.per_axis);
  noise.trajectory.amplitude_m = get_or(n, "trajectory_amplitude_m", noise.trajectory.amplitude_m);
  noise.trajectory.amplitude_deg =
      get_or(n, "trajectory_amplitude_deg", noise.trajectory.amplitude_deg);
  noise.trajectory.spatial_frequency =
      get_or(n, "trajectory_spatial_frequency", noise.trajectory.spatial_frequency);
  noise.trajectory.jitter_translation_m =
      get_or(n, "trajectory_jitter_m", noise.trajectory.jitter_translation_m);
  noise.trajectory.jitter_rotation_deg =
      get_or(n, "trajectory_jitter_deg", noise.trajectory.jitter_rotation_deg);
  noise.seed = seed;

  if (app.count("--trans-m")) noise.extrinsic.translation_m = app.get_option("--trans-m")->as<double>();
  if (app.count("--rot-deg")) noise.extrinsic.rotation_deg = app.get_option("--rot-deg")->as<double>();
  if (app.count("--per-axis")) noise.extrinsic.per_axis = true;
  if (app.count("--traj-amp-m")) {
    noise.trajectory.amplitude_m = app.get_option("--traj-amp-m")->as<double>();
  }
  if (app.count("--traj-amp-deg")) {
    noise.trajectory.amplitude_deg = app.get_option("--traj-amp-deg")->as<double>();
  }

  const SceneDataset dataset = read_dataset(input);
  if (dataset.provenance != Provenance::SyntheticGt) {
    throw ConfigError("input dataset lacks ground truth; cannot perturb");
  }
  const SceneDataset noisy = perturb(dataset, noise);

  StagedDir staged{fs::path(out)};
  write_dataset(noisy, staged.path());
  staged.commit();
  log_info("perturbed dataset written to " + out);
  return 0;
}

std::vector<TrajectoryKnot> corrected_knots(const std::vector<TrajectoryKnot>& knots,
                                            const CorrectionSet& corr, const std::string& scene) {
  std::vector<TrajectoryKnot> out = knots;
  for (auto& k : out) k.pose = k.pose * corr.trajectory_correction_pose(scene, k.t);
  return out;
}

RigCalibration corrected_rig(const RigCalibration& rig, const CorrectionSet& corr) {
  RigCalibration out = rig;
  for (auto& s : out.sensors) {
    if (s.id == out.reference) continue;
    s.extrinsic = s.extrinsic * corr.extrinsic_pose(s.id);
  }
  return out;
}

int cmd_refine(const json& cfg, const std::vector<std::string>& scene_flags,
               const std::string& out_flag, const std::string& stage, std::uint64_t seed,
               int threads, bool deterministic, const json& train_overrides) {
  const json r = section(cfg, "refine");
  std::vector<std::string> scene_dirs = scene_flags;
  if (scene_dirs.empty()) scene_dirs = get_or(r, "scenes", std::vector<std::string>{});
  const std::string out = out_flag.empty() ? get_or<std::string>(r, "out", "") : out_flag;
  if (scene_dirs.empty() || out.empty()) throw ConfigError("refine needs scenes and --out");
  if (stage != "full" && stage != "calib-only") {
    throw ConfigError("--stage must be 'full' or 'calib-only'");
  }

  json train_json = section(r, "train");
  merge_into(train_json, train_overrides);
  const TrainConfig train = train_config_from(train_json, seed, threads, deterministic);

  std::vector<SceneDataset> scenes;
  scenes.reserve(scene_dirs.size());
  for (const auto& dir : scene_dirs) {
    log_info("loading scene " + dir);
    scenes.push_back(read_dataset(dir));
  }
  std::vector<const SceneDataset*> ptrs;
  for (const auto& s : scenes) ptrs.push_back(&s);

  log_info("stage 1: extrinsic calibration over " + std::to_string(scenes.size()) + " scene(s)");
  CalibrationResult calib = run_calibration_stage(ptrs, scenes.front().rig, train);

  CorrectionSet final_corrections(scenes.front().rig);
  for (const auto& [id, block] : calib.corrections.extrinsics()) {
    final_corrections.extrinsic_mutable(id).v = block.v;
  }

  json summary;
  summary["version"] = 1;
  summary["stage1_steps"] = calib.summary.total_steps;
  json epochs = json::array();
  for (const auto& e : calib.summary.epochs) {
    epochs.push_back({{"scene", e.scene},
                      {"epoch", e.epoch},
                      {"photometric", e.photometric},
                      {"depth", e.depth},
                      {"ext_corr_norm_m", e.ext_corr_norm_m},
                      {"ext_corr_norm_deg", e.ext_corr_norm_deg}});
  }
  summary["stage1_epochs"] = std::move(epochs);

  if (stage == "full") {
    json stage2 = json::array();
    for (const auto& scene : scenes) {
      log_info("stage 2: trajectory refinement for " + scene.scene_id);
      TrajectoryResult res =
          run_trajectory_stage(scene, scene.rig, calib.corrections.extrinsics(), train);
      stage2.push_back({{"scene", scene.scene_id},
                        {"steps", res.summary.total_steps},
                        {"extrinsic_grad_norm", res.summary.extrinsic_grad_norm}});
      final_corrections.set_trajectory_net(scene.scene_id, std::move(res.net));
    }
    summary["stage2"] = std::move(stage2);
  }

  StagedDir staged{fs::path(out)};
  write_checkpoint(staged.path() / "checkpoint.rrck", corrections_checkpoint(final_corrections));

  const RigCalibration rig_out = corrected_rig(scenes.front().rig, final_corrections);
  for (const auto& scene : scenes) {
    const fs::path dir = staged.path() / "corrected" / scene.scene_id;
    fs::create_directories(dir);
    write_rig_json(rig_out, dir / "rig.json");
    const auto knots = stage == "full"
                           ? corrected_knots(scene.knots, final_corrections, scene.scene_id)
                           : scene.knots;
    write_trajectory_csv(knots, dir / "trajectory.csv");
  }

  {
    std::ofstream f(staged.path() / "summary.json");
    f << summary.dump(2) << "\n";
  }
  staged.commit();
  log_info("refinement outputs written to " + out);
  return 0;
}

int cmd_evaluate(const json& cfg, const std::vector<std::string>& scene_flags,
                 const std::vector<std::string>& candidate_flags, const std::string& out_flag,
                 std::uint64_t seed, int threads, bool deterministic, bool print_report,
                 const json& eval_overrides) {
  const json e = section(cfg, "evaluate");
  std::vector<std::string> scene_dirs = scene_flags;
  if (scene_dirs.empty()) scene_dirs = get_or(e, "scenes", std::vector<std::string>{});
  std::vector<std::string> candidate_dirs = candidate_flags;
  if (candidate_dirs.empty()) candidate_dirs = get_or(e, "candidates", std::vector<std::string>{});
  const std::string out = out_flag.empty() ? get_or<std::string>(e, "out", "") : out_flag;
  if (scene_dirs.empty() || out.empty()) throw ConfigError("evaluate needs scenes and --out");
  if (scene_dirs.size() != candidate_dirs.size()) {
    throw ConfigError("evaluate needs one candidate pose directory per scene");
  }

  json eval_json = section(e, "eval");
  merge_into(eval_json, eval_overrides);

  EvalConfig ecfg;
  ecfg.seed = seed;
  ecfg.threads = threads;
  ecfg.nvs.train = train_config_from(section(eval_json, "nvs_train"), seed, threads, deterministic);
  if (!section(eval_json, "nvs_train").contains("epochs") && !eval_overrides.contains("nvs_train")) {
    ecfg.nvs.train.epochs = 10;
  }
  ecfg.nvs.eval_downscale = get_or(eval_json, "eval_downscale", ecfg.nvs.train.downscale);
  ecfg.nvs.eval_n_samples = get_or(eval_json, "eval_n_samples", ecfg.nvs.train.n_samples);
  ecfg.consistency.train = ecfg.nvs.train;
  ecfg.consistency.mesh_resolution = get_or(eval_json, "mesh_resolution", 128);
  ecfg.consistency.alpha_distance_m =
      get_or(eval_json, "mesh_alpha_distance_m", ecfg.consistency.alpha_distance_m);
  ecfg.p2m_threshold_m = get_or(eval_json, "p2m_threshold_m", 0.15);
  ecfg.track_pixel_noise = get_or(eval_json, "track_pixel_noise", 0.0);

  std::vector<SceneEvaluation> evaluations;
  for (std::size_t i = 0; i < scene_dirs.size(); ++i) {
    log_info("evaluating scene " + scene_dirs[i]);
    const SceneDataset dataset = read_dataset(scene_dirs[i]);
    if (!dataset.gt || dataset.gt->tracks.empty()) {
      throw ConfigError("scene '" + scene_dirs[i] + "' has no gt/tracks.json");
    }

    const PoseSet original{dataset.rig, dataset.knots};
    PoseSet candidate;
    candidate.rig = read_rig_json(fs::path(candidate_dirs[i]) / "rig.json");
    candidate.knots = read_trajectory_csv(fs::path(candidate_dirs[i]) / "trajectory.csv");

    const std::vector<KeypointTrack> tracks =
        noisy_tracks(dataset.gt->tracks, ecfg.track_pixel_noise, seed);

    SceneEvaluation scene_eval;
    scene_eval.scene_id = dataset.scene_id;
    scene_eval.original = evaluate_pose_set(dataset, original, tracks, ecfg);
    scene_eval.optimized = evaluate_pose_set(dataset, candidate, tracks, ecfg);

    const PoseSet gt{dataset.gt->rig, dataset.gt->knots};
    scene_eval.true_original = true_pose_errors(original, gt);
    scene_eval.true_optimized = true_pose_errors(candidate, gt);
    evaluations.push_back(std::move(scene_eval));
  }

  const EvaluationReport report = build_report(std::move(evaluations));

  StagedDir staged{fs::path(out)};
  write_report_json(report, staged.path() / "report.json");
  write_report_csv(report, staged.path() / "report.csv");
  staged.commit();
  log_info("report written to " + out);

  if (print_report) {
    std::ifstream f(fs::path(out) / "report.json");
    std::string line;
    while (std::getline(f, line)) std::fputs((line + "\n").c_str(), stdout);
  }
  return 0;
}

int cmd_report(const json& cfg, const std::string& input_flag, const std::string& out_flag) {
  const json r = section(cfg, "report");
  const std::string input = input_flag.empty() ? get_or<std::string>(r, "input", "") : input_flag;
  const std::string out = out_flag.empty() ? get_or<std::string>(r, "out", "") : out_flag;
  if (input.empty() || out.empty()) throw ConfigError("report needs --input and --out");

  const EvaluationReport report = read_report_json(input);
  StagedDir staged{fs::path(out)};
  write_report_csv(report, staged.path() / "report.csv");

  std::ofstream f(staged.path() / "agreement.csv");
  f << "metric_a,metric_b,agreement\n";
  for (Eigen::Index i = 0; i < report.agreement.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < report.agreement.values.cols(); ++j) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s,%s,%.17g\n",
                    report.agreement.labels[static_cast<std::size_t>(i)].c_str(),
                    report.agreement.labels[static_cast<std::size_t>(j)].c_str(),
                    report.agreement.values(i, j));
      f << buf;
    }
  }
  f.close();
  staged.commit();
  log_info("report tables written to " + out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-sensor rig extrinsic and trajectory refinement"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_flag = 0;
  int threads = 1;
  bool deterministic = false;
  std::string log_level = "info";
  app.add_option("--config", config_path, "JSON config file");
  auto* seed_opt = app.add_option("--seed", seed_flag, "global seed");
  app.add_option("--threads", threads, "worker thread cap");
  app.add_flag("--deterministic", deterministic, "deterministic reductions everywhere");
  app.add_option("--log-level", log_level, "quiet|info|debug");

  auto* gen = app.add_subcommand("gen", "generate a synthetic ground-truth dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory");

  auto* perturb_cmd = app.add_subcommand("perturb", "inject calibrated noise into a dataset");
  std::string pert_input, pert_out, pert_preset;
  double pert_trans = 0.0, pert_rot = 0.0, pert_traj_m = 0.0, pert_traj_deg = 0.0;
  bool pert_per_axis = false;
  perturb_cmd->add_option("--input", pert_input, "ground-truth dataset directory");
  perturb_cmd->add_option("--out", pert_out, "output dataset directory");
  perturb_cmd->add_option("--preset", pert_preset, "noise preset (soac-noise)");
  perturb_cmd->add_option("--trans-m", pert_trans, "extrinsic translation bound [m]");
  perturb_cmd->add_option("--rot-deg", pert_rot, "extrinsic rotation bound [deg]");
  perturb_cmd->add_flag("--per-axis", pert_per_axis, "sample each axis uniformly");
  perturb_cmd->add_option("--traj-amp-m", pert_traj_m, "trajectory amplitude [m]");
  perturb_cmd->add_option("--traj-amp-deg", pert_traj_deg, "trajectory amplitude [deg]");

  auto* refine_cmd = app.add_subcommand("refine", "optimize extrinsics and trajectories");
  std::vector<std::string> refine_scenes;
  std::string refine_out, refine_stage = "full";
  int refine_epochs = -1, refine_downscale = -1, refine_rays = -1;
  refine_cmd->add_option("--scene", refine_scenes, "scene dataset directories");
  refine_cmd->add_option("--out", refine_out, "output directory");
  refine_cmd->add_option("--stage", refine_stage, "full|calib-only");
  refine_cmd->add_option("--epochs", refine_epochs, "override training epochs");
  refine_cmd->add_option("--downscale", refine_downscale, "override image downscale");
  refine_cmd->add_option("--rays", refine_rays, "override rays per batch");

  auto* eval_cmd = app.add_subcommand("evaluate", "score original vs candidate poses");
  std::vector<std::string> eval_scenes, eval_candidates;
  std::string eval_out;
  bool print_report = false;
  int eval_epochs = -1, eval_downscale_opt = -1;
  eval_cmd->add_option("--scene", eval_scenes, "scene dataset directories");
  eval_cmd->add_option("--candidate", eval_candidates, "candidate pose directories");
  eval_cmd->add_option("--out", eval_out, "output directory");
  eval_cmd->add_flag("--print-report", print_report, "echo report.json to stdout");
  eval_cmd->add_option("--nvs-epochs", eval_epochs, "override NVS retrain epochs");
  eval_cmd->add_option("--downscale", eval_downscale_opt, "override evaluation downscale");

  auto* report_cmd = app.add_subcommand("report", "re-render tables from report.json");
  std::string report_input, report_out;
  report_cmd->add_option("--input", report_input, "existing report.json");
  report_cmd->add_option("--out", report_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (log_level == "quiet") {
    g_log_level = 0;
  } else if (log_level == "debug") {
    g_log_level = 2;
  }

  try {
    const json cfg = load_config(config_path);
    if (cfg.contains("threads") && threads == 1) threads = cfg.at("threads").get<int>();
    if (cfg.contains("deterministic") && !deterministic) {
      deterministic = cfg.at("deterministic").get<bool>();
    }
    const std::uint64_t seed = resolve_seed(seed_opt, seed_flag, cfg);

    if (gen->parsed()) return cmd_gen(cfg, gen_out, seed, threads);
    if (perturb_cmd->parsed()) {
      return cmd_perturb(*perturb_cmd, cfg, pert_input, pert_out, pert_preset, seed);
    }
    if (refine_cmd->parsed()) {
      json overrides = json::object();
      if (refine_epochs >= 0) overrides["epochs"] = refine_epochs;
      if (refine_downscale >= 0) overrides["downscale"] = refine_downscale;
      if (refine_rays >= 0) overrides["rays_per_batch"] = refine_rays;
      return cmd_refine(cfg, refine_scenes, refine_out, refine_stage, seed, threads, deterministic,
                        overrides);
    }
    if (eval_cmd->parsed()) {
      json overrides = json::object();
      if (eval_epochs >= 0) overrides["nvs_train"] = json{{"epochs", eval_epochs}};
      if (eval_downscale_opt >= 0) overrides["eval_downscale"] = eval_downscale_opt;
      return cmd_evaluate(cfg, eval_scenes, eval_candidates, eval_out, seed, threads, deterministic,
                          print_report, overrides);
    }
    if (report_cmd->parsed()) return cmd_report(cfg, report_input, report_out);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NotGroundTruthError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const RigMismatchError& e) {
    std::fprintf(stderr, "rig mismatch: %s\n", e.what());
    return 4;
  } catch (const NonFiniteLossError& e) {
    std::fprintf(stderr, "non-finite loss: %s\n", e.what());
    return 5;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
