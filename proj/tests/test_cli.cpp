#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rigrefine/dataset_io.hpp"
#include "rigrefine/evaluation.hpp"
#include "rigrefine/geometry.hpp"
#include "rigrefine/serialize.hpp"
#include "test_util.hpp"

using namespace rigrefine;
namespace fs = std::filesystem;

namespace {

std::string binary() {
  const char* env = std::getenv("RIG_REFINE_BIN");
  REQUIRE(env != nullptr);
  return env;
}

int run(const std::string& args) {
  const std::string cmd = binary() + " " + args + " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string run_capture_stdout(const std::string& args, const fs::path& tmp) {
  const fs::path out = tmp / "stdout.txt";
  const std::string cmd = binary() + " " + args + " >" + out.string() + " 2>/dev/null";
  std::system(cmd.c_str());
  std::ifstream f(out);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// Stable content hash over every regular file (sorted relative paths).
std::uint64_t hash_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  for (const auto& rel : files) {
    for (char c : rel.string()) h = hash_combine(h, static_cast<std::uint64_t>(c));
    std::ifstream f(dir / rel, std::ios::binary);
    const std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    for (unsigned char c : data) h = hash_combine(h, c);
  }
  return h;
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "rigrefine_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream f(root / "cfg.json");
    f << R"({
  "version": 1,
  "seed": 11,
  "gen": {
    "world": {"boxes": 6, "cylinders": 2, "spheres": 2, "landmarks": 150,
              "region_half_extent_m": 13, "texture_frequency": 0.8},
    "rig": {"image_width": 48, "image_height": 48},
    "trajectory": {"duration_s": 2.0, "speed_mps": 4.0},
    "capture": {"lidar_rings": 6, "lidar_azimuth_steps": 90}
  },
  "refine": {
    "train": {"epochs": 2, "rays_per_batch": 512, "downscale": 2, "n_samples": 32,
              "level_resolutions": [12, 24], "far_m": 50}
  },
  "evaluate": {
    "eval": {"nvs_train": {"epochs": 3, "rays_per_batch": 512, "downscale": 2, "n_samples": 32,
                           "level_resolutions": [12, 24], "far_m": 50, "lr_field": 0.03},
             "eval_downscale": 4, "mesh_resolution": 48, "mesh_alpha_distance_m": 0.9}
  }
})";
  }
  std::string cfg() const { return (root / "cfg.json").string(); }
  fs::path p(const std::string& name) const { return root / name; }
};

}  // namespace

TEST_CASE("cli pipeline: gen, perturb, refine, evaluate, report") {
  Workspace ws;
  const std::string base = "--config " + ws.cfg() + " --threads 2 --log-level quiet ";

  // gen: valid dataset, deterministic across runs.
  REQUIRE(run(base + "gen --out " + ws.p("ds").string()) == 0);
  const SceneDataset ds = read_dataset(ws.p("ds"));
  CHECK_NOTHROW(ds.validate());
  CHECK(ds.provenance == Provenance::SyntheticGt);
  REQUIRE(ds.gt);
  CHECK(!ds.gt->tracks.empty());

  REQUIRE(run(base + "gen --out " + ws.p("ds_again").string()) == 0);
  CHECK(hash_dir(ws.p("ds")) == hash_dir(ws.p("ds_again")));

  // Existing output refuses to be overwritten.
  CHECK(run(base + "gen --out " + ws.p("ds").string()) == 3);

  // perturb: zero noise keeps the poses, preset respects its bounds, seeds
  // reproduce bytes.
  REQUIRE(run(base + "perturb --input " + ws.p("ds").string() + " --out " +
              ws.p("zero").string()) == 0);
  const SceneDataset zero = read_dataset(ws.p("zero"));
  for (std::size_t i = 0; i < ds.knots.size(); ++i) {
    CHECK(testutil::pose_diff(zero.knots[i].pose, ds.knots[i].pose) == 0.0);
  }

  REQUIRE(run(base + "perturb --input " + ws.p("ds").string() + " --out " +
              ws.p("soac").string() + " --preset soac-noise") == 0);
  const SceneDataset soac = read_dataset(ws.p("soac"));
  REQUIRE(soac.gt);
  REQUIRE(soac.gt->noise);
  for (const auto& [id, off] : soac.gt->noise->extrinsic_offsets) {
    CHECK(off.translation.norm() <= 0.5);
    CHECK(rotation_angle(off.rotation) <= 5.0 * 3.14159265358979 / 180.0 + 1e-12);
  }

  REQUIRE(run(base + "perturb --input " + ws.p("ds").string() + " --out " +
              ws.p("soac2").string() + " --preset soac-noise") == 0);
  CHECK(hash_dir(ws.p("soac")) == hash_dir(ws.p("soac2")));

  // perturb without ground truth: exit 2.
  fs::create_directories(ws.p("nogt"));
  fs::copy(ws.p("ds"), ws.p("nogt"), fs::copy_options::recursive);
  fs::remove_all(ws.p("nogt") / "gt");
  CHECK(run(base + "perturb --input " + ws.p("nogt").string() + " --out " +
            ws.p("nope").string()) == 2);
  CHECK_FALSE(fs::exists(ws.p("nope")));

  // refine: deterministic, calib-only leaves trajectories untouched, inputs
  // unchanged.
  REQUIRE(run(base + "perturb --input " + ws.p("ds").string() + " --out " + ws.p("noisy").string() +
              " --trans-m 0.05 --rot-deg 0.5") == 0);
  const std::uint64_t input_hash = hash_dir(ws.p("noisy"));

  REQUIRE(run(base + "refine --scene " + ws.p("noisy").string() + " --out " +
              ws.p("ref_a").string()) == 0);
  REQUIRE(run(base + "refine --scene " + ws.p("noisy").string() + " --out " +
              ws.p("ref_b").string()) == 0);
  CHECK(hash_dir(ws.p("ref_a")) == hash_dir(ws.p("ref_b")));
  CHECK(hash_dir(ws.p("noisy")) == input_hash);

  CHECK(fs::exists(ws.p("ref_a") / "checkpoint.rrck"));
  CHECK(fs::exists(ws.p("ref_a") / "summary.json"));
  const Checkpoint ckpt = read_checkpoint(ws.p("ref_a") / "checkpoint.rrck");
  const CorrectionSet corr = corrections_from_checkpoint(ckpt);
  CHECK(corr.reference() == ds.rig.reference);
  CHECK(corr.trajectory_nets().count("noisy") == 1);

  REQUIRE(run(base + "refine --scene " + ws.p("noisy").string() + " --out " +
              ws.p("ref_calib").string() + " --stage calib-only") == 0);
  // Trajectory untouched in calib-only mode.
  const auto knots_in = read_trajectory_csv(ws.p("noisy") / "trajectory.csv");
  const auto knots_out =
      read_trajectory_csv(ws.p("ref_calib") / "corrected" / "noisy" / "trajectory.csv");
  REQUIRE(knots_in.size() == knots_out.size());
  for (std::size_t i = 0; i < knots_in.size(); ++i) {
    CHECK(knots_in[i].t == knots_out[i].t);
    CHECK(testutil::pose_diff(knots_in[i].pose, knots_out[i].pose) == 0.0);
  }

  // evaluate with candidate == original: all deltas zero, original selected.
  fs::create_directories(ws.p("identity_candidate"));
  fs::copy_file(ws.p("noisy") / "rig.json", ws.p("identity_candidate") / "rig.json");
  fs::copy_file(ws.p("noisy") / "trajectory.csv", ws.p("identity_candidate") / "trajectory.csv");
  REQUIRE(run(base + "evaluate --scene " + ws.p("noisy").string() + " --candidate " +
              ws.p("identity_candidate").string() + " --out " + ws.p("ev").string()) == 0);

  const EvaluationReport report = read_report_json(ws.p("ev") / "report.json");
  REQUIRE(report.scenes.size() == 1);
  for (int m = 0; m < kMetricCount; ++m) {
    CHECK(report.scenes[0].oriented_deltas[static_cast<std::size_t>(m)] == 0.0);
  }
  CHECK(report.scenes[0].selection == PoseChoice::Original);
  REQUIRE(report.scenes[0].true_original.has_value());

  // CSV schema: header + scenes x metrics rows.
  std::ifstream csv(ws.p("ev") / "report.csv");
  int rows = 0;
  std::string line;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 1 + kMetricCount);

  // print-report echoes the JSON to stdout; quiet mode keeps stdout empty
  // otherwise.
  const std::string echoed =
      run_capture_stdout(base + "evaluate --scene " + ws.p("noisy").string() + " --candidate " +
                             ws.p("identity_candidate").string() + " --out " +
                             ws.p("ev_print").string() + " --print-report",
                         ws.root);
  CHECK(echoed.find("\"sign_agreement\"") != std::string::npos);
  const std::string silent = run_capture_stdout(base + "gen --out " + ws.p("ds_silent").string(),
                                                ws.root);
  CHECK(silent.empty());

  // report re-renders tables from report.json.
  REQUIRE(run(base + "report --input " + (ws.p("ev") / "report.json").string() + " --out " +
              ws.p("tables").string()) == 0);
  CHECK(fs::exists(ws.p("tables") / "report.csv"));
  CHECK(fs::exists(ws.p("tables") / "agreement.csv"));

  // Config errors exit with 2.
  CHECK(run(base + "refine --out " + ws.p("r2").string()) == 2);   // no scenes
  CHECK(run(base + "evaluate --scene " + ws.p("noisy").string() + " --out " +
            ws.p("e2").string()) == 2);                             // candidate count mismatch
  CHECK(run("--config /does/not/exist.json gen --out " + ws.p("g2").string()) == 2);

  fs::remove_all(ws.root);
}

TEST_CASE("cli seed fallback from the environment") {
  Workspace ws;
  const std::string base = "--threads 1 --log-level quiet ";
  const std::string cfg_no_seed = (ws.root / "noseed.json").string();
  {
    std::ofstream f(cfg_no_seed);
    f << R"({"version": 1,
      "gen": {"world": {"boxes": 2, "cylinders": 0, "spheres": 0, "landmarks": 40,
                        "region_half_extent_m": 10},
              "rig": {"image_width": 16, "image_height": 16},
              "trajectory": {"duration_s": 1.0},
              "capture": {"lidar_rings": 2, "lidar_azimuth_steps": 24}}})";
  }

  const std::string cmd_a = "RIG_REFINE_SEED=77 " + binary() + " --config " + cfg_no_seed + " " +
                            base + "gen --out " + ws.p("env_a").string() + " >/dev/null 2>&1";
  const std::string cmd_b = "RIG_REFINE_SEED=77 " + binary() + " --config " + cfg_no_seed + " " +
                            base + "gen --out " + ws.p("env_b").string() + " >/dev/null 2>&1";
  const std::string cmd_c = "RIG_REFINE_SEED=78 " + binary() + " --config " + cfg_no_seed + " " +
                            base + "gen --out " + ws.p("env_c").string() + " >/dev/null 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd_a.c_str())) == 0);
  REQUIRE(WEXITSTATUS(std::system(cmd_b.c_str())) == 0);
  REQUIRE(WEXITSTATUS(std::system(cmd_c.c_str())) == 0);
  CHECK(hash_dir(ws.p("env_a")) == hash_dir(ws.p("env_b")));
  CHECK(hash_dir(ws.p("env_a")) != hash_dir(ws.p("env_c")));
  fs::remove_all(ws.root);
}
