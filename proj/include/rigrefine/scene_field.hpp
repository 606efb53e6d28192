#pragma once

#include <Eigen/Geometry>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rigrefine/errors.hpp"
#include "rigrefine/geometry.hpp"
#include "rigrefine/rng.hpp"

namespace rigrefine {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();  // unit length
  double near = 0.1;
  double far = 100.0;
  int camera = -1;  // appearance slot; -1 for lidar / untagged rays
};

struct RenderResult {
  Vec3 color = Vec3::Zero();
  double expected_depth = 0.0;
  double opacity = 0.0;
  bool depth_valid = false;
};

// Keys of the counter-based jitter stream for one ray. The same keys always
// reproduce the same sample positions, independent of thread schedule.
struct SampleRng {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

// Dense multi-resolution voxel grids storing a density logit and a 3-channel
// color feature per vertex, summed across levels and decoded with
// softplus / sigmoid. Background is a learnable constant color; each camera
// owns a 3-vector appearance latent added to the color feature.
class VoxelField {
 public:
  static constexpr double kDepthOpacityFloor = 0.05;

  VoxelField() = default;
  VoxelField(const Eigen::AlignedBox3d& bounds, std::vector<int> level_resolutions,
             std::vector<std::string> camera_ids);

  const Eigen::AlignedBox3d& bounds() const { return bounds_; }
  int levels() const { return static_cast<int>(levels_.size()); }
  int resolution(int level) const { return levels_[level].res; }
  const std::vector<std::string>& cameras() const { return camera_ids_; }
  int camera_index(const std::string& id) const;  // -1 if unknown

  std::vector<double>& density(int level) { return levels_[level].density; }
  const std::vector<double>& density(int level) const { return levels_[level].density; }
  std::vector<double>& color(int level) { return levels_[level].color; }
  const std::vector<double>& color(int level) const { return levels_[level].color; }
  Vec3& background_logit() { return background_logit_; }
  const Vec3& background_logit() const { return background_logit_; }
  Vec3 background() const;
  std::vector<Vec3>& appearance() { return appearance_; }
  const std::vector<Vec3>& appearance() const { return appearance_; }

  struct Sample {
    double density = 0.0;
    Vec3 color = Vec3::Zero();
  };
  Sample sample(const Vec3& p, int camera = -1) const;

  std::size_t param_count() const;

  struct LevelInterp {
    std::array<std::uint32_t, 8> index;
    std::array<double, 8> weight;
    // d(weight)/d(p), row per corner.
    std::array<Vec3, 8> dweight;
  };
  bool interp(int level, const Vec3& p, LevelInterp& out) const;

  bool inside(const Vec3& p) const { return bounds_.contains(p); }

 private:
  struct Level {
    int res = 0;
    std::vector<double> density;  // res^3 logits
    std::vector<double> color;    // 3 * res^3 features
  };

  Eigen::AlignedBox3d bounds_;
  std::vector<Level> levels_;
  Vec3 background_logit_ = Vec3::Zero();
  std::vector<std::string> camera_ids_;
  std::vector<Vec3> appearance_;
};

// Per-sample quadrature state, filled on request for diagnostics and
// invariant checks.
struct RenderDebug {
  std::vector<double> t;
  std::vector<double> weight;         // T_i * alpha_i
  std::vector<double> transmittance;  // T_i before sample i
  double final_transmittance = 1.0;
};

RenderResult render_ray(const VoxelField& field, const Ray& ray, int n_samples,
                        const SampleRng& rng, RenderDebug* debug = nullptr);

// Forward pass that keeps per-sample state so a later backward pass can run
// without replaying the quadrature.
struct RaySampleState {
  Vec3 p;
  double t = 0.0;
  double delta = 0.0;
  bool inside = false;
  double d_raw = 0.0;
  Vec3 f_raw = Vec3::Zero();
  double sigma = 0.0;
  Vec3 color = Vec3::Zero();
  double alpha = 0.0;
  double trans = 1.0;
  double weight = 0.0;
};

struct RayForwardCache {
  std::vector<RaySampleState> samples;
  double final_transmittance = 1.0;
};

RenderResult render_ray_cached(const VoxelField& field, const Ray& ray, int n_samples,
                               const SampleRng& rng, RayForwardCache& cache);


struct RenderUpstream {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double opacity = 0.0;
};

// Per-ray gradient contribution in compact form; index layout matches the
// field's flat parameter vectors. Color gradients are stored per vertex with
// all three channels fused.
struct RayGradients {
  struct Entry {
    std::int32_t level;
    std::uint32_t index;
    double value;
  };
  struct ColorEntry {
    std::int32_t level;
    std::uint32_t vertex;
    double rgb[3];
  };
  std::vector<Entry> density;
  std::vector<ColorEntry> color;
  Vec3 background = Vec3::Zero();  // w.r.t. background logits
  Vec3 appearance = Vec3::Zero();  // w.r.t. the ray camera's latent
  int camera = -1;
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::Zero();
};

// Exact reverse-mode gradients of the quadrature in render_ray. Recomputes
// the forward pass from the same rng keys and throws MismatchedForwardError
// when the recomputation disagrees with forward_result.
RayGradients render_ray_backward(const VoxelField& field, const Ray& ray, int n_samples,
                                 const SampleRng& rng, const RenderResult& forward_result,
                                 const RenderUpstream& upstream);

// Backward from a cached forward pass; appends into grads.
void render_ray_backward_cached(const VoxelField& field, const Ray& ray,
                                const RayForwardCache& cache, const RenderResult& forward_result,
                                const RenderUpstream& upstream, RayGradients& grads);

// Dense per-field gradient accumulator.
struct FieldGradients {
  std::vector<std::vector<double>> density;
  std::vector<std::vector<double>> color;
  Vec3 background = Vec3::Zero();
  std::vector<Vec3> appearance;

  void init_like(const VoxelField& field);
  void set_zero();
  void accumulate(const RayGradients& ray);
};

struct DecayConfig {
  double lambda_max = 1e-2;
  int coarse_epochs = 5;
  int first_decayed_level = 2;
};

// L2 penalty coefficient per level: fine levels are decayed during the first
// coarse_epochs epochs, the coarse levels never.
std::vector<double> coarse_to_fine_decay(int epoch, const DecayConfig& config, int n_levels);

double softplus(double x);
double sigmoid(double x);

}  // namespace rigrefine
