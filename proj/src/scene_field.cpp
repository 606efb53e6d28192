#include "rigrefine/scene_field.hpp"

#include <algorithm>
#include <cmath>

namespace rigrefine {

double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VoxelField::VoxelField(const Eigen::AlignedBox3d& bounds, std::vector<int> level_resolutions,
                       std::vector<std::string> camera_ids)
    : bounds_(bounds), camera_ids_(std::move(camera_ids)) {
  if (level_resolutions.empty()) throw Error("voxel field needs at least one level");
  int prev = 1;
  for (int res : level_resolutions) {
    if (res < 2) throw Error("level resolution must be >= 2 vertices per axis");
    if (res <= prev) throw Error("level resolutions must be strictly increasing");
    prev = res;
    Level level;
    level.res = res;
    const std::size_t n = static_cast<std::size_t>(res) * res * res;
    level.density.assign(n, 0.0);
    level.color.assign(3 * n, 0.0);
    levels_.push_back(std::move(level));
  }
  appearance_.assign(camera_ids_.size(), Vec3::Zero());
}

int VoxelField::camera_index(const std::string& id) const {
  for (std::size_t i = 0; i < camera_ids_.size(); ++i) {
    if (camera_ids_[i] == id) return static_cast<int>(i);
  }
  return -1;
}

Vec3 VoxelField::background() const {
  return {sigmoid(background_logit_[0]), sigmoid(background_logit_[1]),
          sigmoid(background_logit_[2])};
}

std::size_t VoxelField::param_count() const {
  std::size_t n = 3 + 3 * appearance_.size();
  for (const auto& level : levels_) n += level.density.size() + level.color.size();
  return n;
}

bool VoxelField::interp(int level_index, const Vec3& p, LevelInterp& out) const {
  if (!bounds_.contains(p)) return false;
  const Level& level = levels_[level_index];
  const int res = level.res;
  const Vec3 extent = bounds_.max() - bounds_.min();
  const Vec3 scale((res - 1) / extent.x(), (res - 1) / extent.y(), (res - 1) / extent.z());

  Vec3 x = (p - bounds_.min()).cwiseProduct(scale);
  int i0[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    int i = static_cast<int>(std::floor(x[a]));
    if (i < 0) i = 0;
    if (i > res - 2) i = res - 2;
    i0[a] = i;
    f[a] = x[a] - i;
  }

  const std::uint32_t stride_y = static_cast<std::uint32_t>(res);
  const std::uint32_t stride_z = static_cast<std::uint32_t>(res) * res;
  int c = 0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? f[2] : 1.0 - f[2];
    const double gz = dz ? 1.0 : -1.0;
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? f[1] : 1.0 - f[1];
      const double gy = dy ? 1.0 : -1.0;
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? f[0] : 1.0 - f[0];
        const double gx = dx ? 1.0 : -1.0;
        out.index[c] = static_cast<std::uint32_t>(i0[0] + dx) +
                       stride_y * static_cast<std::uint32_t>(i0[1] + dy) +
                       stride_z * static_cast<std::uint32_t>(i0[2] + dz);
        out.weight[c] = wx * wy * wz;
        out.dweight[c] =
            Vec3(gx * wy * wz * scale.x(), wx * gy * wz * scale.y(), wx * wy * gz * scale.z());
        ++c;
      }
    }
  }
  return true;
}

VoxelField::Sample VoxelField::sample(const Vec3& p, int camera) const {
  Sample s;
  if (!bounds_.contains(p)) {
    s.density = 0.0;
    s.color = background();
    return s;
  }
  double d_raw = 0.0;
  Vec3 f_raw = Vec3::Zero();
  LevelInterp li;
  for (int l = 0; l < levels(); ++l) {
    interp(l, p, li);
    const auto& dv = levels_[l].density;
    const auto& cv = levels_[l].color;
    for (int c = 0; c < 8; ++c) {
      const double w = li.weight[c];
      const std::uint32_t idx = li.index[c];
      d_raw += w * dv[idx];
      f_raw[0] += w * cv[3 * idx];
      f_raw[1] += w * cv[3 * idx + 1];
      f_raw[2] += w * cv[3 * idx + 2];
    }
  }
  if (camera >= 0 && camera < static_cast<int>(appearance_.size())) {
    f_raw += appearance_[camera];
  }
  s.density = softplus(d_raw);
  s.color = Vec3(sigmoid(f_raw[0]), sigmoid(f_raw[1]), sigmoid(f_raw[2]));
  return s;
}

namespace {

struct SamplePoint {
  double t;
  double delta;
};

void stratified_samples(const Ray& ray, int n, const SampleRng& rng,
                        std::vector<SamplePoint>& out) {
  CounterRng stream(rng.seed, rng.stream);
  const double span = (ray.far - ray.near) / n;
  out.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].t = ray.near + (i + stream.next_double()) * span;
  }
  for (int i = 0; i + 1 < n; ++i) {
    out[static_cast<std::size_t>(i)].delta =
        out[static_cast<std::size_t>(i) + 1].t - out[static_cast<std::size_t>(i)].t;
  }
  out[static_cast<std::size_t>(n) - 1].delta = ray.far - out[static_cast<std::size_t>(n) - 1].t;
}

}  // namespace

RenderResult render_ray(const VoxelField& field, const Ray& ray, int n_samples,
                        const SampleRng& rng, RenderDebug* debug) {
  if (n_samples < 2) throw Error("render_ray needs n_samples >= 2");
  std::vector<SamplePoint> samples;
  stratified_samples(ray, n_samples, rng, samples);
  if (debug) {
    debug->t.clear();
    debug->weight.clear();
    debug->transmittance.clear();
  }

  RenderResult out;
  double transmittance = 1.0;
  double depth_sum = 0.0;
  for (const SamplePoint& s : samples) {
    const Vec3 p = ray.origin + s.t * ray.direction;
    const VoxelField::Sample fs = field.sample(p, ray.camera);
    const double alpha = 1.0 - std::exp(-fs.density * s.delta);
    const double w = transmittance * alpha;
    out.color += w * fs.color;
    depth_sum += w * s.t;
    out.opacity += w;
    if (debug) {
      debug->t.push_back(s.t);
      debug->weight.push_back(w);
      debug->transmittance.push_back(transmittance);
    }
    transmittance *= 1.0 - alpha;
  }
  if (debug) debug->final_transmittance = transmittance;
  out.color += transmittance * field.background();
  out.depth_valid = out.opacity >= VoxelField::kDepthOpacityFloor;
  out.expected_depth = out.depth_valid ? depth_sum / out.opacity : 0.0;
  return out;
}

RenderResult render_ray_cached(const VoxelField& field, const Ray& ray, int n_samples,
                               const SampleRng& rng, RayForwardCache& cache) {
  if (n_samples < 2) throw Error("render_ray needs n_samples >= 2");
  std::vector<SamplePoint> samples;
  stratified_samples(ray, n_samples, rng, samples);
  cache.samples.resize(samples.size());

  RenderResult out;
  double transmittance = 1.0;
  double depth_sum = 0.0;
  VoxelField::LevelInterp li;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    RaySampleState& st = cache.samples[i];
    st.t = samples[i].t;
    st.delta = samples[i].delta;
    st.p = ray.origin + st.t * ray.direction;
    st.inside = field.inside(st.p);
    st.trans = transmittance;
    if (st.inside) {
      double d_raw = 0.0;
      Vec3 f_raw = Vec3::Zero();
      for (int l = 0; l < field.levels(); ++l) {
        field.interp(l, st.p, li);
        const auto& dv = field.density(l);
        const auto& cv = field.color(l);
        for (int c = 0; c < 8; ++c) {
          const double w = li.weight[c];
          const std::uint32_t idx = li.index[c];
          d_raw += w * dv[idx];
          f_raw[0] += w * cv[3 * idx];
          f_raw[1] += w * cv[3 * idx + 1];
          f_raw[2] += w * cv[3 * idx + 2];
        }
      }
      if (ray.camera >= 0 && ray.camera < static_cast<int>(field.appearance().size())) {
        f_raw += field.appearance()[ray.camera];
      }
      st.d_raw = d_raw;
      st.f_raw = f_raw;
      st.sigma = softplus(d_raw);
      st.color = Vec3(sigmoid(f_raw[0]), sigmoid(f_raw[1]), sigmoid(f_raw[2]));
    } else {
      st.d_raw = 0.0;
      st.f_raw = Vec3::Zero();
      st.sigma = 0.0;
      st.color = field.background();
    }
    st.alpha = 1.0 - std::exp(-st.sigma * st.delta);
    st.weight = st.trans * st.alpha;
    out.color += st.weight * st.color;
    depth_sum += st.weight * st.t;
    out.opacity += st.weight;
    transmittance *= 1.0 - st.alpha;
  }
  cache.final_transmittance = transmittance;
  out.color += transmittance * field.background();
  out.depth_valid = out.opacity >= VoxelField::kDepthOpacityFloor;
  out.expected_depth = out.depth_valid ? depth_sum / out.opacity : 0.0;
  return out;
}

void render_ray_backward_cached(const VoxelField& field, const Ray& ray,
                                const RayForwardCache& cache, const RenderResult& forward_result,
                                const RenderUpstream& upstream, RayGradients& grads) {
  grads.camera = ray.camera;

  const Vec3& gc = upstream.color;
  const double gd = forward_result.depth_valid ? upstream.depth : 0.0;
  const double go = upstream.opacity;
  const Vec3 background = field.background();
  const double opacity = forward_result.opacity;
  const double depth = forward_result.expected_depth;

  // Suffix accumulator A_i = sum_{k>i} G_k w_k + (gc . B) T_end handles the
  // transmittance coupling; dL/dsigma_i = delta_i (G_i T_i (1 - a_i) - A_i).
  double suffix = gc.dot(background) * cache.final_transmittance;
  const Vec3 d_bg_color = cache.final_transmittance * gc;

  VoxelField::LevelInterp li;
  for (std::size_t ii = cache.samples.size(); ii-- > 0;) {
    const RaySampleState& st = cache.samples[ii];

    double g_w = gc.dot(st.color) + go;
    if (gd != 0.0) g_w += gd * (st.t - depth) / opacity;

    const double d_sigma = st.delta * (g_w * st.trans * (1.0 - st.alpha) - suffix);
    suffix += g_w * st.weight;

    if (!st.inside) continue;  // zero density and constant color outside

    const double d_draw = sigmoid(st.d_raw) * d_sigma;
    Vec3 d_fraw;
    for (int ch = 0; ch < 3; ++ch) {
      d_fraw[ch] = st.color[ch] * (1.0 - st.color[ch]) * st.weight * gc[ch];
    }

    // Samples whose decoded gradients sit at the numeric noise floor carry
    // nothing worth scattering.
    if (std::abs(d_draw) < 1e-18 && std::abs(d_fraw[0]) < 1e-18 &&
        std::abs(d_fraw[1]) < 1e-18 && std::abs(d_fraw[2]) < 1e-18) {
      continue;
    }

    if (ray.camera >= 0) grads.appearance += d_fraw;

    Vec3 d_p = Vec3::Zero();
    for (int l = 0; l < field.levels(); ++l) {
      field.interp(l, st.p, li);
      const auto& dv = field.density(l);
      const auto& cv = field.color(l);
      for (int c = 0; c < 8; ++c) {
        const double w = li.weight[c];
        const std::uint32_t idx = li.index[c];
        grads.density.push_back({l, idx, d_draw * w});
        RayGradients::ColorEntry ce;
        ce.level = l;
        ce.vertex = idx;
        ce.rgb[0] = d_fraw[0] * w;
        ce.rgb[1] = d_fraw[1] * w;
        ce.rgb[2] = d_fraw[2] * w;
        grads.color.push_back(ce);
        const double vertex_value =
            dv[idx] * d_draw + cv[3 * idx] * d_fraw[0] + cv[3 * idx + 1] * d_fraw[1] +
            cv[3 * idx + 2] * d_fraw[2];
        d_p += vertex_value * li.dweight[c];
      }
    }
    grads.origin += d_p;
    grads.direction += st.t * d_p;
  }

  for (int ch = 0; ch < 3; ++ch) {
    grads.background[ch] += d_bg_color[ch] * background[ch] * (1.0 - background[ch]);
  }
}

RayGradients render_ray_backward(const VoxelField& field, const Ray& ray, int n_samples,
                                 const SampleRng& rng, const RenderResult& forward_result,
                                 const RenderUpstream& upstream) {
  RayForwardCache cache;
  const RenderResult replay = render_ray_cached(field, ray, n_samples, rng, cache);
  if ((replay.color - forward_result.color).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(replay.opacity - forward_result.opacity) > 1e-9 ||
      replay.depth_valid != forward_result.depth_valid ||
      (replay.depth_valid &&
       std::abs(replay.expected_depth - forward_result.expected_depth) > 1e-9)) {
    throw MismatchedForwardError(
        "backward replay disagrees with the paired forward result; rng keys differ");
  }
  RayGradients grads;
  grads.density.reserve(cache.samples.size() * field.levels() * 8);
  grads.color.reserve(cache.samples.size() * field.levels() * 8);
  render_ray_backward_cached(field, ray, cache, replay, upstream, grads);
  return grads;
}

void FieldGradients::init_like(const VoxelField& field) {
  density.resize(static_cast<std::size_t>(field.levels()));
  color.resize(static_cast<std::size_t>(field.levels()));
  for (int l = 0; l < field.levels(); ++l) {
    density[static_cast<std::size_t>(l)].assign(field.density(l).size(), 0.0);
    color[static_cast<std::size_t>(l)].assign(field.color(l).size(), 0.0);
  }
  background = Vec3::Zero();
  appearance.assign(field.appearance().size(), Vec3::Zero());
}

void FieldGradients::set_zero() {
  for (auto& d : density) std::fill(d.begin(), d.end(), 0.0);
  for (auto& c : color) std::fill(c.begin(), c.end(), 0.0);
  background = Vec3::Zero();
  for (auto& a : appearance) a = Vec3::Zero();
}

void FieldGradients::accumulate(const RayGradients& ray) {
  for (const auto& e : ray.density) density[static_cast<std::size_t>(e.level)][e.index] += e.value;
  for (const auto& e : ray.color) {
    auto& level = color[static_cast<std::size_t>(e.level)];
    level[3 * e.vertex] += e.rgb[0];
    level[3 * e.vertex + 1] += e.rgb[1];
    level[3 * e.vertex + 2] += e.rgb[2];
  }
  background += ray.background;
  if (ray.camera >= 0 && ray.camera < static_cast<int>(appearance.size())) {
    appearance[static_cast<std::size_t>(ray.camera)] += ray.appearance;
  }
}

std::vector<double> coarse_to_fine_decay(int epoch, const DecayConfig& config, int n_levels) {
  std::vector<double> out(static_cast<std::size_t>(n_levels), 0.0);
  if (epoch < config.coarse_epochs) {
    for (int l = config.first_decayed_level; l < n_levels; ++l) {
      out[static_cast<std::size_t>(l)] = config.lambda_max;
    }
  }
  return out;
}

}  // namespace rigrefine
