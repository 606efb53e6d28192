#include "rigrefine/corrections.hpp"

#include <cmath>

#include "rigrefine/rng.hpp"

namespace rigrefine {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

Pose decode_correction(const Vec6& v) {
  Pose p;
  p.translation = v.head<3>();
  p.rotation = rodrigues_exp(v.tail<3>());
  return p;
}

TrajectoryCorrectionNet::TrajectoryCorrectionNet(double t_min, double t_max,
                                                 std::uint64_t seed, int frequency_pairs,
                                                 int hidden)
    : t_min_(t_min),
      t_max_(t_max),
      frequency_pairs_(frequency_pairs),
      hidden_(hidden),
      input_dim_(2 * frequency_pairs) {
  if (!(t_max_ > t_min_)) throw Error("trajectory net needs t_max > t_min");
  const std::size_t h = static_cast<std::size_t>(hidden_);
  const std::size_t in = static_cast<std::size_t>(input_dim_);
  w1_ = 0;
  b1_ = w1_ + h * in;
  w2_ = b1_ + h;
  b2_ = w2_ + h * h;
  w3_ = b2_ + h;
  b3_ = w3_ + 6 * h;
  params_.assign(b3_ + 6, 0.0);

  // Xavier-uniform hidden layers; the output head stays at zero so the net
  // decodes to the identity correction until the first update.
  CounterRng rng(seed, 0x7261'6a63'6f72'7221ull);
  const double a1 = std::sqrt(6.0 / static_cast<double>(in + h));
  for (std::size_t i = 0; i < h * in; ++i) params_[w1_ + i] = rng.uniform(-a1, a1);
  const double a2 = std::sqrt(6.0 / static_cast<double>(h + h));
  for (std::size_t i = 0; i < h * h; ++i) params_[w2_ + i] = rng.uniform(-a2, a2);
}

double TrajectoryCorrectionNet::normalize_time(double t) const {
  if (t < t_min_ || t > t_max_) {
    throw TimeOutOfRangeError("time " + std::to_string(t) + " outside correction span [" +
                              std::to_string(t_min_) + ", " + std::to_string(t_max_) + "]");
  }
  return 2.0 * (t - t_min_) / (t_max_ - t_min_) - 1.0;
}

void TrajectoryCorrectionNet::encode(double t, Eigen::VectorXd& features) const {
  const double u = normalize_time(t);
  features.resize(input_dim_);
  double freq = kPi;
  for (int k = 0; k < frequency_pairs_; ++k) {
    features[2 * k] = std::sin(freq * u);
    features[2 * k + 1] = std::cos(freq * u);
    freq *= 2.0;
  }
}

Vec6 TrajectoryCorrectionNet::forward(double t, Cache* cache) const {
  Eigen::VectorXd x;
  encode(t, x);
  const int h = hidden_;
  const int in = input_dim_;

  Eigen::VectorXd h1(h), h2(h);
  for (int i = 0; i < h; ++i) {
    double s = params_[b1_ + i];
    const double* w = &params_[w1_ + static_cast<std::size_t>(i) * in];
    for (int j = 0; j < in; ++j) s += w[j] * x[j];
    h1[i] = std::tanh(s);
  }
  for (int i = 0; i < h; ++i) {
    double s = params_[b2_ + i];
    const double* w = &params_[w2_ + static_cast<std::size_t>(i) * h];
    for (int j = 0; j < h; ++j) s += w[j] * h1[j];
    h2[i] = std::tanh(s);
  }
  Vec6 out;
  for (int o = 0; o < 6; ++o) {
    double s = params_[b3_ + o];
    const double* w = &params_[w3_ + static_cast<std::size_t>(o) * h];
    for (int j = 0; j < h; ++j) s += w[j] * h2[j];
    out[o] = s;
  }
  if (cache) {
    cache->t = t;
    cache->input = std::move(x);
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
    cache->out = out;
  }
  return out;
}

void TrajectoryCorrectionNet::backward(const Cache& cache, const Vec6& d_out,
                                       std::vector<double>& grad) const {
  if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
  const int h = hidden_;
  const int in = input_dim_;

  Eigen::VectorXd dh2 = Eigen::VectorXd::Zero(h);
  for (int o = 0; o < 6; ++o) {
    const double g = d_out[o];
    double* gw = &grad[w3_ + static_cast<std::size_t>(o) * h];
    const double* w = &params_[w3_ + static_cast<std::size_t>(o) * h];
    for (int j = 0; j < h; ++j) {
      gw[j] += g * cache.h2[j];
      dh2[j] += g * w[j];
    }
    grad[b3_ + o] += g;
  }

  Eigen::VectorXd dz2(h);
  for (int i = 0; i < h; ++i) dz2[i] = dh2[i] * (1.0 - cache.h2[i] * cache.h2[i]);

  Eigen::VectorXd dh1 = Eigen::VectorXd::Zero(h);
  for (int i = 0; i < h; ++i) {
    const double g = dz2[i];
    double* gw = &grad[w2_ + static_cast<std::size_t>(i) * h];
    const double* w = &params_[w2_ + static_cast<std::size_t>(i) * h];
    for (int j = 0; j < h; ++j) {
      gw[j] += g * cache.h1[j];
      dh1[j] += g * w[j];
    }
    grad[b2_ + i] += g;
  }

  for (int i = 0; i < h; ++i) {
    const double g = dh1[i] * (1.0 - cache.h1[i] * cache.h1[i]);
    double* gw = &grad[w1_ + static_cast<std::size_t>(i) * in];
    for (int j = 0; j < in; ++j) gw[j] += g * cache.input[j];
    grad[b1_ + i] += g;
  }
}

CorrectionSet::CorrectionSet(const RigCalibration& rig) : reference_(rig.reference) {
  for (const auto& s : rig.sensors) {
    if (s.id != reference_) ext_[s.id] = ExtrinsicCorrection{};
  }
}

const ExtrinsicCorrection& CorrectionSet::extrinsic(const std::string& sensor) const {
  static const ExtrinsicCorrection kPinned{};
  if (sensor == reference_) return kPinned;
  const auto it = ext_.find(sensor);
  if (it == ext_.end()) throw UnknownSensorError("no extrinsic correction for '" + sensor + "'");
  return it->second;
}

ExtrinsicCorrection& CorrectionSet::extrinsic_mutable(const std::string& sensor) {
  if (sensor == reference_) {
    throw Error("extrinsic correction of reference sensor '" + sensor + "' is pinned");
  }
  const auto it = ext_.find(sensor);
  if (it == ext_.end()) throw UnknownSensorError("no extrinsic correction for '" + sensor + "'");
  return it->second;
}

Pose CorrectionSet::extrinsic_pose(const std::string& sensor) const {
  if (sensor == reference_) return Pose::identity();
  return extrinsic(sensor).pose();
}

void CorrectionSet::set_trajectory_net(const std::string& scene, TrajectoryCorrectionNet net) {
  nets_[scene] = std::move(net);
}

bool CorrectionSet::has_trajectory_net(const std::string& scene) const {
  return nets_.count(scene) != 0;
}

const TrajectoryCorrectionNet& CorrectionSet::trajectory_net(const std::string& scene) const {
  const auto it = nets_.find(scene);
  if (it == nets_.end()) throw Error("no trajectory correction net for scene '" + scene + "'");
  return it->second;
}

TrajectoryCorrectionNet& CorrectionSet::trajectory_net_mutable(const std::string& scene) {
  const auto it = nets_.find(scene);
  if (it == nets_.end()) throw Error("no trajectory correction net for scene '" + scene + "'");
  return it->second;
}

Pose CorrectionSet::trajectory_correction_pose(const std::string& scene, double t) const {
  const auto it = nets_.find(scene);
  if (it == nets_.end()) return Pose::identity();
  return it->second.correction(t);
}

PoseChainForward corrected_pose_forward(const CorrectionSet& corr, const std::string& scene,
                                        const RigCalibration& calib, const Trajectory& traj,
                                        const std::string& sensor, double t) {
  PoseChainForward ctx;
  ctx.scene = scene;
  ctx.sensor = sensor;
  ctx.t = t;
  ctx.is_reference = (sensor == calib.reference);

  const SensorInfo& info = calib.sensor(sensor);
  const Pose ref = traj.interpolate(t);
  ctx.q_ref = ref.rotation;
  ctx.t_ref = ref.translation;

  ctx.has_traj_net = corr.has_trajectory_net(scene);
  if (ctx.has_traj_net) {
    ctx.traj_vec = corr.trajectory_net(scene).forward(t, &ctx.mlp);
    const Pose tc = decode_correction(ctx.traj_vec);
    ctx.q_tc = tc.rotation;
    ctx.t_tc = tc.translation;
  }

  ctx.q_x = info.extrinsic.rotation;
  ctx.t_x = info.extrinsic.translation;

  if (!ctx.is_reference) {
    ctx.ext_vec = corr.extrinsic(sensor).v;
    const Pose ec = decode_correction(ctx.ext_vec);
    ctx.q_ec = ec.rotation;
    ctx.t_ec = ec.translation;
  }

  // Same product path as Pose::compose, so identity corrections reproduce
  // sensor_pose bit-exactly.
  ctx.q1 = ctx.q_ref * ctx.q_tc;
  ctx.t1 = ctx.q_ref * ctx.t_tc + ctx.t_ref;
  ctx.q2 = ctx.q1 * ctx.q_x;
  ctx.t2 = ctx.q1 * ctx.t_x + ctx.t1;
  ctx.q3 = ctx.q2 * ctx.q_ec;
  ctx.t3 = ctx.q2 * ctx.t_ec + ctx.t2;
  return ctx;
}

Pose corrected_sensor_pose(const CorrectionSet& corr, const std::string& scene,
                           const RigCalibration& calib, const Trajectory& traj,
                           const std::string& sensor, double t) {
  return corrected_pose_forward(corr, scene, calib, traj, sensor, t).pose();
}

Pose corrected_sensor_pose(const CorrectionSet& corr, const RigCalibration& calib,
                           const Trajectory& traj, const std::string& sensor, double t) {
  if (corr.trajectory_nets().size() > 1) {
    throw Error("scene id required when multiple trajectory nets are present");
  }
  const std::string scene =
      corr.trajectory_nets().empty() ? std::string() : corr.trajectory_nets().begin()->first;
  return corrected_sensor_pose(corr, scene, calib, traj, sensor, t);
}

void CorrectionGradients::init_like(const CorrectionSet& corr) {
  extrinsic.clear();
  trajectory.clear();
  for (const auto& [id, block] : corr.extrinsics()) {
    (void)block;
    extrinsic[id] = Vec6::Zero();
  }
  if (!corr.reference().empty()) extrinsic[corr.reference()] = Vec6::Zero();
  for (const auto& [scene, net] : corr.trajectory_nets()) {
    trajectory[scene].assign(net.param_count(), 0.0);
  }
}

void CorrectionGradients::add(const CorrectionGradients& other) {
  for (const auto& [id, g] : other.extrinsic) {
    auto it = extrinsic.find(id);
    if (it == extrinsic.end()) {
      extrinsic[id] = g;
    } else {
      it->second += g;
    }
  }
  for (const auto& [scene, g] : other.trajectory) {
    auto it = trajectory.find(scene);
    if (it == trajectory.end()) {
      trajectory[scene] = g;
    } else {
      if (it->second.size() != g.size()) throw ShapeMismatchError("trajectory grad size mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
}

void CorrectionGradients::scale(double s) {
  for (auto& [id, g] : extrinsic) g *= s;
  for (auto& [scene, g] : trajectory) {
    for (double& x : g) x *= s;
  }
}

void correction_gradients(const CorrectionSet& corr, const PoseChainForward& ctx,
                          const PoseGrad& upstream, CorrectionGradients& out) {
  Vec4 dq3 = upstream.rotation;
  Vec3 dt3 = upstream.translation;

  // P3 = P2 ∘ Pec
  Vec4 dq2 = quat_right_matrix(ctx.q_ec).transpose() * dq3 +
             rotate_backward_rotation(ctx.q2, ctx.t_ec, dt3);
  Vec4 dq_ec = quat_left_matrix(ctx.q2).transpose() * dq3;
  Vec3 dt_ec = rotate_backward_vector(ctx.q2, dt3);
  Vec3 dt2 = dt3;

  // P2 = P1 ∘ Px (constant rig extrinsic)
  Vec4 dq1 = quat_right_matrix(ctx.q_x).transpose() * dq2 +
             rotate_backward_rotation(ctx.q1, ctx.t_x, dt2);
  Vec3 dt1 = dt2;

  // P1 = Pref ∘ Ptc (constant interpolated reference pose)
  Vec4 dq_tc = quat_left_matrix(ctx.q_ref).transpose() * dq1;
  Vec3 dt_tc = rotate_backward_vector(ctx.q_ref, dt1);

  if (!ctx.is_reference) {
    Vec6 g;
    g.head<3>() = dt_ec;
    g.tail<3>() = rodrigues_jacobian(ctx.ext_vec.tail<3>()).transpose() * dq_ec;
    auto it = out.extrinsic.find(ctx.sensor);
    if (it == out.extrinsic.end()) {
      out.extrinsic[ctx.sensor] = g;
    } else {
      it->second += g;
    }
  } else if (!out.extrinsic.count(ctx.sensor)) {
    out.extrinsic[ctx.sensor] = Vec6::Zero();  // pinned gauge, stays zero
  }

  if (ctx.has_traj_net) {
    Vec6 d_traj;
    d_traj.head<3>() = dt_tc;
    d_traj.tail<3>() = rodrigues_jacobian(ctx.traj_vec.tail<3>()).transpose() * dq_tc;
    const TrajectoryCorrectionNet& net = corr.trajectory_net(ctx.scene);
    net.backward(ctx.mlp, d_traj, out.trajectory[ctx.scene]);
  }
}

Eigen::VectorXd aggregate_shared_gradients(const std::vector<Eigen::VectorXd>& blocks) {
  if (blocks.empty()) throw EmptyListError("no gradient blocks to aggregate");
  Eigen::VectorXd mean = blocks.front();
  for (std::size_t i = 1; i < blocks.size(); ++i) {
    if (blocks[i].size() != mean.size()) {
      throw ShapeMismatchError("gradient block size mismatch");
    }
    mean += blocks[i];
  }
  return mean / static_cast<double>(blocks.size());
}

}  // namespace rigrefine
