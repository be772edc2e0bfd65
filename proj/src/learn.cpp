#include "ocl/learn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ocl {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

// little-endian scalar IO (file format helpers)
void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(os, u);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("policy file truncated");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("policy file truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is) {
  const uint64_t u = get_u64(is);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

constexpr char kPolicyMagic[8] = {'O', 'C', 'L', 'P', 'O', 'L', '1', '\0'};
constexpr uint32_t kPolicyVersion = 1;

}  // namespace

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(const std::vector<int>& dims, Rng& rng, double out_scale)
    : dims_(dims) {
  layers_.resize(dims.size() - 1);
  for (size_t i = 0; i < layers_.size(); ++i) {
    const int in = dims[i], out = dims[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const double scale = (i + 1 == layers_.size()) ? out_scale : 1.0;
    Layer& l = layers_[i];
    l.w.resize(out, in);
    l.b = VecX::Zero(out);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c)
        l.w(r, c) = scale * rng.uniform(-bound, bound);
    l.gw = MatX::Zero(out, in);
    l.gb = VecX::Zero(out);
  }
}

const MatX& Mlp::forward(const MatX& x) {
  acts_.resize(layers_.size() + 1);
  acts_[0] = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    MatX z = acts_[i] * layers_[i].w.transpose();
    z.rowwise() += layers_[i].b.transpose();
    acts_[i + 1] = (i + 1 < layers_.size()) ? z.array().tanh().matrix() : z;
  }
  return acts_.back();
}

MatX Mlp::backward(const MatX& dy) {
  MatX d = dy;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    Layer& l = layers_[i];
    l.gw += d.transpose() * acts_[i];
    l.gb += d.colwise().sum().transpose();
    d = d * l.w;
    if (i > 0) d.array() *= 1.0 - acts_[i].array().square();  // tanh'
  }
  return d;
}

void Mlp::zero_grad() {
  for (Layer& l : layers_) {
    l.gw.setZero();
    l.gb.setZero();
  }
}

int Mlp::param_count() const {
  int n = 0;
  for (const Layer& l : layers_)
    n += static_cast<int>(l.w.size() + l.b.size());
  return n;
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(const PolicySpec& spec, Rng& rng) : spec_(spec) {
  std::vector<int> adims{spec.obs_dim};
  adims.insert(adims.end(), spec.hidden.begin(), spec.hidden.end());
  adims.push_back(spec.act_dim);
  std::vector<int> cdims{spec.obs_dim};
  cdims.insert(cdims.end(), spec.hidden.begin(), spec.hidden.end());
  cdims.push_back(1);
  // A small output scale keeps the initial action mean near the default
  // stance while exploration comes from the (unit) stddev.
  actor_ = Mlp(adims, rng, 0.01);
  critic_ = Mlp(cdims, rng, 1.0);
  log_std_ = VecX::Constant(spec.act_dim, spec.init_log_std);
  log_std_grad_ = VecX::Zero(spec.act_dim);
}

VecX Policy::value(const MatX& obs) { return critic_.forward(obs).col(0); }

MatX Policy::sample(const MatX& mean, Rng& rng) const {
  MatX a = mean;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      a(i, j) += std::exp(log_std_[j]) * rng.normal();
  return a;
}

VecX Policy::log_prob(const MatX& mean, const MatX& actions) const {
  const Eigen::ArrayXd inv_sigma = (-log_std_.array()).exp();
  MatX z = actions - mean;
  z.array().rowwise() *= inv_sigma.transpose();
  return (-0.5 * z.array().square().rowwise().sum() - log_std_.sum() -
          0.5 * kLog2Pi * spec_.act_dim)
      .matrix();
}

double Policy::entropy() const {
  return log_std_.sum() + 0.5 * spec_.act_dim * (1.0 + kLog2Pi);
}

int Policy::param_count() const {
  return actor_.param_count() + critic_.param_count() + spec_.act_dim;
}

namespace {

void pack_mlp(const Mlp& net, VecX& out, int& at) {
  for (const Mlp::Layer& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) out[at++] = l.w(r, c);
    for (Eigen::Index r = 0; r < l.b.size(); ++r) out[at++] = l.b[r];
  }
}

void unpack_mlp(Mlp& net, const VecX& in, int& at) {
  for (Mlp::Layer& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) l.w(r, c) = in[at++];
    for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b[r] = in[at++];
  }
}

void pack_mlp_grads(const Mlp& net, VecX& out, int& at) {
  for (const Mlp::Layer& l : net.layers()) {
    for (Eigen::Index r = 0; r < l.gw.rows(); ++r)
      for (Eigen::Index c = 0; c < l.gw.cols(); ++c) out[at++] = l.gw(r, c);
    for (Eigen::Index r = 0; r < l.gb.size(); ++r) out[at++] = l.gb[r];
  }
}

}  // namespace

VecX Policy::flat_params() const {
  VecX p(param_count());
  int at = 0;
  pack_mlp(actor_, p, at);
  pack_mlp(critic_, p, at);
  for (Eigen::Index j = 0; j < log_std_.size(); ++j) p[at++] = log_std_[j];
  return p;
}

void Policy::set_flat_params(const VecX& p) {
  int at = 0;
  unpack_mlp(actor_, p, at);
  unpack_mlp(critic_, p, at);
  for (Eigen::Index j = 0; j < log_std_.size(); ++j) log_std_[j] = p[at++];
}

VecX Policy::flat_grads() const {
  VecX g(param_count());
  int at = 0;
  pack_mlp_grads(actor_, g, at);
  pack_mlp_grads(critic_, g, at);
  for (Eigen::Index j = 0; j < log_std_grad_.size(); ++j)
    g[at++] = log_std_grad_[j];
  return g;
}

void Policy::zero_grad() {
  actor_.zero_grad();
  critic_.zero_grad();
  log_std_grad_.setZero();
}

VecX action_to_target(const VecX& action, const VecX& defaults, double scale,
                      double wheel_scale, int wheel_joints) {
  VecX t = defaults;
  const int n = static_cast<int>(action.size());
  const int legs = n - wheel_joints;
  for (int j = 0; j < legs; ++j) t[j] += scale * action[j];
  for (int j = legs; j < n; ++j) t[j] = wheel_scale * action[j];
  return t;
}

// ---------------------------------------------------------------------------
// Adam

void AdamState::step(VecX& params, const VecX& grads, double lr, double beta1,
                     double beta2, double eps) {
  ++t;
  m = beta1 * m + (1.0 - beta1) * grads;
  v = beta2 * v + (1.0 - beta2) * grads.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -=
      lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

// ---------------------------------------------------------------------------
// Curriculum rule

int promote(const EpisodeResult& result, int max_row) {
  if (result.commanded_distance < 1e-9) return result.row;  // idle command
  if (result.exited_tile) return std::min(result.row + 1, max_row);
  if (result.progress < 0.5 * result.commanded_distance)
    return std::max(result.row - 1, 0);
  return result.row;
}

// ---------------------------------------------------------------------------
// VecEnv

VecEnv::VecEnv(const RobotModel& model, const Heightfield* terrain,
               const SimParams& sim_params, const RewardConfig& reward_cfg,
               const VecEnvConfig& cfg)
    : model_(model),
      sim_(model_, terrain, sim_params),
      reward_cfg_(reward_cfg),
      cfg_(cfg),
      reset_rng_(Rng(cfg.seed).fork(1)),
      command_rng_(Rng(cfg.seed).fork(2)) {
  reward_cfg_.dt = sim_.params().tick_dt();
  states_.resize(cfg.env_count);
  commands_.resize(cfg.env_count);
  prev_actions_.resize(cfg.env_count);
  rows_.assign(cfg.env_count, 0);
  cols_.assign(cfg.env_count, 0);
  spawn_xy_.resize(cfg.env_count);
  spawn_yaw_.assign(cfg.env_count, 0.0);
  peak_progress_.assign(cfg.env_count, 0.0);
  reset_all();
}

VecEnv::VecEnv(const RobotModel& model, const Curriculum* curriculum,
               const SimParams& sim_params, const RewardConfig& reward_cfg,
               const VecEnvConfig& cfg)
    : model_(model),
      curriculum_(curriculum),
      sim_(model_, &curriculum->field, sim_params),
      reward_cfg_(reward_cfg),
      cfg_(cfg),
      reset_rng_(Rng(cfg.seed).fork(1)),
      command_rng_(Rng(cfg.seed).fork(2)) {
  reward_cfg_.dt = sim_.params().tick_dt();
  states_.resize(cfg.env_count);
  commands_.resize(cfg.env_count);
  prev_actions_.resize(cfg.env_count);
  rows_.assign(cfg.env_count, 0);
  cols_.resize(cfg.env_count);
  for (int i = 0; i < cfg.env_count; ++i)
    cols_[i] = i % CurriculumGrid::kCols;
  spawn_xy_.resize(cfg.env_count);
  spawn_yaw_.assign(cfg.env_count, 0.0);
  peak_progress_.assign(cfg.env_count, 0.0);
  reset_all();
}

Vec2 VecEnv::spawn_position(int i) const {
  if (curriculum_)
    return curriculum_->grid.tile_center(cols_[i], rows_[i]);
  return Vec2::Zero();
}

void VecEnv::reset_env(int i) {
  spawn_xy_[i] = spawn_position(i);
  double yaw = 0.0;
  if (!cfg_.fixed_command && cfg_.randomize_spawn_yaw)
    yaw = reset_rng_.uniform(-kPi, kPi);
  spawn_yaw_[i] = yaw;
  states_[i] = sim_.reset({spawn_xy_[i], yaw}, reset_rng_);
  if (cfg_.fixed_command) {
    commands_[i] = *cfg_.fixed_command;
  } else {
    commands_[i] = Command{command_rng_.uniform(-1.0, 1.0),
                           command_rng_.uniform(-1.0, 1.0),
                           command_rng_.uniform(-1.0, 1.0)};
  }
  prev_actions_[i] = VecX::Zero(act_dim());
  peak_progress_[i] = 0.0;
}

void VecEnv::reset_all() {
  for (int i = 0; i < env_count(); ++i) reset_env(i);
}

void VecEnv::set_rows(const std::vector<int>& rows) {
  if (static_cast<int>(rows.size()) != env_count())
    throw std::runtime_error("row vector size mismatch");
  rows_ = rows;
  for (int& r : rows_)
    r = std::clamp(r, 0, CurriculumGrid::kRows - 1);
}

MatX VecEnv::observations() const {
  MatX obs(env_count(), obs_dim());
  for (int i = 0; i < env_count(); ++i)
    obs.row(i) = sim_.observe(states_[i], commands_[i]).transpose();
  return obs;
}

void VecEnv::finish_episode(int i) {
  ++episodes_ended_;
  if (!curriculum_) return;
  EpisodeResult r;
  r.row = rows_[i];
  r.progress = peak_progress_[i];
  const double cmd_norm = std::hypot(commands_[i].vx, commands_[i].vy);
  r.commanded_distance = cmd_norm * states_[i].episode_time;
  r.exited_tile = peak_progress_[i] > 0.5 * curriculum_->grid.tile_size;
  rows_[i] = promote(r);
}

VecEnv::StepResult VecEnv::step(const MatX& actions) {
  const int n = env_count();
  const int wheel_joints = std::max(0, act_dim() - 8);

  std::vector<VecX> targets(n);
  for (int i = 0; i < n; ++i)
    targets[i] =
        action_to_target(actions.row(i).transpose(), sim_.default_joint_pos(),
                         cfg_.action_scale, cfg_.wheel_action_scale,
                         wheel_joints);

  const std::vector<SimState> prev = states_;
  batch_step(sim_, states_, targets, cfg_.workers);

  StepResult out;
  out.rewards.resize(n);
  out.dones = VecX::Zero(n);
  std::vector<VecX> trunc_rows;

  for (int i = 0; i < n; ++i) {
    const VecX a = actions.row(i).transpose();
    const RewardBreakdown rb = compute_reward(prev[i], states_[i], a,
                                              prev_actions_[i], commands_[i],
                                              reward_cfg_);
    out.rewards[i] = rb.total_after;

    for (int t = 0; t < kNumRewardTerms; ++t) term_sums_[t] += rb.weighted[t];
    reward_sum_ += rb.total_after;
    const Mat3 r = states_[i].base_quat.toRotationMatrix();
    const Vec3 v_body = r.transpose() * states_[i].base_linvel;
    const double cmd_norm = std::hypot(commands_[i].vx, commands_[i].vy);
    if (cmd_norm > 1e-9) {
      speed_sum_ +=
          (v_body.x() * commands_[i].vx + v_body.y() * commands_[i].vy) /
          cmd_norm;
      // displacement along the world-frame command direction from spawn
      const double cy = std::cos(spawn_yaw_[i]), sy = std::sin(spawn_yaw_[i]);
      const Vec2 dir(
          (cy * commands_[i].vx - sy * commands_[i].vy) / cmd_norm,
          (sy * commands_[i].vx + cy * commands_[i].vy) / cmd_norm);
      const Vec2 disp = states_[i].base_pos.head<2>() - spawn_xy_[i];
      peak_progress_[i] = std::max(peak_progress_[i], disp.dot(dir));
    }
    track_sum_ += std::hypot(commands_[i].vx - v_body.x(),
                             commands_[i].vy - v_body.y());
    ++log_count_;

    if (rb.termination.status != EpisodeStatus::Running) {
      out.dones[i] = 1.0;
      if (states_[i].diverged) ++divergences_;
      if (rb.termination.status == EpisodeStatus::Truncated) {
        out.truncated_envs.push_back(i);
        trunc_rows.push_back(sim_.observe(states_[i], commands_[i]));
      }
      finish_episode(i);
      reset_env(i);
    } else {
      prev_actions_[i] = a;
    }
  }

  out.truncated_obs.resize(static_cast<int>(trunc_rows.size()), obs_dim());
  for (size_t k = 0; k < trunc_rows.size(); ++k)
    out.truncated_obs.row(static_cast<int>(k)) = trunc_rows[k].transpose();
  return out;
}

std::array<int, CurriculumGrid::kRows> VecEnv::row_occupancy() const {
  std::array<int, CurriculumGrid::kRows> h{};
  for (int r : rows_) ++h[r];
  return h;
}

VecEnv::LogBlock VecEnv::drain_logs() {
  LogBlock b;
  const double inv = log_count_ > 0 ? 1.0 / log_count_ : 0.0;
  for (int t = 0; t < kNumRewardTerms; ++t) b.term_means[t] = term_sums_[t] * inv;
  b.mean_reward = reward_sum_ * inv;
  b.mean_speed = speed_sum_ * inv;
  b.mean_tracking_error = track_sum_ * inv;
  b.episodes_ended = episodes_ended_;
  b.divergences = divergences_;
  term_sums_ = {};
  reward_sum_ = speed_sum_ = track_sum_ = 0.0;
  log_count_ = 0;
  episodes_ended_ = divergences_ = 0;
  return b;
}

// ---------------------------------------------------------------------------
// Rollouts and GAE

RolloutBuffer collect_rollouts(VecEnv& envs, Policy& policy, int steps,
                               Rng& rng, double gamma) {
  RolloutBuffer buf;
  buf.steps = steps;
  buf.envs = envs.env_count();
  buf.obs.reserve(steps);
  buf.actions.reserve(steps);
  buf.log_probs.reserve(steps);
  buf.rewards.reserve(steps);
  buf.values.reserve(steps);
  buf.dones.reserve(steps);

  for (int t = 0; t < steps; ++t) {
    MatX obs = envs.observations();
    const MatX mean = policy.actor_mean(obs);
    MatX act = policy.sample(mean, rng);
    VecX logp = policy.log_prob(mean, act);
    VecX val = policy.value(obs);

    VecEnv::StepResult sr = envs.step(act);
    // Truncation is not failure: bootstrap the cut-off return with the value
    // of the state the clock interrupted.
    if (!sr.truncated_envs.empty()) {
      const VecX vterm = policy.value(sr.truncated_obs);
      for (size_t k = 0; k < sr.truncated_envs.size(); ++k)
        sr.rewards[sr.truncated_envs[k]] += gamma * vterm[static_cast<int>(k)];
    }

    buf.obs.push_back(std::move(obs));
    buf.actions.push_back(std::move(act));
    buf.log_probs.push_back(std::move(logp));
    buf.rewards.push_back(std::move(sr.rewards));
    buf.values.push_back(std::move(val));
    buf.dones.push_back(std::move(sr.dones));
  }
  buf.bootstrap_value = policy.value(envs.observations());
  return buf;
}

void gae(RolloutBuffer& buf, double gamma, double lam) {
  const int T = buf.steps, N = buf.envs;
  buf.advantages.assign(T, VecX::Zero(N));
  buf.returns.assign(T, VecX::Zero(N));
  VecX next_adv = VecX::Zero(N);
  VecX next_val = buf.bootstrap_value;
  for (int t = T - 1; t >= 0; --t) {
    const VecX mask = VecX::Ones(N) - buf.dones[t];
    const VecX delta = buf.rewards[t] +
                       gamma * next_val.cwiseProduct(mask) - buf.values[t];
    buf.advantages[t] = delta + gamma * lam * next_adv.cwiseProduct(mask);
    buf.returns[t] = buf.advantages[t] + buf.values[t];
    next_adv = buf.advantages[t];
    next_val = buf.values[t];
  }
}

void normalize_advantages(RolloutBuffer& buf) {
  const int total = buf.total();
  if (total == 0) return;
  double sum = 0.0;
  for (const VecX& a : buf.advantages) sum += a.sum();
  const double mean = sum / total;
  double var = 0.0;
  for (const VecX& a : buf.advantages)
    var += (a.array() - mean).square().sum();
  const double stddev = std::sqrt(var / total);
  for (VecX& a : buf.advantages)
    a = ((a.array() - mean) / (stddev + 1e-8)).matrix();
}

// ---------------------------------------------------------------------------
// PPO update

LossTerms ppo_loss_grad(Policy& policy, const MiniBatch& mb,
                        const TrainerConfig& cfg, bool with_grads) {
  const int m = static_cast<int>(mb.obs.rows());
  const int A = static_cast<int>(mb.act.cols());

  const MatX mean = policy.actor_mean(mb.obs);
  const VecX logp = policy.log_prob(mean, mb.act);
  const VecX val = policy.value(mb.obs);

  const VecX ratio = (logp - mb.old_logp).array().exp().matrix();
  const VecX clipped = ratio.array()
                           .max(1.0 - cfg.clip_eps)
                           .min(1.0 + cfg.clip_eps)
                           .matrix();
  const VecX surr1 = ratio.cwiseProduct(mb.adv);
  const VecX surr2 = clipped.cwiseProduct(mb.adv);

  const VecX vclip =
      mb.old_val +
      (val - mb.old_val).array().max(-cfg.clip_eps).min(cfg.clip_eps).matrix();
  const VecX vl1 = (val - mb.ret).array().square();
  const VecX vl2 = (vclip - mb.ret).array().square();

  LossTerms lt;
  lt.policy_loss = -surr1.cwiseMin(surr2).mean();
  lt.value_loss = vl1.cwiseMax(vl2).mean();
  lt.entropy = policy.entropy();
  lt.loss = lt.policy_loss + cfg.value_coef * lt.value_loss -
            cfg.entropy_coef * lt.entropy;
  lt.approx_kl = (mb.old_logp - logp).mean();
  lt.clip_fraction =
      static_cast<double>(((ratio.array() - 1.0).abs() > cfg.clip_eps).count()) /
      m;
  if (!with_grads) return lt;

  // Gradients. The surrogate routes through whichever branch the min picked;
  // a clipped branch has zero ratio-gradient.
  policy.zero_grad();
  const double inv_m = 1.0 / m;
  VecX coef = VecX::Zero(m);
  for (int k = 0; k < m; ++k)
    if (surr1[k] <= surr2[k]) coef[k] = -mb.adv[k] * ratio[k] * inv_m;

  const Eigen::ArrayXd inv_sigma2 = (-2.0 * policy.log_std().array()).exp();
  MatX diff = mb.act - mean;  // (a - mu)
  MatX dmean = diff;
  dmean.array().rowwise() *= inv_sigma2.transpose();
  dmean.array().colwise() *= coef.array();
  policy.actor().backward(dmean);

  // d logp / d log_std_j = z^2 - 1; the entropy bonus contributes a constant
  // -entropy_coef per component.
  MatX z2 = diff;
  z2.array().rowwise() *= inv_sigma2.transpose().sqrt();
  z2 = z2.array().square().matrix();
  for (int j = 0; j < A; ++j)
    policy.log_std_grad()[j] +=
        (z2.col(j).array() - 1.0).matrix().dot(coef) - cfg.entropy_coef;

  MatX dval(m, 1);
  for (int k = 0; k < m; ++k) {
    double g;
    if (vl1[k] >= vl2[k]) {
      g = 2.0 * (val[k] - mb.ret[k]);
    } else {
      const bool inside = std::abs(val[k] - mb.old_val[k]) < cfg.clip_eps;
      g = inside ? 2.0 * (vclip[k] - mb.ret[k]) : 0.0;
    }
    dval(k, 0) = cfg.value_coef * inv_m * g;
  }
  policy.critic().backward(dval);
  return lt;
}

UpdateStats update(Policy& policy, AdamState& opt, const RolloutBuffer& buf,
                   const TrainerConfig& cfg, Rng& rng) {
  const int T = buf.steps, N = buf.envs, B = T * N;
  const int D = static_cast<int>(buf.obs[0].cols());
  const int A = static_cast<int>(buf.actions[0].cols());

  // Flatten the buffer; advantages are normalized over the whole batch.
  MatX obs(B, D), act(B, A);
  VecX old_logp(B), adv(B), ret(B), old_val(B);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < N; ++i) {
      const int r = t * N + i;
      obs.row(r) = buf.obs[t].row(i);
      act.row(r) = buf.actions[t].row(i);
      old_logp[r] = buf.log_probs[t][i];
      adv[r] = buf.advantages[t][i];
      ret[r] = buf.returns[t][i];
      old_val[r] = buf.values[t][i];
    }
  const double adv_mean = adv.mean();
  const double adv_std =
      std::sqrt((adv.array() - adv_mean).square().sum() / B);
  adv = ((adv.array() - adv_mean) / (adv_std + 1e-8)).matrix();

  const VecX params_before = policy.flat_params();
  const AdamState opt_before = opt;

  std::vector<int> idx(B);
  std::iota(idx.begin(), idx.end(), 0);

  UpdateStats stats;
  int batches = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int i = B - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.uniform_index(static_cast<uint64_t>(i + 1))]);

    for (int mbi = 0; mbi < cfg.minibatches; ++mbi) {
      const int lo = mbi * B / cfg.minibatches;
      const int hi = (mbi + 1) * B / cfg.minibatches;
      const int m = hi - lo;
      if (m == 0) continue;

      MiniBatch mb;
      mb.obs.resize(m, D);
      mb.act.resize(m, A);
      mb.old_logp.resize(m);
      mb.adv.resize(m);
      mb.ret.resize(m);
      mb.old_val.resize(m);
      for (int k = 0; k < m; ++k) {
        const int r = idx[lo + k];
        mb.obs.row(k) = obs.row(r);
        mb.act.row(k) = act.row(r);
        mb.old_logp[k] = old_logp[r];
        mb.adv[k] = adv[r];
        mb.ret[k] = ret[r];
        mb.old_val[k] = old_val[r];
      }

      const LossTerms lt = ppo_loss_grad(policy, mb, cfg, true);
      if (!std::isfinite(lt.loss)) {
        policy.set_flat_params(params_before);
        opt = opt_before;
        throw NonFiniteLoss();
      }

      VecX grads = policy.flat_grads();
      const double gnorm = grads.norm();
      if (gnorm > cfg.max_grad_norm && gnorm > 0.0)
        grads *= cfg.max_grad_norm / gnorm;
      VecX p = policy.flat_params();
      opt.step(p, grads, cfg.lr);
      policy.set_flat_params(p);

      stats.policy_loss += lt.policy_loss;
      stats.value_loss += lt.value_loss;
      stats.entropy += lt.entropy;
      stats.approx_kl += lt.approx_kl;
      stats.clip_fraction += lt.clip_fraction;
      ++batches;
    }
  }
  if (batches > 0) {
    stats.policy_loss /= batches;
    stats.value_loss /= batches;
    stats.entropy /= batches;
    stats.approx_kl /= batches;
    stats.clip_fraction /= batches;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_policy(std::ostream& os, const Policy& policy,
                 const TrainerState* trainer) {
  const PolicySpec& s = policy.spec();
  os.write(kPolicyMagic, 8);
  put_u32(os, kPolicyVersion);
  put_u32(os, static_cast<uint32_t>(s.obs_dim));
  put_u32(os, static_cast<uint32_t>(s.act_dim));
  put_u32(os, static_cast<uint32_t>(s.hidden.size()));
  for (int h : s.hidden) put_u32(os, static_cast<uint32_t>(h));
  put_f64(os, s.action_scale);
  put_f64(os, s.wheel_action_scale);
  put_u32(os, static_cast<uint32_t>(s.wheel_joints));
  put_f64(os, s.init_log_std);
  const VecX p = policy.flat_params();
  put_u32(os, static_cast<uint32_t>(p.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) put_f64(os, p[i]);
  os.put(trainer ? 1 : 0);
  if (trainer) {
    put_u32(os, static_cast<uint32_t>(trainer->iteration));
    put_u64(os, trainer->rng_state);
    put_u64(os, static_cast<uint64_t>(trainer->adam.t));
    for (Eigen::Index i = 0; i < trainer->adam.m.size(); ++i)
      put_f64(os, trainer->adam.m[i]);
    for (Eigen::Index i = 0; i < trainer->adam.v.size(); ++i)
      put_f64(os, trainer->adam.v[i]);
    put_u32(os, static_cast<uint32_t>(trainer->env_rows.size()));
    for (int r : trainer->env_rows) put_u32(os, static_cast<uint32_t>(r));
  }
}

Policy load_policy(std::istream& is, TrainerState* trainer) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kPolicyMagic, 8) != 0)
    throw std::runtime_error("not a policy file");
  if (get_u32(is) != kPolicyVersion)
    throw std::runtime_error("unsupported policy file version");
  PolicySpec spec;
  spec.obs_dim = static_cast<int>(get_u32(is));
  spec.act_dim = static_cast<int>(get_u32(is));
  const uint32_t nh = get_u32(is);
  if (nh > 64) throw std::runtime_error("implausible hidden layer count");
  spec.hidden.resize(nh);
  for (uint32_t i = 0; i < nh; ++i)
    spec.hidden[i] = static_cast<int>(get_u32(is));
  spec.action_scale = get_f64(is);
  spec.wheel_action_scale = get_f64(is);
  spec.wheel_joints = static_cast<int>(get_u32(is));
  spec.init_log_std = get_f64(is);

  Rng dummy(0);
  Policy policy(spec, dummy);
  const uint32_t pc = get_u32(is);
  if (static_cast<int>(pc) != policy.param_count())
    throw std::runtime_error("parameter count mismatch in policy file");
  VecX p(pc);
  for (uint32_t i = 0; i < pc; ++i) p[i] = get_f64(is);
  policy.set_flat_params(p);

  const int has_trainer = is.get();
  if (has_trainer == 1 && trainer) {
    trainer->iteration = static_cast<int>(get_u32(is));
    trainer->rng_state = get_u64(is);
    trainer->adam.t = static_cast<int64_t>(get_u64(is));
    trainer->adam.m.resize(pc);
    trainer->adam.v.resize(pc);
    for (uint32_t i = 0; i < pc; ++i) trainer->adam.m[i] = get_f64(is);
    for (uint32_t i = 0; i < pc; ++i) trainer->adam.v[i] = get_f64(is);
    const uint32_t ne = get_u32(is);
    if (ne > 1u << 20) throw std::runtime_error("implausible env count");
    trainer->env_rows.resize(ne);
    for (uint32_t i = 0; i < ne; ++i)
      trainer->env_rows[i] = static_cast<int>(get_u32(is));
  } else if (has_trainer != 0 && has_trainer != 1) {
    throw std::runtime_error("policy file truncated");
  }
  return policy;
}

void save_policy_file(const std::string& path, const Policy& policy,
                      const TrainerState* trainer) {
  // Temp-then-rename: an interrupted save never clobbers the previous
  // checkpoint with a truncated file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + tmp);
    save_policy(os, policy, trainer);
    os.flush();
    if (!os) throw std::runtime_error("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

Policy load_policy_file(const std::string& path, TrainerState* trainer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return load_policy(is, trainer);
}

// ---------------------------------------------------------------------------
// Training loop

TrainRunStats train(VecEnv& env, Policy& policy, const TrainerConfig& cfg,
                    const TrainPaths& paths, const std::string& resume_from,
                    std::ostream* console) {
  Rng trainer_rng = Rng(cfg.seed).fork(3);
  AdamState opt;
  opt.init(policy.param_count());
  int start_iter = 0;

  if (!resume_from.empty()) {
    TrainerState ts;
    policy = load_policy_file(resume_from, &ts);
    if (ts.adam.m.size() == policy.param_count()) {
      opt = ts.adam;
    }
    start_iter = ts.iteration;
    trainer_rng.set_state(ts.rng_state);
    if (static_cast<int>(ts.env_rows.size()) == env.env_count()) {
      env.set_rows(ts.env_rows);
      env.reset_all();
    }
  }

  std::ofstream log;
  if (!paths.log_csv.empty()) {
    log.open(paths.log_csv,
             start_iter > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw std::runtime_error("cannot write " + paths.log_csv);
    if (start_iter == 0) {
      log << "iteration,mean_reward,mean_speed,tracking_error";
      for (int t = 0; t < kNumRewardTerms; ++t)
        log << ',' << kRewardTermNames[t];
      for (int r = 0; r < CurriculumGrid::kRows; ++r) log << ",row" << r;
      log << ",episodes,divergences,policy_loss,value_loss,entropy\n";
    }
  }

  TrainRunStats run;
  char buf[64];
  int degenerate_streak = 0;
  for (int iter = start_iter; iter < cfg.iterations; ++iter) {
    RolloutBuffer roll =
        collect_rollouts(env, policy, cfg.rollout_steps, trainer_rng,
                         cfg.gamma);
    gae(roll, cfg.gamma, cfg.gae_lambda);

    UpdateStats us;
    bool degenerate = false;
    try {
      us = update(policy, opt, roll, cfg, trainer_rng);
      degenerate_streak = 0;
    } catch (const NonFiniteLoss&) {
      degenerate = true;  // parameters were restored; skip this iteration
      // One blown update on fresh data can be shrugged off, but the restore
      // makes repeats deterministic-ish: three in a row means the
      // hyperparameters are broken, not the batch.
      if (++degenerate_streak >= 3) throw;
    }

    const VecEnv::LogBlock lb = env.drain_logs();
    const auto occupancy = env.row_occupancy();

    if (log.is_open()) {
      auto f = [&buf](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return std::string(buf);
      };
      log << iter << ',' << f(lb.mean_reward) << ',' << f(lb.mean_speed)
          << ',' << f(lb.mean_tracking_error);
      for (int t = 0; t < kNumRewardTerms; ++t)
        log << ',' << f(lb.term_means[t]);
      for (int r = 0; r < CurriculumGrid::kRows; ++r)
        log << ',' << occupancy[r];
      log << ',' << lb.episodes_ended << ',' << lb.divergences << ','
          << f(us.policy_loss) << ',' << f(us.value_loss) << ','
          << f(us.entropy) << '\n';
      log.flush();
    }
    if (console) {
      (*console) << "iter " << iter << "  reward " << lb.mean_reward
                 << "  speed " << lb.mean_speed << "  kl " << us.approx_kl
                 << (degenerate ? "  [non-finite loss, skipped]" : "")
                 << "\n";
      console->flush();
    }

    run.iterations_run = iter + 1;
    run.final_mean_reward = lb.mean_reward;
    run.final_mean_speed = lb.mean_speed;

    const bool last = iter + 1 == cfg.iterations;
    if (!paths.checkpoint_prefix.empty() &&
        (last || (iter + 1) % cfg.checkpoint_every == 0)) {
      TrainerState ts;
      ts.adam = opt;
      ts.iteration = iter + 1;
      ts.rng_state = trainer_rng.state();
      ts.env_rows = env.rows();
      const std::string path = paths.checkpoint_prefix + "_iter" +
                               std::to_string(iter + 1) + ".bin";
      save_policy_file(path, policy, &ts);
      run.last_checkpoint = path;
    }
  }
  return run;
}

}  // namespace ocl
