#pragma once

// On-policy locomotion training: a small dense actor-critic with manual
// backprop, generalized advantage estimation, a clipped-surrogate update, and
// terrain-curriculum bookkeeping. The network code is self-contained (affine
// + tanh layers, Adam) so gradients can be pinned against finite differences
// without pulling in an ML framework.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocl/rewards.hpp"
#include "ocl/rng.hpp"
#include "ocl/simcore.hpp"
#include "ocl/terrain.hpp"

namespace ocl {

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Dense network

/// Fully connected net with tanh on every hidden layer and a linear output.
/// forward() caches activations; backward() consumes the cache, accumulates
/// parameter gradients, and returns the input gradient.
class Mlp {
 public:
  struct Layer {
    MatX w;   // out x in
    VecX b;   // out
    MatX gw;  // accumulated gradients
    VecX gb;
  };

  Mlp() = default;
  /// dims = [input, hidden..., output]. Weights start uniform in
  /// +-1/sqrt(fan_in); the output layer is additionally scaled by out_scale
  /// (small values keep an actor's initial mean near zero).
  Mlp(const std::vector<int>& dims, Rng& rng, double out_scale = 1.0);

  /// Rows are samples.
  const MatX& forward(const MatX& x);
  /// dy matches the last forward() output; returns dL/dx.
  MatX backward(const MatX& dy);
  void zero_grad();

  const std::vector<int>& dims() const { return dims_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  int param_count() const;

 private:
  std::vector<int> dims_;
  std::vector<Layer> layers_;
  std::vector<MatX> acts_;  // acts_[i] = input to layer i; back() = output
};

// ---------------------------------------------------------------------------
// Policy

struct PolicySpec {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<int> hidden{256, 128, 64};
  double action_scale = 0.5;        // rad of joint offset per action unit
  double wheel_action_scale = 5.0;  // rad/s per action unit on wheel joints
  int wheel_joints = 0;             // trailing entries of the action vector
  double init_log_std = 0.0;        // exploration starts at sigma = 1
};

/// Diagonal-Gaussian actor plus a value head. The log-std is a free
/// parameter, independent of the observation.
class Policy {
 public:
  Policy() = default;
  Policy(const PolicySpec& spec, Rng& rng);

  const PolicySpec& spec() const { return spec_; }
  Mlp& actor() { return actor_; }
  Mlp& critic() { return critic_; }
  VecX& log_std() { return log_std_; }
  VecX& log_std_grad() { return log_std_grad_; }

  /// B x act_dim action means.
  const MatX& actor_mean(const MatX& obs) { return actor_.forward(obs); }
  /// B values.
  VecX value(const MatX& obs);

  MatX sample(const MatX& mean, Rng& rng) const;
  /// Row-wise Gaussian log density of `actions` under `mean` and log_std.
  VecX log_prob(const MatX& mean, const MatX& actions) const;
  /// Per-sample entropy (observation-independent for a diagonal Gaussian).
  double entropy() const;

  // Flat parameter order: actor layers (w row-major, then b), critic layers,
  // log_std. Used by Adam, checkpoints, and the finite-difference tests.
  int param_count() const;
  VecX flat_params() const;
  void set_flat_params(const VecX& p);
  VecX flat_grads() const;
  void zero_grad();

 private:
  PolicySpec spec_;
  Mlp actor_;
  Mlp critic_;
  VecX log_std_;
  VecX log_std_grad_;
};

/// Map a normalized policy action onto joint targets: position offsets from
/// the default stance for leg motors, velocity targets for trailing wheel
/// joints.
VecX action_to_target(const VecX& action, const VecX& defaults, double scale,
                      double wheel_scale, int wheel_joints);

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  VecX m, v;
  int64_t t = 0;

  void init(int n) {
    m = VecX::Zero(n);
    v = VecX::Zero(n);
    t = 0;
  }
  void step(VecX& params, const VecX& grads, double lr, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);
};

// ---------------------------------------------------------------------------
// Environments

struct VecEnvConfig {
  int env_count = 256;
  uint64_t seed = 1;
  int workers = 1;
  double action_scale = 0.5;
  double wheel_action_scale = 5.0;
  bool randomize_spawn_yaw = true;
  /// When set, every episode uses this command and spawns with yaw 0 instead
  /// of sampling; used for evaluation runs.
  std::optional<Command> fixed_command;
};

/// Episode summary used for curriculum decisions.
struct EpisodeResult {
  int row = 0;                     // difficulty row the episode ran on
  double progress = 0.0;           // peak displacement along the command, m
  double commanded_distance = 0.0; // |v_cmd| * episode duration, m
  bool exited_tile = false;        // crossed half a tile along the command
};

/// One curriculum step: graduate a row after walking out of the tile along
/// the command, demote after covering less than half the commanded distance.
int promote(const EpisodeResult& result,
            int max_row = CurriculumGrid::kRows - 1);

/// A batch of environments over one terrain, with command sampling, reward
/// evaluation, auto-reset, and curriculum promotion. Stepping is
/// deterministic for a fixed seed regardless of worker count.
class VecEnv {
 public:
  /// Flat/benchmark mode: all robots spawn at the world origin of `terrain`.
  VecEnv(const RobotModel& model, const Heightfield* terrain,
         const SimParams& sim_params, const RewardConfig& reward_cfg,
         const VecEnvConfig& cfg);
  /// Curriculum mode: robots spread over the grid columns, start at row 0,
  /// and move between rows on episode end. Borrowed pointer must outlive.
  VecEnv(const RobotModel& model, const Curriculum* curriculum,
         const SimParams& sim_params, const RewardConfig& reward_cfg,
         const VecEnvConfig& cfg);

  int env_count() const { return static_cast<int>(states_.size()); }
  int obs_dim() const { return sim_.observation_size(); }
  int act_dim() const { return sim_.joint_count(); }
  const Simulator& sim() const { return sim_; }
  const std::vector<SimState>& states() const { return states_; }
  const std::vector<Command>& commands() const { return commands_; }

  void reset_all();

  /// N x obs_dim observation matrix for the current states.
  MatX observations() const;

  struct StepResult {
    VecX rewards;             // clipped totals
    VecX dones;               // 1 when the episode ended this step
    std::vector<int> truncated_envs;  // subset of dones ended by the clock
    MatX truncated_obs;       // rows align with truncated_envs
  };

  /// Maps normalized actions to joint targets, steps every environment,
  /// scores the tick, and auto-resets finished episodes (with curriculum
  /// promotion when configured).
  StepResult step(const MatX& actions);

  /// Envs per difficulty row (row 0 holds everything in flat mode).
  std::array<int, CurriculumGrid::kRows> row_occupancy() const;

  /// Means accumulated since the last drain: per-term weighted rewards,
  /// total reward, speed along the command, tracking error, episode ends.
  struct LogBlock {
    std::array<double, kNumRewardTerms> term_means{};
    double mean_reward = 0.0;
    double mean_speed = 0.0;
    double mean_tracking_error = 0.0;
    int episodes_ended = 0;
    int divergences = 0;
  };
  LogBlock drain_logs();

 private:
  void reset_env(int i);
  void finish_episode(int i);
  Vec2 spawn_position(int i) const;

  RobotModel model_;
  const Curriculum* curriculum_ = nullptr;
  Simulator sim_;
  RewardConfig reward_cfg_;
  VecEnvConfig cfg_;
  std::vector<SimState> states_;
  std::vector<Command> commands_;
  std::vector<VecX> prev_actions_;  // normalized, zero after reset
  std::vector<int> rows_, cols_;    // curriculum assignment
  std::vector<Vec2> spawn_xy_;
  std::vector<double> spawn_yaw_;
  std::vector<double> peak_progress_;
  Rng reset_rng_, command_rng_;
  // log accumulators
  std::array<double, kNumRewardTerms> term_sums_{};
  double reward_sum_ = 0.0, speed_sum_ = 0.0, track_sum_ = 0.0;
  int64_t log_count_ = 0;
  int episodes_ended_ = 0, divergences_ = 0;

 public:
  // exposed for checkpoint/resume of curriculum state
  const std::vector<int>& rows() const { return rows_; }
  void set_rows(const std::vector<int>& rows);
};

// ---------------------------------------------------------------------------
// Rollouts, advantages, update

struct RolloutBuffer {
  int steps = 0, envs = 0;
  std::vector<MatX> obs;        // steps of N x obs_dim
  std::vector<MatX> actions;    // steps of N x act_dim
  std::vector<VecX> log_probs;  // steps of N
  std::vector<VecX> rewards;    // truncation bootstrap already folded in
  std::vector<VecX> values;
  std::vector<VecX> dones;      // 1.0 when the episode ended after the step
  VecX bootstrap_value;         // V(s) after the last step
  std::vector<VecX> advantages; // filled by gae(); raw (unnormalized)
  std::vector<VecX> returns;    // advantages + values

  int total() const { return steps * envs; }
};

/// Roll the policy for `steps` ticks across every environment. Commands are
/// sampled per episode by the env; truncated episodes get their final reward
/// bootstrapped with gamma times the value of the terminal observation.
RolloutBuffer collect_rollouts(VecEnv& envs, Policy& policy, int steps,
                               Rng& rng, double gamma = 0.99);

/// delta_t = r_t + gamma*V_{t+1}*(1-done) - V_t;
/// A_t = delta_t + gamma*lambda*(1-done)*A_{t+1}; returns = A + V.
void gae(RolloutBuffer& buf, double gamma, double lam);

/// In-place batch normalization of the advantages (zero mean, unit std).
void normalize_advantages(RolloutBuffer& buf);

struct TrainerConfig {
  int env_count = 256;
  int rollout_steps = 24;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double lr = 3e-4;
  int epochs = 5;
  int minibatches = 4;
  double entropy_coef = 0.01;
  double value_coef = 1.0;
  double max_grad_norm = 1.0;
  int iterations = 1000;
  uint64_t seed = 1;
  int workers = 1;
  int checkpoint_every = 100;
};

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss() : std::runtime_error("non-finite loss; update aborted") {}
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// One optimizer batch: rows across obs/act align with the entries of the
/// flat vectors.
struct MiniBatch {
  MatX obs, act;
  VecX old_logp, adv, ret, old_val;
};

struct LossTerms {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

/// Clipped-surrogate loss on one minibatch; when `with_grads` is set the
/// parameter gradients are (re)computed into the policy. This is the exact
/// code path update() optimizes, exposed so the analytic gradients can be
/// pinned against finite differences.
LossTerms ppo_loss_grad(Policy& policy, const MiniBatch& mb,
                        const TrainerConfig& cfg, bool with_grads);

/// Clipped-surrogate update over epochs x minibatches with entropy bonus,
/// clipped value loss, and global gradient-norm clipping. Throws
/// NonFiniteLoss (after restoring the pre-update parameters and optimizer
/// state) if any minibatch loss is non-finite.
UpdateStats update(Policy& policy, AdamState& opt, const RolloutBuffer& buf,
                   const TrainerConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoints & training loop

/// Versioned little-endian policy file; optionally carries trainer state
/// (Adam moments, iteration, rng, curriculum rows) so runs can resume.
struct TrainerState {
  AdamState adam;
  int iteration = 0;
  uint64_t rng_state = 0;
  std::vector<int> env_rows;
};

void save_policy(std::ostream& os, const Policy& policy,
                 const TrainerState* trainer = nullptr);
Policy load_policy(std::istream& is, TrainerState* trainer = nullptr);
void save_policy_file(const std::string& path, const Policy& policy,
                      const TrainerState* trainer = nullptr);
Policy load_policy_file(const std::string& path,
                        TrainerState* trainer = nullptr);

struct TrainPaths {
  std::string log_csv;            // empty = no log written
  std::string checkpoint_prefix;  // empty = no checkpoints written
};

struct TrainRunStats {
  int iterations_run = 0;
  double final_mean_reward = 0.0;
  double final_mean_speed = 0.0;
  std::string last_checkpoint;
};

/// collect -> gae -> update -> log, with periodic checkpoints. `resume_from`
/// restarts an interrupted run from a trainer-state checkpoint. `console`
/// (optional) receives one status line per iteration.
TrainRunStats train(VecEnv& env, Policy& policy, const TrainerConfig& cfg,
                    const TrainPaths& paths, const std::string& resume_from = "",
                    std::ostream* console = nullptr);

}  // namespace ocl
