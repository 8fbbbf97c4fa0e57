#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "xdiff/dataset.hpp"
#include "xdiff/embodiment.hpp"

namespace xdiff {

/// Fixed world constants. Rates are the physical values reached at a
/// normalised action of +-1.
struct WorldConstants {
  double dt = 0.05;
  double max_speed = 1.0;
  double max_yaw_rate = 2.0;
  double max_arm_rate = 0.6;
  double max_wrist_rate = 2.0;
  double max_finger_rate = 4.0;
  double arm_offset = 0.2;
  double wrist_limit = 1.2;
  double wrist_tolerance = 0.15;
  double finger_open_radius = 0.2;
  double grip_margin = 0.05;
  double reach_margin = 0.1;
  double gripper_close_threshold = 0.8;
  int success_hold_steps = 10;
};

inline constexpr int kTaskCount = 5;
inline constexpr int kContextDim = kTaskCount + 3;
inline constexpr int kProprioDim = 8;

/// A pick-up variant: object size, required wrist pose, spawn region.
struct Task {
  int key = 0;
  double radius = 0.1;
  double pitch = 0.0;
  double roll = 0.0;
  double spawn_min = 1.0;
  double spawn_max = 1.5;
};

std::vector<Task> builtin_tasks();

struct ObjectState {
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  double radius = 0.1;
  bool grasped = false;
  int held_steps = 0;
  Eigen::Vector2d grasp_offset = Eigen::Vector2d::Zero();
};

struct WorldState {
  Eigen::Vector3d base_pose = Eigen::Vector3d::Zero();  // x, y, yaw
  double arm_extension = 0.0;
  Eigen::Vector2d wrist = Eigen::Vector2d::Zero();  // pitch, roll
  Eigen::VectorXd finger_angles;                    // one per finger channel
  ObjectState object;
  int task_key = 0;
};

/// Unified dims that drive fingers: every active dim of window 2 onwards.
std::vector<int> finger_channels(const EmbodimentSpec& spec,
                                 const UnifiedActionLayout& layout);

WorldState reset_world(const EmbodimentSpec& spec,
                       const UnifiedActionLayout& layout, const Task& task,
                       std::uint64_t seed);

Eigen::Vector2d effector_tip(const WorldState& state,
                             const WorldConstants& world = {});

/// World positions of the fingertips (two jaws for a single-channel gripper).
std::vector<Eigen::Vector2d> fingertips(const WorldState& state,
                                        const WorldConstants& world = {});

/// Deterministic kinematic update. Padded dims are never read.
WorldState step(const WorldState& state, const Eigen::VectorXd& unified_action,
                const EmbodimentSpec& spec, const UnifiedActionLayout& layout,
                const Task& task, const WorldConstants& world = {});

/// n_t = [task one-hot, object position in the base frame, object radius].
Eigen::VectorXd context_encoding(const WorldState& state,
                                 const WorldConstants& world = {});

/// p_t = [arm extension / reach, wrist pitch, wrist roll, mean, min and max
/// finger closure, grasped flag, hold progress].
Eigen::VectorXd proprio_encoding(const WorldState& state,
                                 const EmbodimentSpec& spec,
                                 const WorldConstants& world = {});

/// Staged pick-up controller: approach, reach and align, close, hold.
/// The approach style (turn-then-drive or strafe) is drawn from `seed`.
Eigen::VectorXd scripted_expert(const WorldState& state,
                                const EmbodimentSpec& spec,
                                const UnifiedActionLayout& layout,
                                const Task& task, std::uint64_t seed,
                                const WorldConstants& world = {});

enum class FailureClass { none, mobility, interaction };

struct EpisodeResult {
  bool success = false;
  FailureClass failure_class = FailureClass::none;
  int steps = 0;
  double min_effector_object_distance = 0.0;
};

struct Observation {
  Eigen::VectorXd context;
  Eigen::VectorXd proprio;
  int task_key = 0;
  const WorldState* state = nullptr;  // privileged; only scripted policies use it
};

using Policy =
    std::function<ActionChunk(const Observation& obs, std::uint64_t seed)>;

struct EvalOptions {
  int max_steps = 200;
  int replan_stride = 8;
};

struct EvalSummary {
  int episodes = 0;
  int successes = 0;
  int mobility = 0;
  int interaction = 0;
  std::vector<EpisodeResult> results;

  double success_rate() const {
    return episodes > 0 ? double(successes) / episodes : 0.0;
  }
};

/// Classifies a finished episode.
EpisodeResult classify_episode(bool success, int steps, double min_distance,
                               const EmbodimentSpec& spec,
                               const WorldConstants& world = {});

/// Episode i uses tasks[i % tasks.size()] and seed mix(seed, i).
EvalSummary evaluate(const Policy& policy, const EmbodimentSpec& spec,
                     const UnifiedActionLayout& layout,
                     const std::vector<Task>& tasks, int episodes,
                     std::uint64_t seed, const EvalOptions& options = {});

/// Chunk policy that rolls the scripted expert forward on a copy of the state.
Policy expert_policy(const EmbodimentSpec& spec,
                     const UnifiedActionLayout& layout,
                     const std::vector<Task>& tasks, int horizon);

/// Rolls out the expert once; returns the trajectory and whether it succeeded.
std::pair<Trajectory, bool> rollout_expert(const EmbodimentSpec& spec,
                                           const UnifiedActionLayout& layout,
                                           const Task& task, std::uint64_t seed,
                                           int max_steps = 200);

/// Successful expert episodes only; failures are re-rolled with fresh seeds.
/// Throws std::runtime_error after 50 failed attempts for one slot.
Dataset generate_dataset(const std::vector<Task>& tasks,
                         const std::vector<EmbodimentSpec>& embodiments,
                         const UnifiedActionLayout& layout, int trajs_per_pair,
                         std::uint64_t seed);

/// Replays recorded actions from reset; true when the episode succeeds.
bool replay_succeeds(const Trajectory& traj, const Dataset& dataset);

/// Positions of the two mutually most distant fingertips in the effector
/// frame, [x1, y1, x2, y2].
Eigen::Vector4d fingertip_features(const WorldState& state,
                                   const WorldConstants& world = {});

}  // namespace xdiff
